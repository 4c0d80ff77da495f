"""Expression graphs over dense float64 arrays with reverse-mode differentiation.

Graphs are symbolic: leaves are named placeholders with fixed shapes, and
``evaluate`` binds leaf names to arrays. ``gradient`` builds *new* expression
graphs for the requested partial derivatives, so gradients can be
differentiated again. This closure under differentiation is what allows a
gradient-norm penalty (a function of first derivatives) to be optimised by
gradient descent.

All values are C-order ``numpy.float64`` arrays. Evaluation is deterministic:
the same graph with the same bindings produces bit-identical output.
"""

from __future__ import annotations

import itertools
import sys

import numpy as np

__all__ = [
    "GraphError",
    "Expr",
    "leaf",
    "const",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "shift",
    "slice_axis",
    "pad_axis",
    "concat",
    "broadcast_to",
    "reduce_sum",
    "reduce_mean",
    "square",
    "sqrt",
    "l2_norm",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "log",
    "clamp",
    "max_pool_segments",
    "affine",
    "pool_segment_bounds",
    "evaluate",
    "evaluate_many",
    "gradient",
    "CompiledGraph",
    "assert_finite",
]


class GraphError(Exception):
    """Shape mismatch, unbound leaf, or other graph construction/eval error."""


def _as_f64(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    # ascontiguousarray would promote 0-d scalars to 1-d; keep them 0-d
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


def assert_finite(name: str, arr: np.ndarray) -> None:
    """Raise GraphError if `arr` contains NaN or Inf; names the offender."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise GraphError(f"{name}: {bad} non-finite value(s) detected")


class Expr:
    """A node in an acyclic expression graph.

    Nodes are immutable after construction and carry a statically inferred
    shape, so mismatches surface at build time with the node's name attached.
    """

    __slots__ = ("op", "parents", "shape", "attrs", "label", "uid")
    _ids = itertools.count()

    def __init__(self, op, parents=(), shape=(), label=None, **attrs):
        self.op = op
        self.parents = tuple(parents)
        self.shape = tuple(int(s) for s in shape)
        self.attrs = attrs
        self.label = label
        self.uid = next(Expr._ids)

    @property
    def name(self) -> str:
        return self.label if self.label else f"{self.op}#{self.uid}"

    def __repr__(self):
        return f"Expr({self.name}, shape={self.shape})"

    # operator sugar; scalars are lifted to constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x):
    return x if isinstance(x, Expr) else const(x)


# ---------------------------------------------------------------------------
# node constructors


def leaf(name: str, shape) -> Expr:
    """named placeholder, bound at evaluation time"""
    return Expr("leaf", (), shape, label=name, leaf_name=name)


def const(value) -> Expr:
    arr = _as_f64(value)
    return Expr("const", (), arr.shape, value=arr)


def add(a: Expr, b: Expr) -> Expr:
    return Expr("add", (a, b), _bshape("add", a, b))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr("mul", (a, b), _bshape("mul", a, b))


def _bshape(opname, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise GraphError(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast "
            f"(operands {a.name}, {b.name})"
        ) from None


def scale(a: Expr, c: float) -> Expr:
    """multiply by a python scalar constant"""
    return Expr("scale", (a,), a.shape, c=float(c))


def neg(a: Expr) -> Expr:
    return scale(a, -1.0)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def matmul(a: Expr, b: Expr) -> Expr:
    """a @ b where b is a 2-d weight matrix and a has >= 2 dims."""
    if len(b.shape) != 2:
        raise GraphError(f"matmul: right operand {b.name} must be 2-d, got {b.shape}")
    if len(a.shape) < 2:
        raise GraphError(f"matmul: left operand {a.name} must have >=2 dims, got {a.shape}")
    if a.shape[-1] != b.shape[0]:
        raise GraphError(
            f"matmul: inner dims differ, {a.shape} x {b.shape} "
            f"(operands {a.name}, {b.name})"
        )
    return Expr("matmul", (a, b), a.shape[:-1] + (b.shape[1],))


def transpose(a: Expr, axes=None) -> Expr:
    if axes is None:
        axes = tuple(reversed(range(len(a.shape))))
    axes = tuple(int(x) for x in axes)
    return Expr("transpose", (a,), tuple(a.shape[i] for i in axes), axes=axes)


def reshape(a: Expr, shape) -> Expr:
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = -int(np.prod(shape))
        rest, rem = divmod(int(np.prod(a.shape, dtype=np.int64)), known)
        if rem:
            raise GraphError(f"reshape: cannot reshape {a.shape} to {shape} ({a.name})")
        shape = tuple(rest if s == -1 else s for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != int(np.prod(a.shape, dtype=np.int64)):
        raise GraphError(f"reshape: size mismatch {a.shape} -> {shape} ({a.name})")
    return Expr("reshape", (a,), shape)


def shift(a: Expr, steps: int, axis: int = -2) -> Expr:
    """Shift along `axis` by `steps`, filling with zeros.

    steps > 0 moves values toward higher indices (out[t] = a[t-steps]),
    which is the "look `steps` into the past" building block of causal
    convolution.
    """
    axis = axis % len(a.shape)
    if steps == 0:
        return a
    return Expr("shift", (a,), a.shape, steps=int(steps), axis=axis)


def slice_axis(a: Expr, axis: int, start: int, stop: int) -> Expr:
    axis = axis % len(a.shape)
    n = a.shape[axis]
    if not (0 <= start <= stop <= n):
        raise GraphError(f"slice: [{start}:{stop}] out of range for axis {axis} of {a.shape} ({a.name})")
    out = list(a.shape)
    out[axis] = stop - start
    return Expr("slice", (a,), out, axis=axis, start=start, stop=stop)


def pad_axis(a: Expr, axis: int, before: int, after: int) -> Expr:
    axis = axis % len(a.shape)
    out = list(a.shape)
    out[axis] += before + after
    return Expr("pad", (a,), out, axis=axis, before=int(before), after=int(after))


def concat(parts, axis: int) -> Expr:
    parts = list(parts)
    if not parts:
        raise GraphError("concat: no operands")
    axis = axis % len(parts[0].shape)
    base = list(parts[0].shape)
    total = 0
    for p in parts:
        if len(p.shape) != len(base):
            raise GraphError(f"concat: rank mismatch ({p.name})")
        for i, (x, y) in enumerate(zip(p.shape, base)):
            if i != axis and x != y:
                raise GraphError(f"concat: shape mismatch on axis {i} ({p.name})")
        total += p.shape[axis]
    base[axis] = total
    return Expr("concat", parts, base, axis=axis)


def broadcast_to(a: Expr, shape) -> Expr:
    shape = tuple(int(s) for s in shape)
    if np.broadcast_shapes(a.shape, shape) != shape:
        raise GraphError(f"broadcast: {a.shape} does not broadcast to {shape} ({a.name})")
    return Expr("broadcast", (a,), shape)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce_sum(a: Expr, axis=None, keepdims: bool = False) -> Expr:
    axis = _norm_axis(axis, len(a.shape))
    if axis is None:
        out = (1,) * len(a.shape) if keepdims else ()
    else:
        out = tuple(
            1 if i in axis else s
            for i, s in enumerate(a.shape)
            if keepdims or i not in axis
        )
    return Expr("reduce_sum", (a,), out, axis=axis, keepdims=keepdims)


def reduce_mean(a: Expr, axis=None, keepdims: bool = False) -> Expr:
    naxis = _norm_axis(axis, len(a.shape))
    if naxis is None:
        n = int(np.prod(a.shape, dtype=np.int64))
    else:
        n = int(np.prod([a.shape[i] for i in naxis], dtype=np.int64))
    if n == 0:
        raise GraphError(f"reduce_mean over empty axis of {a.shape} ({a.name})")
    return scale(reduce_sum(a, axis, keepdims), 1.0 / n)


def square(a: Expr) -> Expr:
    return Expr("square", (a,), a.shape)


def sqrt(a: Expr) -> Expr:
    """Elementwise sqrt; its gradient is defined as 0 where the input is 0."""
    return Expr("sqrt", (a,), a.shape)


def _safe_recip(a: Expr) -> Expr:
    # 1/x for x > 0, 0 elsewhere; keeps the norm gradient finite at zero
    return Expr("safe_recip", (a,), a.shape)


def l2_norm(a: Expr, axis=None, keepdims: bool = False) -> Expr:
    """Euclidean norm over `axis`; gradient at the zero vector is zero."""
    return sqrt(reduce_sum(square(a), axis, keepdims))


def leaky_relu(a: Expr, slope: float = 0.01) -> Expr:
    """max(x, slope*x); the derivative at exactly 0 is the positive-side 1."""
    return Expr("leaky_relu", (a,), a.shape, slope=float(slope))


def _lrelu_mask(a: Expr, slope: float) -> Expr:
    return Expr("lrelu_mask", (a,), a.shape, slope=float(slope))


def tanh(a: Expr) -> Expr:
    return Expr("tanh", (a,), a.shape)


def sigmoid(a: Expr) -> Expr:
    return Expr("sigmoid", (a,), a.shape)


def log(a: Expr) -> Expr:
    return Expr("log", (a,), a.shape)


def clamp(a: Expr, lo: float, hi: float) -> Expr:
    return Expr("clamp", (a,), a.shape, lo=float(lo), hi=float(hi))


def _clamp_mask(a: Expr, lo: float, hi: float) -> Expr:
    return Expr("clamp_mask", (a,), a.shape, lo=float(lo), hi=float(hi))


def pool_segment_bounds(length: int, bins: int):
    """Contiguous near-equal segments: start ⌊i·L/B⌋, end ⌈(i+1)·L/B⌉."""
    return [
        (int(np.floor(i * length / bins)), int(np.ceil((i + 1) * length / bins)))
        for i in range(bins)
    ]


def max_pool_segments(a: Expr, bins: int) -> Expr:
    """Max over `bins` contiguous segments of the last axis."""
    length = a.shape[-1]
    if length < bins:
        raise GraphError(
            f"max_pool_segments: input length {length} < {bins} bins ({a.name})"
        )
    out = a.shape[:-1] + (bins,)
    return Expr("max_pool", (a,), out, bins=int(bins), bounds=pool_segment_bounds(length, bins))


def _mps_scatter(x: Expr, g: Expr, bins: int, bounds) -> Expr:
    # scatter g (shape ...,bins) into argmax positions of x (shape ...,L)
    return Expr("mps_scatter", (x, g), x.shape, bins=bins, bounds=bounds)


def _mps_select(x: Expr, h: Expr, bins: int, bounds) -> Expr:
    # gather h (shape of x) at argmax positions of x -> (..., bins)
    return Expr("mps_select", (x, h), x.shape[:-1] + (bins,), bins=bins, bounds=bounds)


def affine(x: Expr, w: Expr, b: Expr) -> Expr:
    """w-weighted linear map plus bias: x @ w + b."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# evaluation


def _eval_shift(x, steps, axis, out=None):
    # empty + targeted zero fill instead of zeros_like: half the memory traffic
    if out is None:
        out = np.empty(x.shape, dtype=np.float64)
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    pad = [slice(None)] * x.ndim
    if steps > 0:
        dst[axis] = slice(steps, None)
        src[axis] = slice(0, -steps)
        pad[axis] = slice(0, steps)
    else:
        dst[axis] = slice(0, steps)
        src[axis] = slice(-steps, None)
        pad[axis] = slice(steps, None)
    out[tuple(pad)] = 0.0
    out[tuple(dst)] = x[tuple(src)]
    return out


def _eval_max_pool(x, bounds):
    out = np.empty(x.shape[:-1] + (len(bounds),), dtype=np.float64)
    for i, (s, e) in enumerate(bounds):
        out[..., i] = x[..., s:e].max(axis=-1)
    return out


def _segment_argmax(x, s, e):
    return s + np.argmax(x[..., s:e], axis=-1)


def _eval_mps_scatter(x, g, bounds):
    out = np.zeros_like(x)
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = g.reshape(-1, g.shape[-1])
    flat_o = out.reshape(-1, out.shape[-1])
    rows = np.arange(flat_x.shape[0])
    for i, (s, e) in enumerate(bounds):
        idx = _segment_argmax(flat_x, s, e)
        np.add.at(flat_o, (rows, idx), flat_g[:, i])
    return out


def _eval_mps_select(x, h, bounds):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_h = h.reshape(-1, h.shape[-1])
    out = np.empty((flat_x.shape[0], len(bounds)), dtype=np.float64)
    rows = np.arange(flat_x.shape[0])
    for i, (s, e) in enumerate(bounds):
        idx = _segment_argmax(flat_x, s, e)
        out[:, i] = flat_h[rows, idx]
    return out


def _take(pool, shape):
    """Pop a dead f64 buffer of this exact shape, or None to allocate fresh.

    All pooled buffers are C-contiguous float64 arrays produced by earlier
    nodes of the same run whose last consumer has finished (ufuncs accept
    out=None, so callers can pass the result straight through)."""
    if pool is None:
        return None
    lst = pool.get(shape)
    return lst.pop() if lst else None


def _eval_node(node: Expr, vals, bindings, pool=None):
    op = node.op
    a = node.attrs
    if op == "leaf":
        name = a["leaf_name"]
        if name not in bindings:
            raise GraphError(f"unbound leaf '{name}'")
        v = bindings[name]
        if v.shape != node.shape:
            raise GraphError(
                f"leaf '{name}': bound value has shape {v.shape}, declared {node.shape}"
            )
        return v
    if op == "const":
        return a["value"]
    p = [vals[q.uid] for q in node.parents]
    if op == "add":
        return np.add(p[0], p[1], out=_take(pool, node.shape))
    if op == "mul":
        return np.multiply(p[0], p[1], out=_take(pool, node.shape))
    if op == "scale":
        return np.multiply(p[0], a["c"], out=_take(pool, node.shape))
    if op == "matmul":
        x, w = p
        out = _take(pool, node.shape)
        if x.ndim > 2:
            flat = x.reshape(-1, x.shape[-1])
            if out is None:
                return (flat @ w).reshape(node.shape)
            np.matmul(flat, w, out=out.reshape(-1, w.shape[1]))
            return out
        return np.matmul(x, w, out=out)
    if op == "transpose":
        # view, not copy: matmul consumes strided operands natively
        return np.transpose(p[0], a["axes"])
    if op == "reshape":
        return p[0].reshape(node.shape)
    if op == "shift":
        return _eval_shift(p[0], a["steps"], a["axis"], _take(pool, node.shape))
    if op == "slice":
        sl = [slice(None)] * len(node.parents[0].shape)
        sl[a["axis"]] = slice(a["start"], a["stop"])
        return p[0][tuple(sl)]
    if op == "pad":
        x = p[0]
        axis, before = a["axis"], a["before"]
        out = _take(pool, node.shape)
        if out is None:
            out = np.zeros(node.shape, dtype=np.float64)
        else:
            out.fill(0.0)
        sl = [slice(None)] * len(node.shape)
        sl[axis] = slice(before, before + x.shape[axis])
        out[tuple(sl)] = x
        return out
    if op == "concat":
        return np.concatenate(p, axis=a["axis"], out=_take(pool, node.shape))
    if op == "broadcast":
        out = _take(pool, node.shape)
        if out is None:
            return np.ascontiguousarray(np.broadcast_to(p[0], node.shape))
        np.copyto(out, p[0])
        return out
    if op == "reduce_sum":
        return np.sum(p[0], axis=a["axis"], keepdims=a["keepdims"])
    if op == "square":
        return np.multiply(p[0], p[0], out=_take(pool, node.shape))
    if op == "sqrt":
        return np.sqrt(p[0], out=_take(pool, node.shape))
    if op == "safe_recip":
        x = p[0]
        out = np.zeros_like(x)
        np.divide(1.0, x, out=out, where=x > 0)
        return out
    if op == "leaky_relu":
        x, slope = p[0], a["slope"]
        if 0.0 <= slope <= 1.0:
            # max(x, slope*x) equals leaky relu for slope in [0, 1]
            tmp = np.multiply(x, slope, out=_take(pool, node.shape))
            return np.maximum(x, tmp, out=tmp)
        return np.where(x >= 0, x, slope * x)
    if op == "lrelu_mask":
        return np.where(p[0] >= 0, 1.0, a["slope"])
    if op == "tanh":
        return np.tanh(p[0], out=_take(pool, node.shape))
    if op == "sigmoid":
        x = p[0]
        out = np.multiply(x, 0.5, out=_take(pool, node.shape))
        np.tanh(out, out=out)
        out += 1.0
        out *= 0.5
        return out
    if op == "log":
        return np.log(p[0], out=_take(pool, node.shape))
    if op == "clamp":
        return np.clip(p[0], a["lo"], a["hi"], out=_take(pool, node.shape))
    if op == "clamp_mask":
        x = p[0]
        return ((x >= a["lo"]) & (x <= a["hi"])).astype(np.float64)
    if op == "max_pool":
        return _eval_max_pool(p[0], a["bounds"])
    if op == "mps_scatter":
        return _eval_mps_scatter(p[0], p[1], a["bounds"])
    if op == "mps_select":
        return _eval_mps_select(p[0], p[1], a["bounds"])
    raise GraphError(f"unknown op '{op}' at node {node.name}")


def _topo(roots):
    order = []
    seen = set()
    stack = [(r, False) for r in reversed(roots)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for parent in node.parents:
            if parent.uid not in seen:
                stack.append((parent, False))
    return order


class CompiledGraph:
    """Topologically sorted multi-root graph, reusable across bindings.

    Caching the order matters in training loops where the same graph is
    evaluated thousands of times with fresh leaf values.
    """

    def __init__(self, roots):
        self.roots = list(roots)
        self.order = _topo(self.roots)
        self.leaf_names = sorted(
            {n.attrs["leaf_name"] for n in self.order if n.op == "leaf"}
        )
        # consumer counts so run() can free intermediates as soon as their
        # last consumer has evaluated; without this, wide training graphs
        # hold every layer's activations alive at once
        self._uses = {n.uid: 0 for n in self.order}
        for n in self.order:
            for q in n.parents:
                self._uses[q.uid] += 1
        for r in self.roots:
            self._uses[r.uid] += 1

    def run(self, bindings: dict):
        bound = {k: _as_f64(v) for k, v in bindings.items()}
        vals = {}
        left = dict(self._uses)
        pool: dict = {}  # shape -> dead buffers, reused as ufunc outputs
        for node in self.order:
            try:
                out = _eval_node(node, vals, bound, pool)
            except GraphError:
                raise
            except Exception as exc:
                raise GraphError(f"evaluating {node.name}: {exc}") from exc
            vals[node.uid] = out
            for q in node.parents:
                left[q.uid] -= 1
                if left[q.uid] == 0:
                    dead = vals.pop(q.uid)
                    if (
                        q.op not in ("leaf", "const")
                        and dead is not out
                        and type(dead) is np.ndarray  # not a 0-d numpy scalar
                        and dead.dtype == np.float64
                        and dead.flags.owndata
                        and dead.flags.c_contiguous
                        # refcount 2 = `dead` + getrefcount's argument: no
                        # view or caller still sees this buffer
                        and sys.getrefcount(dead) == 2
                    ):
                        pool.setdefault(dead.shape, []).append(dead)
        return [vals[r.uid] for r in self.roots]


def evaluate(expr: Expr, bindings: dict, check_finite: bool = False) -> np.ndarray:
    """Evaluate one expression at the given leaf bindings."""
    out = CompiledGraph([expr]).run(bindings)[0]
    if check_finite:
        assert_finite(expr.name, out)
    return out


def evaluate_many(exprs, bindings: dict):
    """Evaluate several roots in a single pass, sharing all common subgraphs."""
    return CompiledGraph(exprs).run(bindings)


# ---------------------------------------------------------------------------
# differentiation


def _unbroadcast(g: Expr, shape) -> Expr:
    """Reduce an adjoint back to the shape of a broadcast operand."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = len(g.shape) - len(shape)
    if extra:
        g = reduce_sum(g, axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1
    )
    if axes:
        g = reduce_sum(g, axis=axes, keepdims=True)
    return g


def _vjp(node: Expr, g: Expr):
    """Adjoint contributions for each parent of `node`, given root adjoint g.

    Returns a list aligned with node.parents; None marks a parent through
    which no gradient flows (piecewise-constant masks, argmax selections).
    """
    op = node.op
    a = node.attrs
    p = node.parents
    if op == "add":
        return [_unbroadcast(g, p[0].shape), _unbroadcast(g, p[1].shape)]
    if op == "mul":
        return [
            _unbroadcast(mul(g, p[1]), p[0].shape),
            _unbroadcast(mul(g, p[0]), p[1].shape),
        ]
    if op == "scale":
        return [scale(g, a["c"])]
    if op == "matmul":
        x, w = p
        gx = matmul(g, transpose(w))
        if len(x.shape) > 2:
            k, m = w.shape
            xf = reshape(x, (-1, k))
            gf = reshape(g, (-1, m))
            gw = matmul(transpose(xf), gf)
        else:
            gw = matmul(transpose(x), g)
        return [gx, gw]
    if op == "transpose":
        inv = tuple(np.argsort(a["axes"]))
        return [transpose(g, inv)]
    if op == "reshape":
        return [reshape(g, p[0].shape)]
    if op == "shift":
        return [shift(g, -a["steps"], a["axis"])]
    if op == "slice":
        n = p[0].shape[a["axis"]]
        return [pad_axis(g, a["axis"], a["start"], n - a["stop"])]
    if op == "pad":
        n = node.shape[a["axis"]]
        return [slice_axis(g, a["axis"], a["before"], n - a["after"])]
    if op == "concat":
        outs = []
        pos = 0
        for part in p:
            w = part.shape[a["axis"]]
            outs.append(slice_axis(g, a["axis"], pos, pos + w))
            pos += w
        return outs
    if op == "broadcast":
        return [_unbroadcast(g, p[0].shape)]
    if op == "reduce_sum":
        src = p[0]
        if a["axis"] is None:
            kept = (1,) * len(src.shape)
        elif a["keepdims"]:
            kept = node.shape
        else:
            kept = tuple(
                1 if i in a["axis"] else s for i, s in enumerate(src.shape)
            )
        return [broadcast_to(reshape(g, kept), src.shape)]
    if op == "square":
        return [mul(g, scale(p[0], 2.0))]
    if op == "sqrt":
        # zero-safe: derivative forced to 0 where the input is 0
        return [mul(g, scale(_safe_recip(node), 0.5))]
    if op == "safe_recip":
        return [scale(mul(g, square(node)), -1.0)]
    if op == "leaky_relu":
        return [mul(g, _lrelu_mask(p[0], a["slope"]))]
    if op == "lrelu_mask":
        return [None]
    if op == "tanh":
        return [mul(g, sub(const(1.0), square(node)))]
    if op == "sigmoid":
        return [mul(g, mul(node, sub(const(1.0), node)))]
    if op == "log":
        return [mul(g, _safe_recip(p[0]))]
    if op == "clamp":
        return [mul(g, _clamp_mask(p[0], a["lo"], a["hi"]))]
    if op == "clamp_mask":
        return [None]
    if op == "max_pool":
        return [_mps_scatter(p[0], g, a["bins"], a["bounds"])]
    if op == "mps_scatter":
        # d/dx treated as 0 (argmax positions held fixed); d/dg gathers back
        return [None, _mps_select(p[0], g, a["bins"], a["bounds"])]
    if op == "mps_select":
        return [None, _mps_scatter(p[0], g, a["bins"], a["bounds"])]
    raise GraphError(f"no derivative rule for op '{op}' at node {node.name}")


def gradient(scalar_expr: Expr, wrt) -> list[Expr]:
    """Partial derivatives of a scalar expression with respect to named leaves.

    Returns one expression per name in `wrt`. The results are ordinary
    graphs over the same leaves and can be evaluated or differentiated
    again. A name that does not occur in the graph yields a scalar zero
    constant (not an error).
    """
    if scalar_expr.shape != ():
        raise GraphError(
            f"gradient root {scalar_expr.name} must be scalar, has shape {scalar_expr.shape}"
        )
    order = _topo([scalar_expr])
    adjoint: dict[int, Expr] = {scalar_expr.uid: const(1.0)}
    for node in reversed(order):
        g = adjoint.get(node.uid)
        if g is None or not node.parents:
            continue
        for parent, contrib in zip(node.parents, _vjp(node, g)):
            if contrib is None:
                continue
            prev = adjoint.get(parent.uid)
            adjoint[parent.uid] = contrib if prev is None else add(prev, contrib)

    by_name: dict[str, Expr] = {}
    for node in order:
        if node.op != "leaf":
            continue
        g = adjoint.get(node.uid)
        if g is None:
            g = const(np.zeros(node.shape))
        name = node.attrs["leaf_name"]
        prev = by_name.get(name)
        by_name[name] = g if prev is None else add(prev, g)

    return [by_name.get(name, const(0.0)) for name in wrt]
