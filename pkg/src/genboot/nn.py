"""Network building blocks on top of the expression-graph engine.

Layers here are graph *builders*: they take expressions in, return
expressions out, and leave parameter storage to plain dicts of numpy arrays
keyed by leaf name. Sequences use the (batch, time, channels) layout.

Also provides Adam, N(0, sd) initialisation, and a small binary checkpoint
format (magic + JSON manifest + raw little-endian float64 blocks).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

CHECKPOINT_MAGIC = b"GBCKPT01"


# ---------------------------------------------------------------------------
# layers


def conv_param_shapes(name: str, cin: int, cout: int, kernel: int = 2) -> dict:
    """Leaf shapes for one causal conv layer.

    The weight stacks the kernel taps row-wise: rows [0, cin) act on the
    current time step, rows [cin, 2*cin) on the step `dilation` back, etc.
    """
    return {f"{name}_w": (kernel * cin, cout), f"{name}_b": (cout,)}


def dense_param_shapes(name: str, cin: int, cout: int) -> dict:
    return {f"{name}_w": (cin, cout), f"{name}_b": (cout,)}


def causal_dilated_conv(x: T.Expr, w: T.Expr, b: T.Expr, dilation: int, kernel: int = 2) -> T.Expr:
    """Causal convolution along the time axis with the given dilation.

    out[:, t] depends on x[:, t - j*dilation] for j in [0, kernel); steps
    before the start of the sequence contribute zero (left zero padding).
    """
    if len(x.shape) != 3:
        raise T.GraphError(f"conv input must be (batch, time, channels), got {x.shape}")
    cin = x.shape[2]
    if w.shape[0] != kernel * cin:
        raise T.GraphError(
            f"conv weight {w.name}: expected {kernel * cin} rows for kernel {kernel} "
            f"x {cin} channels, got {w.shape}"
        )
    # One matmul per tap against the matching row block of w, summed. This is
    # the same contraction as concatenating the shifted taps along channels
    # and multiplying once, without materialising the concatenated copy.
    # Because rows shifted in are zero and the product is linear, the shift
    # commutes with the matmul; apply it on whichever side is narrower.
    cout = w.shape[1]
    acc = None
    for j in range(kernel):
        w_j = w if kernel == 1 else T.slice_axis(w, 0, j * cin, (j + 1) * cin)
        steps = j * dilation
        if cout < cin:
            term = T.shift(T.matmul(x, w_j), steps, axis=1)
        else:
            term = T.matmul(T.shift(x, steps, axis=1), w_j)
        acc = term if acc is None else T.add(acc, term)
    return T.add(acc, b)


def adaptive_max_pool(x: T.Expr, bins: int) -> T.Expr:
    """Max over `bins` contiguous segments of the last axis (output size fixed)."""
    return T.max_pool_segments(x, bins)


def dense(x: T.Expr, w: T.Expr, b: T.Expr) -> T.Expr:
    return T.affine(x, w, b)


# ---------------------------------------------------------------------------
# parameters


def init_params(shapes: dict, rng: np.random.Generator, weight_sd: float = 0.02) -> dict:
    """Draw weights from N(0, weight_sd^2); biases (names ending '_b') are zero.

    Draws happen in sorted name order so the result depends only on the rng
    state, not on dict insertion order.
    """
    params = {}
    for name in sorted(shapes):
        shape = tuple(shapes[name])
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            params[name] = rng.normal(0.0, weight_sd, size=shape)
    return params


def count_params(shapes: dict) -> int:
    return int(sum(np.prod(s, dtype=np.int64) for s in shapes.values()))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.9,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on `params`.

    Raises GraphError naming the parameter if its gradient is non-finite,
    so a diverging run fails loudly instead of silently poisoning weights.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in sorted(params):
        g = grads[name]
        T.assert_finite(f"gradient of {name} (adam step {t})", g)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    """Write params (and a JSON-able meta dict) to a binary checkpoint.

    Layout: 8-byte magic, uint64 little-endian manifest length, UTF-8 JSON
    manifest, then each tensor's C-order float64 little-endian bytes in
    manifest order. Tensors are listed sorted by name.
    """
    names = sorted(params)
    manifest = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            arr = np.ascontiguousarray(params[n], dtype=np.float64)
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, meta). Validates magic and sizes."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        params = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape, dtype=np.int64))
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated tensor '{entry['name']}'")
            params[entry["name"]] = (
                np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            )
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after last tensor")
    return params, manifest["meta"]
