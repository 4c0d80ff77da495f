"""Gradient checks for the expression-graph engine.

Every differentiable op is compared against central finite differences on
randomly drawn inputs; ops with kinks (leaky_relu, clamp, max pooling) are
checked at points bounded away from the kink. Second derivatives are checked
against closed forms, since that is the property the gradient-penalty loss
leans on.
"""

import numpy as np
import pytest

from genboot import tensor as T


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_grads(expr, bindings, wrt=None, rtol=1e-5, h=1e-5):
    """Compare autodiff gradients of `expr` against finite differences."""
    if wrt is None:
        wrt = sorted(bindings)
    grads = T.gradient(expr, wrt)
    for name, gexpr in zip(wrt, grads):
        ana = T.evaluate(gexpr, bindings)
        x0 = np.asarray(bindings[name], dtype=np.float64)

        def f(x, name=name):
            b = dict(bindings)
            b[name] = x
            return float(T.evaluate(expr, b))

        num = fd_grad(f, x0, h=h)
        err = np.abs(ana - num)
        scale = np.maximum(1.0, np.maximum(np.abs(ana), np.abs(num)))
        assert np.all(err <= rtol * scale), (
            f"gradient wrt {name}: max rel err {np.max(err / scale):.3e}"
        )


def test_evaluate_basic_arithmetic():
    x = T.leaf("x", (3,))
    y = T.leaf("y", (3,))
    out = T.evaluate(x * y + T.scale(x, 2.0), {"x": [1, 2, 3], "y": [4, 5, 6]})
    np.testing.assert_allclose(out, [6, 14, 24])


def test_square_gradient_trivial():
    # d/dx sum(x^2) = 2x
    x = T.leaf("x", (3,))
    (g,) = T.gradient(T.reduce_sum(T.square(x)), ["x"])
    np.testing.assert_allclose(T.evaluate(g, {"x": [1.0, 2.0, 3.0]}), [2.0, 4.0, 6.0])


def test_unbound_leaf_and_shape_errors_name_the_node():
    x = T.leaf("x", (3,))
    with pytest.raises(T.GraphError, match="unbound leaf 'x'"):
        T.evaluate(T.square(x), {})
    with pytest.raises(T.GraphError, match="leaf 'x'"):
        T.evaluate(T.square(x), {"x": np.zeros((4,))})
    with pytest.raises(T.GraphError, match="matmul"):
        T.matmul(T.leaf("a", (2, 3)), T.leaf("b", (4, 5)))
    with pytest.raises(T.GraphError, match="do not broadcast"):
        T.add(T.leaf("a", (2, 3)), T.leaf("b", (4,)))


def test_gradient_requires_scalar_root():
    x = T.leaf("x", (3,))
    with pytest.raises(T.GraphError, match="scalar"):
        T.gradient(T.square(x), ["x"])


def test_gradient_of_absent_leaf_is_zero():
    x = T.leaf("x", (2,))
    g_x, g_w = T.gradient(T.reduce_sum(x), ["x", "w"])
    np.testing.assert_allclose(T.evaluate(g_x, {"x": [1.0, 1.0]}), [1.0, 1.0])
    assert float(T.evaluate(g_w, {"x": [1.0, 1.0]})) == 0.0


def test_grad_arithmetic_and_broadcast():
    rng = np.random.default_rng(11)
    x = T.leaf("x", (2, 3))
    b = T.leaf("b", (3,))
    expr = T.reduce_sum(T.square(x * b + x) + T.scale(b, 0.5))
    check_grads(expr, {"x": rng.normal(size=(2, 3)), "b": rng.normal(size=3)})


def test_grad_matmul_2d_and_batched():
    rng = np.random.default_rng(12)
    x = T.leaf("x", (4, 3))
    w = T.leaf("w", (3, 2))
    check_grads(
        T.reduce_sum(T.square(T.matmul(x, w))),
        {"x": rng.normal(size=(4, 3)), "w": rng.normal(size=(3, 2))},
    )
    # >2-d left operand: (batch, time, chan) @ (chan, filt)
    x3 = T.leaf("x", (2, 5, 3))
    check_grads(
        T.reduce_sum(T.tanh(T.matmul(x3, w))),
        {"x": rng.normal(size=(2, 5, 3)), "w": rng.normal(size=(3, 2))},
    )


def test_grad_structural_ops():
    rng = np.random.default_rng(13)
    x = T.leaf("x", (2, 4, 3))
    moved = T.shift(x, 2, axis=1)
    sliced = T.slice_axis(x, 1, 1, 3)
    padded = T.pad_axis(sliced, 1, 1, 1)
    cat = T.concat([T.transpose(x, (0, 2, 1)), T.reshape(x, (2, 3, 4))], axis=2)
    expr = (
        T.reduce_sum(T.square(moved))
        + T.reduce_sum(T.square(padded))
        + T.reduce_sum(T.tanh(cat))
    )
    check_grads(expr, {"x": rng.normal(size=(2, 4, 3))})


def test_shift_semantics():
    x = T.leaf("x", (1, 4, 1))
    v = np.arange(1.0, 5.0).reshape(1, 4, 1)
    out = T.evaluate(T.shift(x, 1, axis=1), {"x": v})
    np.testing.assert_allclose(out.ravel(), [0.0, 1.0, 2.0, 3.0])
    out = T.evaluate(T.shift(x, -2, axis=1), {"x": v})
    np.testing.assert_allclose(out.ravel(), [3.0, 4.0, 0.0, 0.0])


def test_grad_reductions_and_mean():
    rng = np.random.default_rng(14)
    x = T.leaf("x", (3, 4))
    expr = T.reduce_sum(T.square(T.reduce_mean(x, axis=1))) + T.reduce_mean(
        T.square(x)
    )
    check_grads(expr, {"x": rng.normal(size=(3, 4))})


def test_grad_elementwise_nonlinearities():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(5,))
    lx = T.leaf("x", (5,))
    check_grads(T.reduce_sum(T.tanh(lx)), {"x": x})
    check_grads(T.reduce_sum(T.sigmoid(lx)), {"x": x})
    check_grads(T.reduce_sum(T.log(T.sigmoid(lx))), {"x": x})


def test_sigmoid_values():
    x = T.leaf("x", (3,))
    out = T.evaluate(T.sigmoid(x), {"x": [0.0, 50.0, -50.0]})
    np.testing.assert_allclose(out, [0.5, 1.0, 0.0], atol=1e-12)


def test_grad_kinked_ops_away_from_kink():
    # finite differences only make sense off the kink; keep |x| > 0.05
    rng = np.random.default_rng(16)
    x = rng.normal(size=(6,))
    x = np.where(np.abs(x) < 0.1, 0.3, x)
    lx = T.leaf("x", (6,))
    check_grads(T.reduce_sum(T.leaky_relu(lx, 0.1)), {"x": x}, rtol=1e-3)
    # clamp: pick points strictly inside and strictly outside the box
    xc = np.array([-2.0, -0.4, 0.3, 1.7, 0.9, -1.2])
    check_grads(T.reduce_sum(T.square(T.clamp(lx, -1.0, 1.0))), {"x": xc}, rtol=1e-3)


def test_leaky_relu_values():
    x = T.leaf("x", (4,))
    out = T.evaluate(T.leaky_relu(x, 0.2), {"x": [-2.0, -0.5, 0.0, 3.0]})
    np.testing.assert_allclose(out, [-0.4, -0.1, 0.0, 3.0])


def test_grad_max_pool_segments():
    # distinct values with a clear margin so FD stays on one argmax branch
    x = np.array([[0.9, 0.1, -0.4, 0.5, 1.3, -0.9, 0.2, 0.6]])
    lx = T.leaf("x", (1, 8))
    pooled = T.max_pool_segments(lx, 4)
    np.testing.assert_allclose(
        T.evaluate(pooled, {"x": x}), [[0.9, 0.5, 1.3, 0.6]]
    )
    check_grads(T.reduce_sum(T.square(pooled)), {"x": x}, rtol=1e-3)


def test_max_pool_uneven_segments():
    # length 5 into 3 bins -> bounds [0,2), [1,4), [3,5) (overlapping by design)
    assert T.pool_segment_bounds(5, 3) == [(0, 2), (1, 4), (3, 5)]
    x = T.leaf("x", (1, 5))
    out = T.evaluate(T.max_pool_segments(x, 3), {"x": [[5.0, 1.0, 4.0, 2.0, 3.0]]})
    np.testing.assert_allclose(out, [[5.0, 4.0, 3.0]])


def test_l2_norm_gradient_and_zero_safety():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(4,)) + 0.5
    lx = T.leaf("x", (4,))
    check_grads(T.l2_norm(lx), {"x": x})
    # at the origin the norm has no derivative; the engine defines it as 0
    (g,) = T.gradient(T.l2_norm(lx), ["x"])
    np.testing.assert_allclose(T.evaluate(g, {"x": np.zeros(4)}), np.zeros(4))


def test_second_derivative_closed_form():
    # z = sum(x^3); y = sum((dz/dx)^2) = sum(9 x^4); dy/dx = 36 x^3
    x = T.leaf("x", (2,))
    z = T.reduce_sum(T.mul(x, T.square(x)))
    (dz,) = T.gradient(z, ["x"])
    y = T.reduce_sum(T.square(dz))
    (dy,) = T.gradient(y, ["x"])
    np.testing.assert_allclose(
        T.evaluate(dy, {"x": [1.0, 2.0]}), [36.0, 288.0], rtol=1e-12
    )


def test_second_derivative_through_norm_penalty():
    # D(x) = w . x  =>  grad_x D = w,  P = (||w|| - 1)^2,
    # dP/dw = 2 (||w|| - 1) w / ||w||; at w = [3, 4]: [4.8, 6.4]
    w = T.leaf("w", (2,))
    x = T.leaf("x", (2,))
    d = T.reduce_sum(T.mul(w, x))
    (gx,) = T.gradient(d, ["x"])
    pen = T.square(T.sub(T.l2_norm(gx), T.const(1.0)))
    (gw,) = T.gradient(pen, ["w"])
    out = T.evaluate(gw, {"w": [3.0, 4.0], "x": [0.7, -0.2]})
    np.testing.assert_allclose(out, [4.8, 6.4], rtol=1e-12)


def test_double_backprop_matches_fd_on_nonlinear_net():
    # penalty-style objective on a tiny tanh network, second derivative wrt
    # the weights checked against finite differences of the analytic first
    rng = np.random.default_rng(18)
    w = T.leaf("w", (3, 2))
    x = T.leaf("x", (4, 3))
    score = T.reduce_sum(T.tanh(T.matmul(x, w)))
    (gx,) = T.gradient(score, ["x"])
    pen = T.reduce_sum(T.square(T.sub(T.l2_norm(gx, axis=1), T.const(1.0))))
    bindings = {"w": rng.normal(size=(3, 2)), "x": rng.normal(size=(4, 3))}
    check_grads(pen, bindings, wrt=["w"], rtol=1e-4, h=1e-4)


def test_evaluate_many_shares_roots():
    x = T.leaf("x", (3,))
    s = T.reduce_sum(T.square(x))
    (g,) = T.gradient(s, ["x"])
    vals = T.evaluate_many([s, g], {"x": [1.0, 2.0, 2.0]})
    assert float(vals[0]) == 9.0
    np.testing.assert_allclose(vals[1], [2.0, 4.0, 4.0])


def test_compiled_graph_reuse_is_deterministic():
    x = T.leaf("x", (2, 2))
    graph = T.CompiledGraph([T.reduce_sum(T.tanh(x))])
    v = np.array([[0.1, -0.2], [0.4, 0.8]])
    a = graph.run({"x": v})[0]
    b = graph.run({"x": v})[0]
    assert float(a) == float(b)


def test_assert_finite_names_offender():
    with pytest.raises(T.GraphError, match="disc_w1"):
        T.assert_finite("disc_w1", np.array([1.0, np.nan]))


def test_evaluate_deterministic_bits():
    rng = np.random.default_rng(19)
    x = T.leaf("x", (8, 8))
    w = T.leaf("w", (8, 8))
    expr = T.reduce_sum(T.tanh(T.matmul(x, w)))
    b = {"x": rng.normal(size=(8, 8)), "w": rng.normal(size=(8, 8))}
    r1 = T.evaluate(expr, b)
    r2 = T.evaluate(expr, b)
    assert r1.tobytes() == r2.tobytes()
