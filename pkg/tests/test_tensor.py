"""Autodiff core: forward values, backward rules, tape semantics."""

import numpy as np
import pytest

from sparsegrad import tensor as T
from sparsegrad.gradcheck import check_gradients, finite_difference, relative_error


def grad_of(loss, leaf):
    return T.backward(loss, wrt=[leaf])[leaf].data


def test_quadratic_gradient():
    w = T.Tensor([1.0, 2.0, 3.0])
    loss = T.tsum(w * w)
    assert np.array_equal(grad_of(loss, w), [2.0, 4.0, 6.0])


def test_constant_loss_gives_zero_gradients():
    w = T.Tensor([1.0, 2.0])
    loss = T.tsum(T.constant([5.0, 5.0]))
    g = grad_of(loss, w)
    assert np.array_equal(g, [0.0, 0.0])


def test_relu_forward_and_subgradient_convention():
    w = T.Tensor([-1.0, 0.0, 2.0])
    out = T.relu(w)
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])
    loss = T.tsum(out)
    # relu'(0) = 0 convention: the middle entry gets no gradient.
    assert np.array_equal(grad_of(loss, w), [0.0, 0.0, 1.0])


def test_relu_all_negative():
    w = T.Tensor([-3.0, -0.5])
    loss = T.tsum(T.relu(w))
    assert np.array_equal(T.relu(w).data, [0.0, 0.0])
    assert np.array_equal(grad_of(loss, w), [0.0, 0.0])


def test_relu_gradient_matches_finite_difference_away_from_kink():
    def fd(arrays):
        return float(np.sum(np.maximum(arrays[0], 0.0)))

    numeric = finite_difference(fd, [np.array([3.0])], 0)
    w = T.Tensor([3.0])
    analytic = grad_of(T.tsum(T.relu(w)), w)
    assert relative_error(analytic, numeric) < 1e-6


def test_rgf_relu_forward_identical_to_relu():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200) * 3.0
    a = T.Tensor(x)
    assert np.array_equal(T.rgf_relu(a).data, T.relu(a).data)


def test_rgf_relu_backward_negative_branch():
    x = T.Tensor([-1.0])
    loss = T.tsum(T.rgf_relu(x))
    g = grad_of(loss, x)
    assert np.allclose(g, 0.1 * np.exp(-1.0), rtol=0, atol=1e-15)
    # Cross-check against a finite difference on elu itself.
    def elu(arrays):
        v = arrays[0]
        return float(np.sum(np.where(v >= 0, v, 0.1 * (np.exp(v) - 1.0))))

    numeric = finite_difference(elu, [np.array([-1.0])], 0)
    assert relative_error(g, numeric) < 1e-8


def test_rgf_relu_backward_positive_branch_passes_upstream():
    x = T.Tensor([2.0])
    loss = 3.0 * T.tsum(T.rgf_relu(x))
    assert np.array_equal(grad_of(loss, x), [3.0])


def test_rgf_relu_backward_matches_elu_derivative_exactly():
    rng = np.random.default_rng(1)
    x = rng.normal(size=50) * 2.0
    t = T.Tensor(x)
    g = grad_of(T.tsum(T.rgf_relu(t)), t)
    expected = np.where(x >= 0.0, 1.0, 0.1 * np.exp(x))
    assert np.array_equal(g, expected)


def test_safe_l2_norm_three_four_five():
    x = T.Tensor([3.0, 4.0])
    n = T.safe_l2_norm(x)
    assert n.item() == 5.0
    g = grad_of(n, x)
    assert np.allclose(g, [0.6, 0.8], rtol=0, atol=1e-15)


def test_safe_l2_norm_finite_at_zero_vector():
    x = T.Tensor([0.0, 0.0])
    n = T.safe_l2_norm(x)
    assert n.item() == 0.0
    g = grad_of(n, x)
    assert np.array_equal(g, [0.0, 0.0])
    assert np.all(np.isfinite(g))


def test_safe_l2_norm_axiswise():
    x = T.Tensor([[3.0, 4.0], [0.0, 0.0]])
    n = T.safe_l2_norm(x, axis=1)
    assert np.array_equal(n.data, [5.0, 0.0])
    g = grad_of(T.tsum(n), x)
    assert np.all(np.isfinite(g))
    assert np.allclose(g[0], [0.6, 0.8])
    assert np.array_equal(g[1], [0.0, 0.0])


def test_sign_values_and_zero_gradient():
    x = T.Tensor([-2.0, 0.0, 5.0])
    s = T.sign(x)
    assert np.array_equal(s.data, [-1.0, 0.0, 1.0])
    loss = T.tsum(s * T.constant([10.0, 10.0, 10.0]))
    assert np.array_equal(grad_of(loss, x), [0.0, 0.0, 0.0])


def test_sigmoid_at_zero():
    assert T.sigmoid(T.Tensor(0.0)).item() == 0.5


def test_sigmoid_stable_at_large_magnitude():
    x = T.Tensor([-800.0, 800.0])
    s = T.sigmoid(x)
    assert np.all(np.isfinite(s.data))
    assert s.data[0] == 0.0 or s.data[0] < 1e-300
    assert s.data[1] == 1.0


def test_matmul_2d_gradient_vs_finite_difference():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))

    def build(leaves):
        return T.tsum(leaves["a"] @ leaves["b"] * T.constant(np.ones((3, 2))))

    report = check_gradients(build, {"a": a, "b": b}, tol=1e-6)
    assert report.passed, list(report.lines())


def test_matmul_batched_left():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 2))
    cvec = rng.normal(size=(2, 3, 2))

    def build(leaves):
        return T.tsum(leaves["a"] @ leaves["b"] * T.constant(cvec))

    report = check_gradients(build, {"a": a, "b": b})
    assert report.passed, list(report.lines())


def test_matmul_batched_right():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(2, 4, 5))
    cvec = rng.normal(size=(2, 3, 5))

    def build(leaves):
        return T.tsum(leaves["a"] @ leaves["b"] * T.constant(cvec))

    report = check_gradients(build, {"a": a, "b": b})
    assert report.passed, list(report.lines())


def test_gradient_accumulation_doubles():
    x = T.Tensor([1.5, -2.0])

    def f(t):
        return T.tsum(T.exp(t) * t)

    g_once = grad_of(f(x), x)
    g_twice = grad_of(f(x) + f(x), x)
    assert np.array_equal(g_twice, 2.0 * g_once)


def test_fanout_accumulation():
    x = T.Tensor(2.0)
    y = x * x  # used twice through one tape node
    loss = y + x
    assert grad_of(loss, x) == pytest.approx(5.0)


def test_backward_requires_scalar_root():
    x = T.Tensor([1.0, 2.0])
    with pytest.raises(ValueError, match="backward requires scalar root"):
        T.backward(x + x)


def test_unreached_leaf_gets_zero_gradient():
    x = T.Tensor([1.0])
    z = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    loss = T.tsum(x * x)
    g = T.backward(loss, wrt=[z])[z]
    assert g.shape == (2, 2)
    assert np.array_equal(g.data, np.zeros((2, 2)))


def test_leaf_rejects_nan_and_inf():
    with pytest.raises(ValueError, match="finite"):
        T.Tensor([1.0, np.nan])
    with pytest.raises(ValueError, match="finite"):
        T.Tensor([np.inf])


def test_elementwise_shape_mismatch_rejected():
    a = T.Tensor([1.0, 2.0])
    b = T.Tensor([1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="shapes"):
        a + b


def test_scalar_broadcast_allowed():
    a = T.Tensor([1.0, 2.0])
    out = a * 3.0 + 1.0
    assert np.array_equal(out.data, [4.0, 7.0])
    g = grad_of(T.tsum(out), a)
    assert np.array_equal(g, [3.0, 3.0])


def test_scalar_leaf_broadcast_gradient_sums():
    s = T.Tensor(2.0)
    x = T.constant([1.0, 2.0, 3.0])
    loss = T.tsum(x * s)
    assert grad_of(loss, s) == pytest.approx(6.0)


def test_division_by_exact_zero_rejected():
    a = T.Tensor([1.0, 2.0])
    b = T.Tensor([2.0, 0.0])
    with pytest.raises(ZeroDivisionError):
        a / b


def test_division_values_and_gradient():
    def build(leaves):
        return T.tsum(leaves["a"] / leaves["b"])

    report = check_gradients(build, {"a": np.array([1.0, -2.0]),
                                     "b": np.array([0.5, 4.0])})
    assert report.passed, list(report.lines())


def test_log_requires_positive():
    with pytest.raises(ValueError, match="positive"):
        T.log(T.Tensor([1.0, 0.0]))


def test_tensor_data_immutable():
    x = T.Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 9.0


def test_concat_and_split_gradient():
    a = T.Tensor([1.0, 2.0])
    b = T.Tensor([3.0])
    out = T.concat([a, b])
    assert np.array_equal(out.data, [1.0, 2.0, 3.0])
    loss = T.tsum(out * T.constant([1.0, 10.0, 100.0]))
    ga = grad_of(loss, a)
    gb = grad_of(loss, b)
    assert np.array_equal(ga, [1.0, 10.0])
    assert np.array_equal(gb, [100.0])


def test_softmax_log_softmax_and_reductions_match_fd():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))
    wvec = rng.normal(size=(4, 3))

    def build(leaves):
        s = T.softmax(leaves["x"], axis=1)
        ls = T.log_softmax(leaves["x"], axis=1)
        return T.tsum(s * T.constant(wvec)) + T.tmean(ls * T.constant(wvec))

    report = check_gradients(build, {"x": x})
    assert report.passed, list(report.lines())


def test_structured_ops_match_fd():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(5, 3))
    v = rng.normal(size=3)
    b = rng.normal(size=3)

    def build(leaves):
        h = T.bias_add(leaves["x"], leaves["b"])
        h = T.mul_vec_last(h, leaves["v"])
        h = T.reshape(h, (3, 5))
        return T.tsum(T.transpose(h) * T.constant(rng_fixed))

    rng_fixed = np.random.default_rng(7).normal(size=(5, 3))
    report = check_gradients(build, {"x": x, "v": v, "b": b})
    assert report.passed, list(report.lines())


def test_axis_reductions_match_fd():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(4, 5))
    c0 = np.random.default_rng(9).normal(size=5)
    c1 = np.random.default_rng(10).normal(size=4)

    def build(leaves):
        return (T.tsum(T.tsum(leaves["x"], axis=0) * T.constant(c0))
                + T.tsum(T.tmean(leaves["x"], axis=1) * T.constant(c1)))

    report = check_gradients(build, {"x": x})
    assert report.passed, list(report.lines())


def test_elementwise_unary_ops_match_fd():
    rng = np.random.default_rng(11)
    x = np.abs(rng.normal(size=20)) + 0.5

    def build(leaves):
        t = leaves["x"]
        return T.tsum(T.exp(t * 0.1) + T.log(t) + T.absolute(t)
                      + T.sigmoid(t) + T.sqrt(t) + T.power(t, 0.5))

    report = check_gradients(build, {"x": x})
    assert report.passed, list(report.lines())


def test_check_gradients_refuses_custom_backward_by_default():
    def build(leaves):
        return T.tsum(T.rgf_relu(leaves["x"]))

    with pytest.raises(ValueError, match="custom backward"):
        check_gradients(build, {"x": np.array([-1.0, 1.0])})


def test_power_guards():
    with pytest.raises(ValueError, match="non-negative base"):
        T.power(T.Tensor([-1.0]), 0.5)
    with pytest.raises(ValueError, match="undefined at zero"):
        T.power(T.Tensor([0.0]), 0.5)
