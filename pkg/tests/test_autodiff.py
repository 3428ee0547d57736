"""Finite-difference and algebraic checks of the reverse-mode engine."""

import numpy as np
import pytest

from poseadapt import autodiff as ad
from poseadapt.autodiff import Parameter, Tensor


def numeric_grad(fn, x, step=1e-6):
    """Central finite differences of scalar fn w.r.t. the array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = fn()
        x[idx] = orig - step
        lo = fn()
        x[idx] = orig
        g[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return g


def check_op(build, shapes, seed, positive=False):
    """Compare autodiff grads of a scalarized op against finite
    differences for every input."""
    rng = np.random.default_rng(seed)
    params = []
    for s in shapes:
        data = rng.uniform(0.2, 1.5, size=s) if positive else rng.standard_normal(s)
        params.append(Parameter(data))
    weights = rng.standard_normal(build(*params).data.shape)

    def scalar_loss():
        return ad.tsum(ad.mul(build(*params), Tensor(weights)))

    loss = scalar_loss()
    ad.backward(loss)
    for p in params:
        num = numeric_grad(lambda: float(scalar_loss().data), p.data)
        np.testing.assert_allclose(p.grad, num, rtol=1e-5, atol=1e-7)


OPS = [
    ("add", lambda a, b: ad.add(a, b), [(3, 4), (3, 4)], False),
    ("add_broadcast", lambda a, b: ad.add(a, b), [(3, 4), (4,)], False),
    ("sub", lambda a, b: ad.sub(a, b), [(2, 5), (2, 5)], False),
    ("mul", lambda a, b: ad.mul(a, b), [(4, 3), (4, 3)], False),
    ("mul_broadcast", lambda a, b: ad.mul(a, b), [(2, 3, 4), (3, 1)], False),
    ("div", lambda a, b: ad.div(a, b), [(3, 3), (3, 3)], True),
    ("scale", lambda a: ad.scale(a, -2.5), [(4, 2)], False),
    ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 5)], False),
    ("matmul_batched", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)], False),
    ("reshape", lambda a: ad.reshape(a, (2, 6)), [(3, 4)], False),
    ("transpose", lambda a: ad.transpose(a, (1, 0, 2)), [(2, 3, 4)], False),
    ("getitem", lambda a: ad.getitem(a, (slice(None), 1)), [(3, 4)], False),
    ("concat", lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)], False),
    ("stack", lambda a, b: ad.stack([a, b], axis=1), [(2, 3), (2, 3)], False),
    ("tsum_axis", lambda a: ad.tsum(a, axis=1), [(3, 4)], False),
    ("tmean_keep", lambda a: ad.tmean(a, axis=-1, keepdims=True), [(2, 5)], False),
    ("relu", lambda a: ad.relu(a), [(4, 4)], False),
    ("tabs", lambda a: ad.tabs(a), [(3, 3)], True),
    ("exp", lambda a: ad.exp(a), [(3, 3)], False),
    ("log", lambda a: ad.log(a), [(3, 3)], True),
    ("sqrt", lambda a: ad.sqrt(a), [(3, 3)], True),
    ("sin", lambda a: ad.sin(a), [(3, 3)], False),
    ("cos", lambda a: ad.cos(a), [(3, 3)], False),
    ("softplus", lambda a: ad.softplus(a), [(3, 4)], False),
    ("softmax_rows", lambda a: ad.softmax_rows(a), [(4, 6)], False),
    ("unit_rows", lambda a: ad.unit_rows(a), [(5, 3)], False),
    ("row_norms", lambda a: ad.row_norms(a), [(5, 3)], True),
    ("mse", lambda a, b: ad.mse(a, b), [(4, 3), (4, 3)], False),
    ("dense", lambda x, w, b: ad.dense(x, w, b), [(3, 4), (4, 5), (5,)], False),
]


@pytest.mark.parametrize("name,build,shapes,positive",
                         OPS, ids=[o[0] for o in OPS])
def test_op_gradients_match_finite_differences(name, build, shapes, positive):
    for seed in (0, 1):
        check_op(build, shapes, seed, positive=positive)


def test_backward_accumulates_additively():
    # two backward calls without zero_grad must give exactly twice the grad
    p = Parameter(np.array([1.0, -2.0, 3.0]))
    loss = ad.tsum(ad.mul(p, p))
    ad.backward(loss)
    once = p.grad.copy()
    ad.backward(loss)
    np.testing.assert_array_equal(p.grad, 2.0 * once)


def test_unreachable_parameter_keeps_zero_grad():
    used = Parameter(np.ones(3))
    unused = Parameter(np.ones(4))
    ad.backward(ad.tsum(used))
    np.testing.assert_array_equal(unused.grad, np.zeros(4))
    np.testing.assert_array_equal(used.grad, np.ones(3))


def test_reused_node_accumulates_both_paths():
    p = Parameter(np.array([2.0]))
    y = ad.add(ad.mul(p, p), ad.scale(p, 3.0))  # p^2 + 3p -> 2p + 3 = 7
    ad.backward(ad.tsum(y))
    np.testing.assert_allclose(p.grad, [7.0])


def test_backward_rejects_nonscalar():
    p = Parameter(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.backward(ad.mul(p, p))


def test_softmax_rows_is_row_pdf():
    rng = np.random.default_rng(3)
    out = ad.softmax_rows(Tensor(rng.standard_normal((6, 9)) * 5)).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_rows_shift_invariant_and_stable():
    x = np.array([[1e4, 1e4 + 1.0, 1e4 - 2.0]])
    out = ad.softmax_rows(Tensor(x)).data
    ref = ad.softmax_rows(Tensor(x - 1e4)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_unit_rows_normalizes_and_keeps_zero_rows_finite():
    x = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]])
    out = ad.unit_rows(Tensor(x))
    np.testing.assert_allclose(out.data[0], [0.6, 0.8, 0.0], atol=1e-9)
    assert np.all(np.isfinite(out.data))
    ad.backward(ad.tsum(out))  # gradient through the zero row stays finite


def test_getitem_scatters_grad_to_source_positions():
    p = Parameter(np.zeros((3, 3)))
    ad.backward(ad.tsum(p[1]))
    expected = np.zeros((3, 3))
    expected[1] = 1.0
    np.testing.assert_array_equal(p.grad, expected)


def test_broadcast_grad_reduces_to_leaf_shape():
    a = Parameter(np.ones((2, 3)))
    b = Parameter(np.ones(3))
    ad.backward(ad.tsum(ad.add(a, b)))
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
    assert a.grad.shape == (2, 3)


def test_gradient_check_utility_passes_on_smooth_function():
    rng = np.random.default_rng(0)
    w = Parameter(rng.standard_normal((4, 3)))

    def fn():
        return ad.tsum(ad.exp(ad.scale(ad.tsum(ad.mul(w, w)), -0.1)))

    assert ad.gradient_check(fn, [w], rng) < 1e-6


def test_gradient_check_utility_flags_wrong_gradient():
    rng = np.random.default_rng(0)
    w = Parameter(rng.standard_normal((4, 3)))

    def fn():
        loss = ad.tsum(ad.mul(w, w))
        bad = Tensor(loss.data, parents=(w,),
                     vjp=lambda g: (np.ones_like(w.data) * g,))  # wrong on purpose
        return bad

    assert ad.gradient_check(fn, [w], rng) > 1e-2
