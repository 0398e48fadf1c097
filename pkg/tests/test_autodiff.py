import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smoothfat import autodiff as ad


def grad(fn, value):
    tape = ad.Tape()
    x = tape.leaf(value)
    return tape.backward(fn(x))[x]


def test_relu_values():
    out = ad.relu(ad.constant([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])
    assert not np.signbit(out.data).any()


def test_uniform_softmax_xent_is_log_k():
    loss = ad.softmax_cross_entropy(np.zeros((3, 10)), np.array([0, 4, 9]))
    np.testing.assert_allclose(loss.data, math.log(10), rtol=0, atol=1e-15)


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(ad.matmul(np.eye(3), a).data, a)


@pytest.mark.parametrize("fn, x0, expected", [
    (lambda x: (x * x).sum(), 3.0, 6.0),
    (lambda x: x.relu().sum(), -2.0, 0.0),
    (lambda x: x.abs().sum(), 0.0, 0.0),
    (lambda x: x.relu().sum(), 0.0, 0.0),
])
def test_scalar_derivatives(fn, x0, expected):
    assert grad(fn, np.array([x0])).item() == expected


def test_non_scalar_root_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ad.ShapeError):
        tape.backward(x * 2.0)


def test_shape_mismatch_names_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_leaf_rejected(bad):
    with pytest.raises(ad.NonFiniteError):
        ad.Tape().leaf(np.array([1.0, bad]))
    with pytest.raises(ad.NonFiniteError):
        ad.constant([bad])


def test_mixed_tapes_rejected():
    a, b = ad.Tape().leaf(np.ones(2)), ad.Tape().leaf(np.ones(2))
    with pytest.raises(ValueError, match="different tapes"):
        a + b


def test_disconnected_leaf_gets_zeros(rng):
    tape = ad.Tape()
    x = tape.leaf(rng.normal(size=(2, 3)))
    y = tape.leaf(rng.normal(size=(4,)))
    grads = tape.backward((x * x).sum())
    assert grads[y].shape == (4,)
    assert not grads[y].any()


def test_backward_is_repeatable(rng):
    tape = ad.Tape()
    x = tape.leaf(rng.normal(size=(4, 5)))
    root = ad.softmax_cross_entropy(x.relu(), np.array([0, 1, 2, 3])).mean()
    g1, g2 = tape.backward(root)[x], tape.backward(root)[x]
    assert np.array_equal(g1, g2)


def test_gradient_accumulates_over_fanout(rng):
    v = rng.normal(size=5)
    g = grad(lambda x: (x * x).sum() + (x * 3.0).sum() + x.sum(), v)
    np.testing.assert_allclose(g, 2 * v + 4.0)


def test_broadcast_add_gradient_reduces(rng):
    b = rng.normal(size=(4,))
    g = grad(lambda t: (ad.add(np.ones((3, 4)), t) * 2.0).sum(), b)
    np.testing.assert_allclose(g, np.full(4, 6.0))


def test_fd_sum_of_squares():
    # central differences are exact for quadratics up to rounding
    x = np.random.default_rng(0).normal(size=8)
    assert ad.finite_difference_check(lambda t: (t * t).sum(), x, step=1e-4) <= 1e-5


def test_fd_linear_is_exact(rng):
    w = rng.normal(size=6)
    err = ad.finite_difference_check(lambda t: (t * w).sum(), rng.normal(size=6), step=1e-3)
    assert err <= 1e-9


def test_fd_softmax_xent_five_logits(rng):
    err = ad.finite_difference_check(
        lambda t: ad.softmax_cross_entropy(t, np.array([2])).sum(), rng.normal(size=(1, 5)), step=1e-5)
    assert err <= 1e-4


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        ad.finite_difference_check(lambda t: t.sum(), np.ones(2), step=0.0)


def test_fd_detects_wrong_rule(rng):
    x = rng.normal(size=4)
    assert ad.finite_difference_check(lambda t: (t * t).sum(), x, grad=3 * x) > 0.1


def test_pnorm_value_and_origin(rng):
    v = rng.normal(size=7)
    assert ad.pnorm(v, p=2).item() == pytest.approx(np.linalg.norm(v), rel=1e-14)
    assert not grad(lambda t: ad.pnorm(t, p=2), np.zeros(3)).any()


def test_sqdist_rowwise(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(ad.sqdist(a, b).data, ((a - b) ** 2).sum(axis=1))


def test_conv3x3_matches_direct_sum(rng):
    x, w, b = rng.normal(size=(2, 3, 5, 4)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 4))
    for i in range(5):
        for j in range(4):
            patch = xp[:, :, i:i + 3, j:j + 3]
            ref[:, :, i, j] = np.einsum("ncuv,fcuv->nf", patch, w) + b
    np.testing.assert_allclose(ad.conv3x3(x, w, b).data, ref, rtol=1e-12, atol=1e-12)


def test_meanpool2_values():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(ad.meanpool2(x).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_concat_flattens_in_order():
    out = ad.concat([np.ones((2, 2)), np.zeros(3)])
    np.testing.assert_array_equal(out.data, [1, 1, 1, 1, 0, 0, 0])


def test_float32_stays_float32(rng):
    tape = ad.Tape()
    x = tape.leaf(rng.normal(size=(2, 3)).astype(np.float32))
    out = (x @ rng.normal(size=(3, 2)).astype(np.float32)).relu().sum()
    assert out.dtype == np.float32
    assert tape.backward(out)[x].dtype == np.float32


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
       st.floats(-2, 2), st.floats(-2, 2))
def test_backward_linearity(x, a, b):
    f = lambda t: (t * t).sum()
    g = lambda t: ad.softmax_cross_entropy(t, np.array([0, 1, 3])).sum()
    lhs = grad(lambda t: f(t) * a + g(t) * b, x)
    rhs = a * grad(f, x) + b * grad(g, x)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-20, 20)))
def test_xent_gradient_rows_sum_to_zero(logits):
    g = grad(lambda t: ad.softmax_cross_entropy(t, np.array([1, 4])).sum(), logits)
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)
