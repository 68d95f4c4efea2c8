"""Reverse-mode tape against central differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionforge import autodiff as ad

TOL = 1e-6


def _check(build, arrays):
    """Compare tape gradients of scalar build(vars) to finite differences."""
    vars_ = [ad.Var(a.copy()) for a in arrays]
    loss = build(*vars_)
    loss.backward()
    numeric = ad.finite_difference(
        lambda xs: float(build(*[ad.Var(x) for x in xs]).value), arrays)
    for var, ref in zip(vars_, numeric):
        np.testing.assert_allclose(var.grad, ref, rtol=1e-4, atol=TOL)


def _rand(rng, *shape):
    return rng.uniform(-1.5, 1.5, size=shape)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def test_add_mul_sub_div(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4) + 2.0
    _check(lambda x, y: ((x * y + x - y) / y).sum(), [a, b])


def test_broadcasting_bias(rng):
    a, b = _rand(rng, 5, 3), _rand(rng, 3)
    _check(lambda x, y: ((x + y) * 2.0).sum(), [a, b])


def test_matmul(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 3, 2)
    _check(lambda x, y: ad.matmul(x, y).sum(), [a, b])


def test_pow_and_rsub(rng):
    a = _rand(rng, 6) + 2.5
    _check(lambda x: ((x ** 3) + (1.0 - x)).sum(), [a])


def test_exp_log(rng):
    a = _rand(rng, 4, 2) + 2.0
    _check(lambda x: (ad.exp(x) + ad.log(x)).sum(), [a])


def test_tanh_sigmoid_silu(rng):
    a = _rand(rng, 8)
    _check(lambda x: (ad.tanh(x) + ad.sigmoid(x) + ad.silu(x)).sum(), [a])


def test_clip_passes_gradient_only_inside(rng):
    a = np.array([-2.0, -0.5, 0.3, 1.7])
    v = ad.Var(a.copy())
    ad.clip(v, -1.0, 1.0).sum().backward()
    np.testing.assert_array_equal(v.grad, [0.0, 1.0, 1.0, 0.0])


def test_minimum(rng):
    a, b = _rand(rng, 5), _rand(rng, 5)
    b[2] = a[2] + 1.0  # keep away from ties
    _check(lambda x, y: ad.minimum(x, y).sum(), [a, b])


def test_getitem_and_concat(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 2)
    _check(lambda x, y: (ad.concat([x[:, :2], y], axis=1) ** 2).sum(), [a, b])


def test_mean_axis(rng):
    a = _rand(rng, 4, 5)
    _check(lambda x: ad.mean(x, axis=0).sum() + x.mean(), [a])


def test_reshape(rng):
    a = _rand(rng, 6)
    _check(lambda x: (x.reshape(2, 3) ** 2).sum(), [a])


def test_fan_in_reuse(rng):
    # The same Var feeding two branches must accumulate both gradients.
    a = _rand(rng, 3)
    _check(lambda x: (x * x).sum() + ad.exp(x).sum(), [a])


def test_detach_stops_gradient():
    v = ad.Var(np.array([2.0, 3.0]))
    loss = (v * v.detach()).sum()  # d/dv = detach(v), not 2v
    loss.backward()
    np.testing.assert_array_equal(v.grad, [2.0, 3.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 4))
def test_mlp_style_composite_gradcheck(seed, rows, hidden):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, 3))
    w1 = rng.standard_normal((3, hidden)) * 0.5
    w2 = rng.standard_normal((hidden, 2)) * 0.5

    def build(xv, w1v, w2v):
        h = ad.tanh(ad.matmul(xv, w1v))
        return (ad.matmul(h, w2v) ** 2).mean()

    _check(build, [x, w1, w2])
