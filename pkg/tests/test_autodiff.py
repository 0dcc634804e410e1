import math

import numpy as np
import pytest

from sdos import autodiff as ad
from sdos.errors import NonFiniteValue


def quad(A):
    def f(z):
        return ad.mul(0.5, ad.sum(ad.mul(z, ad.linear(z, A))))
    return f


def central_fd(f, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (ad.value_and_grad(f, z + e)[0] - ad.value_and_grad(f, z - e)[0]) / (2 * h)
    return g


def test_value_and_grad_half_norm():
    v, g = ad.value_and_grad(lambda z: ad.mul(0.5, ad.sum(ad.square(z))), np.array([1.0, -2.0]))
    assert v == 2.5
    np.testing.assert_array_equal(g, [1.0, -2.0])


def test_quadratic_form_gradient(np_rng):
    A = np_rng.normal(size=(3, 3))
    f = lambda z: ad.sum(ad.mul(z, ad.linear(z, A)))  # z^T A z
    z = np_rng.normal(size=3)
    _, g = ad.value_and_grad(f, z)
    np.testing.assert_allclose(g, (A + A.T) @ z, rtol=1e-12)
    np.testing.assert_allclose(g, central_fd(f, z), atol=1e-6)


def test_constant_function_has_zero_grad():
    v, g = ad.value_and_grad(lambda z: 3.0, np.array([1.0, 2.0]))
    assert v == 3.0 and np.all(g == 0)


def test_primitives_against_finite_differences(np_rng):
    def f(z):
        a, b = ad.getitem(z, (..., slice(0, 1))), ad.getitem(z, (..., slice(1, 2)))
        pos = ad.add(ad.exp(b), 0.5)
        terms = [
            ad.div(ad.mul(a, b), pos),
            ad.sqrt(pos),
            ad.log(pos),
            ad.logistic(a),
            ad.log1pexp(ad.mul(a, 3.0)),
            ad.gammaln(pos),
            ad.neg(ad.square(a)),
        ]
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return ad.sum(out)

    for _ in range(20):
        z = np_rng.normal(size=2) * 2
        _, g = ad.value_and_grad(f, z)
        fd = central_fd(f, z)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_log1pexp_is_stable_far_out():
    v, g = ad.value_and_grad(lambda z: ad.sum(ad.log1pexp(z)), np.array([800.0, -800.0, 30.0, 31.0]))
    assert math.isfinite(v)
    assert v == pytest.approx(800.0 + math.log1p(math.exp(-30.0)) + 30.0 + math.log1p(math.exp(-31.0)) + 31.0)
    np.testing.assert_allclose(g, [1.0, 0.0, 1 / (1 + math.exp(-30)), 1 / (1 + math.exp(-31))])


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteValue):
        with np.errstate(divide="ignore"):
            ad.value_and_grad(lambda z: ad.sum(ad.log(z)), np.array([0.0]))


def test_tape_sweeps_once():
    tape = ad.Tape()
    x = tape.variable(np.ones((1, 2)))
    y = ad.sum(ad.square(x))
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)


def test_linearity(np_rng):
    f = lambda z: ad.sum(ad.exp(z))
    g = lambda z: ad.sum(ad.logistic(z))
    h = lambda z: ad.add(ad.mul(2.0, f(z)), ad.mul(-3.0, g(z)))
    z = np_rng.normal(size=4)
    gh = ad.value_and_grad(h, z)[1]
    np.testing.assert_allclose(gh, 2.0 * ad.value_and_grad(f, z)[1] - 3.0 * ad.value_and_grad(g, z)[1], rtol=1e-15)


def test_hessian_examples(np_rng):
    M = np_rng.normal(size=(4, 4))
    A = M + M.T
    H = ad.hessian(quad(A), np_rng.normal(size=4))
    assert np.array_equal(H, H.T)
    assert np.max(np.abs(H - A)) <= 1e-5 * np.max(np.abs(A))
    std = lambda z: ad.mul(-0.5, ad.sum(ad.square(z)))
    np.testing.assert_allclose(ad.hessian(std, np.zeros(3)), -np.eye(3), atol=1e-8)
    H1 = ad.hessian(lambda z: ad.sum(ad.exp(z)), np.zeros(1))
    assert H1[0, 0] == pytest.approx(1.0, rel=1e-5)


def test_hessian_asymmetry_small_before_symmetrizing(np_rng):
    f = lambda z: ad.sum(ad.add(ad.log1pexp(z), ad.mul(ad.getitem(z, (..., slice(0, 1))), ad.exp(z))))
    z = np_rng.normal(size=3)
    H = ad.hessian(f, z, symmetrize=False)
    assert np.max(np.abs(H - H.T)) <= 1e-4 * np.max(np.abs(H))


def test_batch_matches_single(np_rng):
    A = np_rng.normal(size=(3, 3))
    f = lambda z: ad.add(ad.sum(ad.exp(ad.linear(z, A))), ad.sum(ad.log1pexp(z)))
    Z = np_rng.normal(size=(6, 3))
    vals, grads = ad.batch_value_and_grad(f, Z)
    for b in range(6):
        v, g = ad.value_and_grad(f, Z[b])
        assert v == vals[b]
        assert np.array_equal(g, grads[b])
    Hs = ad.batch_hessian(f, Z)
    for b in range(6):
        assert np.array_equal(Hs[b], ad.hessian(f, Z[b]))
