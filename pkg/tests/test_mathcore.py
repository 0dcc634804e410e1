import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from sdos.errors import ConstraintViolation, DimensionError, NotPositiveDefinite
from sdos.mathcore import (
    GaussianApprox,
    Interval,
    Positive,
    Real,
    RngStream,
    TransformSpec,
    cholesky,
    gaussian_log_density,
    gaussian_sample,
    log_sum_exp,
    softmax,
    to_constrained,
    to_unconstrained,
)


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_two_by_two_oracle():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    L = cholesky(A)
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], rtol=1e-14)
    np.testing.assert_allclose(L @ L.T, A, rtol=1e-14)


def test_cholesky_rejects_negative_pivot():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[-1.0]])


def test_cholesky_rejects_asymmetric_and_bad_shapes():
    with pytest.raises(ValueError):
        cholesky([[2.0, 1.0], [0.0, 2.0]])
    with pytest.raises(DimensionError):
        cholesky(np.ones((2, 3)))


@pytest.mark.parametrize("d", [1, 2, 5, 12])
def test_cholesky_reconstructs_random_spd(np_rng, d):
    for _ in range(10):
        M = np_rng.normal(size=(d, d))
        A = M.T @ M + np.eye(d)
        L = cholesky(A)
        assert np.allclose(L, np.tril(L))
        assert np.linalg.norm(L @ L.T - A) <= 1e-10 * np.linalg.norm(A)


def test_log_density_oracles():
    assert gaussian_log_density(np.zeros(1), GaussianApprox.standard(1)) == pytest.approx(-0.91893853, abs=1e-8)
    q = GaussianApprox.from_covariance([1.0], [[4.0]])
    assert gaussian_log_density(np.array([3.0]), q) == pytest.approx(-2.11208571, abs=1e-8)
    for d in (2, 7):
        assert gaussian_log_density(np.zeros(d), GaussianApprox.standard(d)) == pytest.approx(-0.5 * d * math.log(2 * math.pi))


def test_log_density_matches_scipy(np_rng):
    d = 4
    M = np_rng.normal(size=(d, d))
    cov = M @ M.T + 0.5 * np.eye(d)
    mean = np_rng.normal(size=d)
    q = GaussianApprox.from_covariance(mean, cov)
    for _ in range(5):
        z = np_rng.normal(size=d)
        assert q.log_density(z) == pytest.approx(stats.multivariate_normal(mean, cov).logpdf(z), rel=1e-12)


def test_log_density_at_mean_invariant(np_rng):
    L = np.tril(np_rng.normal(size=(3, 3)))
    np.fill_diagonal(L, np.abs(np.diag(L)) + 0.1)
    q = GaussianApprox(np.ones(3), L)
    expected = -1.5 * math.log(2 * math.pi) - np.sum(np.log(np.diag(L)))
    assert q.log_density(q.mean) == pytest.approx(expected, rel=1e-14)


def test_log_density_integrates_to_one():
    q = GaussianApprox.from_covariance([0.7], [[2.5]])
    s = math.sqrt(2.5)
    total, _ = integrate.quad(lambda z: math.exp(q.log_density(np.array([z]))), 0.7 - 10 * s, 0.7 + 10 * s, epsabs=1e-12)
    assert abs(total - 1.0) < 1e-6


def test_gaussian_approx_validation():
    with pytest.raises(ValueError):
        GaussianApprox(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        GaussianApprox(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        gaussian_log_density(np.zeros(3), GaussianApprox.standard(2))


def test_sample_degenerate_noise_returns_mean():
    q = GaussianApprox(np.array([1.5, -2.0]), np.diag([1e-300, 1e-300]))
    np.testing.assert_allclose(gaussian_sample(q, RngStream(0, 0)), q.mean, atol=1e-290)


def test_sample_determinism():
    q = GaussianApprox.standard(3)
    a = gaussian_sample(q, RngStream(42, 7))
    b = gaussian_sample(q, RngStream(42, 7))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussian_sample(q, RngStream(42, 8)))


def test_sample_moments():
    mean = np.array([1.0, -1.0, 0.5])
    cov = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 0.5]])
    q = GaussianApprox.from_covariance(mean, cov)
    rng = RngStream(3, 0)
    eps = rng.gen.standard_normal((100_000, 3))
    Z = np.array([gaussian_sample(q, rng, e) for e in eps[:2000]])  # explicit eps path
    np.testing.assert_allclose(Z[0], mean + q.chol @ eps[0])
    Z = mean + eps @ q.chol.T
    se = np.sqrt(np.diag(cov) / Z.shape[0])
    assert np.all(np.abs(Z.mean(axis=0) - mean) < 4 * se)
    emp = np.cov(Z.T)
    assert np.all(np.abs(emp - cov) <= 0.05 * np.abs(cov) + 0.01)
    assert np.all(np.abs(np.diag(emp) - np.diag(cov)) <= 0.05 * np.diag(cov))


def test_rng_streams_uncorrelated():
    a = RngStream(99, 0).gen.standard_normal(100_000)
    b = RngStream(99, 1).gen.standard_normal(100_000)
    c = RngStream(99, 0).child(0).gen.standard_normal(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.01


def test_rng_rejects_negative_seed():
    with pytest.raises(ValueError):
        RngStream(-1, 0)


def test_transform_examples():
    u, lj = to_unconstrained(np.array([1.0]), TransformSpec([Positive()]))
    assert u[0] == 0.0 and lj == 0.0
    u, lj = to_unconstrained(np.array([0.5]), TransformSpec([Interval(0, 1)]))
    assert u[0] == pytest.approx(0.0, abs=1e-15)
    assert lj == pytest.approx(-1.38629436, abs=1e-8)
    u, lj = to_unconstrained(np.array([1.0]), TransformSpec([Interval(0, 2)]))
    assert lj == pytest.approx(-0.69314718, abs=1e-8)
    t = TransformSpec([Real(), Positive(), Interval(0, 1)])
    np.testing.assert_allclose(to_constrained(np.array([-7.3, 0.0, 0.0]), t), [-7.3, 1.0, 0.5])


def test_transform_boundaries_rejected():
    t = TransformSpec([Interval(0.25, 1.0)])
    for bad in (0.25, 1.0, 2.0):
        with pytest.raises(ConstraintViolation):
            to_unconstrained(np.array([bad]), t)
    with pytest.raises(ConstraintViolation):
        to_unconstrained(np.array([0.0]), TransformSpec([Positive()]))
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)


def test_transform_round_trip(np_rng):
    t = TransformSpec([Real(), Positive(), Interval(-3, 3), Interval(0.25, 1)])
    for _ in range(200):
        c = np.array([np_rng.normal() * 10, np_rng.gamma(0.5), np_rng.uniform(-3, 3), np_rng.uniform(0.25, 1)])
        u, _ = to_unconstrained(c, t)
        np.testing.assert_allclose(to_constrained(u, t), c, rtol=1e-12)


def test_jacobian_matches_numeric_derivative(np_rng):
    t = TransformSpec([Positive(), Interval(-3, 3)])
    for _ in range(20):
        u = np_rng.normal(size=2) * 2
        _, lj = to_unconstrained(to_constrained(u, t), t)
        h = 1e-6
        num = sum(
            math.log(abs((to_constrained(u + h * e, t)[i] - to_constrained(u - h * e, t)[i]) / (2 * h)))
            for i, e in enumerate(np.eye(2))
        )
        assert lj == pytest.approx(num, abs=1e-6)


def test_log_sum_exp_and_softmax(np_rng):
    a = np_rng.normal(size=50) * 30
    assert log_sum_exp(a) == pytest.approx(float(np.logaddexp.reduce(a)), rel=1e-14)
    assert log_sum_exp(a) == log_sum_exp(np_rng.permutation(a))
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2))
    assert softmax([0.0, 0.0]).tolist() == [0.5, 0.5]
    assert softmax(a).sum() == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(-50, 50),
    width=st.floats(1e-3, 100),
    frac=st.floats(1e-6, 1 - 1e-6),
    pos=st.floats(1e-8, 1e8),
    real=st.floats(-1e6, 1e6),
)
def test_round_trip_property(a, width, frac, pos, real):
    t = TransformSpec([Interval(a, a + width), Positive(), Real()])
    c = np.array([a + frac * width, pos, real])
    if not t[0].contains(c[0]):
        return
    u, _ = to_unconstrained(c, t)
    back = to_constrained(u, t)
    assert abs(back[0] - c[0]) <= 1e-12 * max(abs(c[0]), width) / min(frac, 1 - frac)
    np.testing.assert_allclose(back[1:], c[1:], rtol=1e-12)
