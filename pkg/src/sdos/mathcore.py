"""Numerical substrate: Cholesky, Gaussians, seeded streams and transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad
from .errors import ConstraintViolation, DimensionError, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.array(x, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.array(x, dtype=float)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def cholesky(A) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix.

    Raises:
        NotPositiveDefinite: on a non-positive or non-finite pivot. No jitter
            is added here; callers that want a fallback apply it themselves.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise DimensionError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
        raise NotPositiveDefinite("non-positive pivot")
    return L


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """Multivariate normal with covariance ``chol @ chol.T``."""

    mean: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        chol = as_matrix(self.chol, "chol")
        if chol.shape != (mean.size, mean.size):
            raise DimensionError(f"chol has shape {chol.shape}, expected {(mean.size, mean.size)}")
        if np.any(np.triu(chol, 1) != 0):
            raise ValueError("chol must be lower-triangular")
        if np.any(np.diag(chol) <= 0):
            raise ValueError("chol must have a strictly positive diagonal")
        mean.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", chol)

    @classmethod
    def from_covariance(cls, mean, cov) -> "GaussianApprox":
        cov = as_matrix(cov, "cov")
        return cls(mean, cholesky(0.5 * (cov + cov.T)))

    @classmethod
    def standard(cls, d: int) -> "GaussianApprox":
        return cls(np.zeros(d), np.eye(d))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def log_density(self, z) -> float:
        return gaussian_log_density(z, self)

    def grad_log_density(self, z) -> np.ndarray:
        """Gradient ``-Sigma^{-1} (z - mean)`` via two triangular solves."""
        z = as_vector(z, "z")
        w = solve_triangular(self.chol, z - self.mean, lower=True)
        return -solve_triangular(self.chol, w, lower=True, trans="T")

    def sample(self, rng: "RngStream") -> np.ndarray:
        return gaussian_sample(self, rng)


def gaussian_log_density(z, q: GaussianApprox) -> float:
    """Log-density of ``q`` at ``z`` in nats."""
    z = np.asarray(z, dtype=float)
    if z.shape != q.mean.shape:
        raise DimensionError(f"z has shape {z.shape}, q has dimension {q.dim}")
    w = solve_triangular(q.chol, z - q.mean, lower=True)
    return float(-0.5 * q.dim * LOG_2PI - np.sum(np.log(np.diag(q.chol))) - 0.5 * np.dot(w, w))


def gaussian_sample(q: GaussianApprox, rng: "RngStream", eps=None) -> np.ndarray:
    """One draw ``mean + L @ eps``; ``eps`` defaults to fresh standard normals.

    Passing ``eps`` explicitly exposes the reparameterization path.
    """
    if eps is None:
        eps = rng.gen.standard_normal(q.dim)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != q.mean.shape:
        raise DimensionError(f"eps has shape {eps.shape}, q has dimension {q.dim}")
    return q.mean + q.chol @ eps


class RngStream:
    """Deterministic generator keyed by ``(master_seed, stream_index)``.

    The key feeds a numpy ``SeedSequence`` spawn key and a PCG64 generator,
    so streams are reproducible across runs and platforms, and distinct
    indices give statistically independent sequences. A stream is meant to
    have a single owner; use :meth:`child` to hand out sub-streams.
    """

    __slots__ = ("master_seed", "key", "gen")

    def __init__(self, master_seed: int, stream_index: int | Sequence[int] = 0):
        if isinstance(stream_index, (int, np.integer)):
            key = (int(stream_index),)
        else:
            key = tuple(int(i) for i in stream_index)
        if any(k < 0 for k in key) or master_seed < 0:
            raise ValueError("seed and stream indices must be non-negative")
        self.master_seed = int(master_seed)
        self.key = key
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.master_seed, spawn_key=key)))

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream; does not advance this stream."""
        return RngStream(self.master_seed, self.key + (int(index),))

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, key={self.key})"


# ---------------------------------------------------------------------------
# constraint transforms


@dataclass(frozen=True)
class Real:
    """Unconstrained coordinate."""

    def constrain(self, u):
        return u

    def unconstrain(self, c):
        return np.asarray(c, dtype=float)

    def log_abs_det_jacobian(self, u):
        return 0.0 * ad._val(u)

    def contains(self, c) -> bool:
        return bool(np.isfinite(c))


@dataclass(frozen=True)
class Positive:
    """Coordinate on (0, inf), unconstrained through the log."""

    def constrain(self, u):
        return ad.exp(u)

    def unconstrain(self, c):
        return np.log(c)

    def log_abs_det_jacobian(self, u):
        return u

    def contains(self, c) -> bool:
        return bool(0 < c < np.inf)


@dataclass(frozen=True)
class Interval:
    """Coordinate on (a, b), unconstrained through logit((c - a) / (b - a))."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
            raise ValueError(f"invalid interval ({self.a}, {self.b})")

    def constrain(self, u):
        return self.a + (self.b - self.a) * ad.logistic(u)

    def unconstrain(self, c):
        p = (np.asarray(c, dtype=float) - self.a) / (self.b - self.a)
        return np.log(p) - np.log1p(-p)

    def log_abs_det_jacobian(self, u):
        # ln(b - a) + ln s(u) + ln(1 - s(u)) with s the logistic function
        return math.log(self.b - self.a) - ad.log1pexp(-u) - ad.log1pexp(u)

    def contains(self, c) -> bool:
        return bool(self.a < c < self.b)


Constraint = Real | Positive | Interval


class TransformSpec(tuple):
    """Per-coordinate constraint descriptors for a latent vector."""

    def __new__(cls, items: Sequence[Constraint]):
        items = tuple(items)
        for t in items:
            if not isinstance(t, (Real, Positive, Interval)):
                raise TypeError(f"unknown constraint {t!r}")
        return super().__new__(cls, items)

    @classmethod
    def real(cls, d: int) -> "TransformSpec":
        return cls([Real()] * d)

    @property
    def all_real(self) -> bool:
        return all(isinstance(t, Real) for t in self)


def to_unconstrained(c, t: TransformSpec) -> tuple[np.ndarray, float]:
    """Map a constrained vector to unconstrained space.

    Returns ``(u, log_abs_det_jacobian)`` where the log-Jacobian is that of
    the inverse map u -> c, so ``log p_u(u) = log p_c(c(u)) + log_abs_det``.

    Raises:
        ConstraintViolation: if any coordinate is on or outside its boundary.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.size != len(t):
        raise DimensionError(f"value has shape {c.shape}, transform has {len(t)} coordinates")
    u = np.empty_like(c)
    for i, (ci, ti) in enumerate(zip(c, t)):
        if not ti.contains(ci):
            raise ConstraintViolation(f"coordinate {i} = {ci!r} violates {ti!r}")
        u[i] = ti.unconstrain(ci)
    return u, float(np.sum(log_abs_det_jacobian(u, t)))


def to_constrained(u, t: TransformSpec) -> np.ndarray:
    """Exact inverse of :func:`to_unconstrained` on the interior."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != len(t):
        raise DimensionError(f"value has shape {u.shape}, transform has {len(t)} coordinates")
    return np.stack([np.asarray(ti.constrain(u[..., i]), dtype=float) for i, ti in enumerate(t)], axis=-1)


def log_abs_det_jacobian(u, t: TransformSpec) -> np.ndarray:
    """Per-coordinate log-Jacobian contributions of the map u -> c."""
    u = np.asarray(u, dtype=float)
    return np.stack([np.asarray(ti.log_abs_det_jacobian(u[..., i]), dtype=float) for i, ti in enumerate(t)], axis=-1)


def log_sum_exp(a) -> float:
    """Stable ln(sum(exp(a))) over a 1-D array.

    The inputs are sorted first so the result is bitwise independent of
    their order.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    if a.size == 0:
        return -math.inf
    top = a[-1]
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.sum(np.exp(a - top))))


def softmax(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    e = np.exp(a - np.max(a))
    return e / np.sum(e)
