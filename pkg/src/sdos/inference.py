"""Approximate inference engines producing Gaussian approximations.

All engines run on unconstrained latents and are vectorized over independent
problems: a batch of B datasets is fitted in lock-step, each with its own
random stream, and row b of every intermediate depends only on problem b.
Fitting a dataset alone or inside a batch therefore gives identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from . import autodiff as ad
from .errors import CurvatureFailure, NonFiniteValue, NotPositiveDefinite
from .mathcore import LOG_2PI, GaussianApprox, RngStream, cholesky, gaussian_log_density, log_sum_exp
from .models import Data, ModelSpec, stack_data

LAPLACE_LR = (0.01, 0.001)
VI_LR = (0.001, 0.0001)
JITTER_STEPS = 9
_NOISE_BLOCK = 256


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    """Adam moments plus a two-phase step-size schedule.

    ``step_count``, ``m`` and ``v`` may carry leading batch dimensions; every
    problem in a batch then advances independently.
    """

    m: np.ndarray
    v: np.ndarray
    step_count: np.ndarray
    lr_first: float
    lr_second: float
    total_iters: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr_first: float, lr_second: float, total_iters: int, **kw) -> "AdamState":
        shape = (int(shape),) if np.isscalar(shape) else tuple(shape)
        return cls(
            m=np.zeros(shape),
            v=np.zeros(shape),
            step_count=np.zeros(shape[:-1], dtype=np.int64),
            lr_first=lr_first,
            lr_second=lr_second,
            total_iters=total_iters,
            **kw,
        )

    def learning_rate(self) -> np.ndarray:
        """Step size for the next update: first value for the first half."""
        return np.where(self.step_count < self.total_iters / 2, self.lr_first, self.lr_second)


def adam_update(state: AdamState, params, grad, active=None) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam ascent step.

    ``active`` optionally masks batch rows; inactive rows keep their
    parameters and moments and do not advance ``step_count``.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    b1, b2 = state.beta1, state.beta2
    lr = state.learning_rate()
    t = state.step_count + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1 ** t)[..., None]
    v_hat = v / (1.0 - b2 ** t)[..., None]
    new_params = params + lr[..., None] * m_hat / (np.sqrt(v_hat) + state.eps)
    if active is not None:
        keep = ~np.asarray(active, dtype=bool)
        m = np.where(keep[..., None], state.m, m)
        v = np.where(keep[..., None], state.v, v)
        t = np.where(keep, state.step_count, t)
        new_params = np.where(keep[..., None], params, new_params)
    return replace(state, m=m, v=v, step_count=t), new_params


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True, eq=False)
class Terminal:
    """Optimizer end point used by Laplace's method."""

    z_hat: np.ndarray
    grad: np.ndarray
    hessian: np.ndarray
    jitter: float = 0.0


@dataclass(frozen=True, eq=False)
class FitReport:
    q: GaussianApprox
    objective_trace: np.ndarray
    method: str
    iterations: int
    seed: int | None = None
    terminal: Terminal | None = None
    skipped_steps: int = 0
    M: int = 1
    extra: dict = field(default_factory=dict)


def _row_batch(datas: Sequence[Data]) -> dict[str, np.ndarray]:
    return stack_data(list(datas))


def _values_and_grads(model: ModelSpec, U, batch):
    """Batched log-joint values and gradients without raising on non-finite rows."""
    tape = ad.Tape()
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        u = tape.variable(U)
        out = model.log_joint_unconstrained(u, batch)
        vals = out.value.reshape(-1).copy()
        grads = tape.backward(out)[u.index]
    ok = np.isfinite(vals) & np.all(np.isfinite(grads), axis=1)
    return vals, grads, ok


# ---------------------------------------------------------------------------
# Laplace


def _negative_hessian_factor(H: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of -H, adding diagonal jitter if needed."""
    if not np.all(np.isfinite(H)):
        raise CurvatureFailure("Hessian has non-finite entries")
    A = -H
    try:
        return cholesky(A), 0.0
    except NotPositiveDefinite:
        pass
    scale = float(np.mean(np.abs(np.diag(A)))) or 1.0
    d = A.shape[0]
    for k in range(JITTER_STEPS):
        jitter = 1e-8 * scale * 10.0**k
        try:
            return cholesky(A + jitter * np.eye(d)), jitter
        except NotPositiveDefinite:
            continue
    raise CurvatureFailure("negative Hessian is not positive-definite after maximal jitter")


def _laplace_from_terminal(z_hat, grad, H, adjusted: bool) -> tuple[GaussianApprox, float]:
    Lp, jitter = _negative_hessian_factor(H)
    d = z_hat.size
    cov = cho_solve((Lp, True), np.eye(d))
    try:
        chol = cholesky(0.5 * (cov + cov.T))
    except (NotPositiveDefinite, ValueError) as exc:
        raise CurvatureFailure(f"covariance factorization failed: {exc}") from None
    mean = z_hat
    if adjusted:
        # Newton step z_hat - H^{-1} g with H the (jittered) Hessian
        mean = z_hat + cho_solve((Lp, True), grad)
    return GaussianApprox(mean, chol), jitter


def laplace_batch(
    model: ModelSpec, datas: Sequence[Data], iters: int, adjusted: bool = False
) -> list[FitReport | CurvatureFailure]:
    """Laplace's method on several datasets at once.

    Adam ascends log p(z, x) from z = 0 for ``iters`` steps (step size 0.01
    then 0.001); the covariance is -H^{-1} at the end point. Problems whose
    curvature cannot be repaired come back as :class:`CurvatureFailure`
    instances instead of raising.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    B, d = len(datas), model.dim
    batch = _row_batch(datas)
    U = np.zeros((B, d))
    state = AdamState.fresh((B, d), *LAPLACE_LR, total_iters=iters)
    trace = np.empty((B, iters))
    skipped = np.zeros(B, dtype=np.int64)
    for it in range(iters):
        vals, grads, ok = _values_and_grads(model, U, batch)
        trace[:, it] = np.where(ok, vals, np.nan)
        skipped += ~ok
        state, U = adam_update(state, U, np.where(ok[:, None], grads, 0.0), active=ok)
    vals, grads, ok = _values_and_grads(model, U, batch)
    with np.errstate(all="ignore"):
        H = ad.batch_hessian(lambda u: model.log_joint_unconstrained(u, batch), U, check_finite=False)
    method = "laplace-adjusted" if adjusted else "laplace"
    out: list[FitReport | CurvatureFailure] = []
    for b in range(B):
        if not ok[b]:
            out.append(CurvatureFailure("log-joint or gradient is non-finite at the optimizer end point"))
            continue
        try:
            q, jitter = _laplace_from_terminal(U[b], grads[b], H[b], adjusted)
        except CurvatureFailure as exc:
            out.append(exc)
            continue
        terminal = Terminal(U[b].copy(), grads[b].copy(), H[b].copy(), jitter)
        out.append(FitReport(q, trace[b].copy(), method, iters, None, terminal, int(skipped[b])))
    return out


def laplace_fit(model: ModelSpec, data: Data, iters: int, seed: int | None = None) -> FitReport:
    """Laplace approximation for one dataset.

    The method is deterministic; ``seed`` is only recorded.

    Raises:
        CurvatureFailure: if -H cannot be made positive-definite.
    """
    res = laplace_batch(model, [data], iters)[0]
    if isinstance(res, Exception):
        raise res
    return replace(res, seed=seed)


def laplace_adjust(report: FitReport) -> GaussianApprox:
    """Shift the Laplace mean by a Newton step so gradients match at z_hat.

    With mean ``z_hat - H^{-1} g`` the approximation satisfies
    ``grad log q(z_hat) = g``.
    """
    if report.terminal is None:
        raise ValueError("report has no optimizer end point; was it produced by laplace_fit?")
    t = report.terminal
    if t.jitter == 0.0:
        q, _ = _laplace_from_terminal(t.z_hat, t.grad, t.hessian, adjusted=True)
        return q
    L = report.q.chol
    return GaussianApprox(t.z_hat + L @ (L.T @ t.grad), L)


# ---------------------------------------------------------------------------
# variational inference

ESTIMATORS = ("stl", "reparam")


def _tril_layout(d: int):
    rows, cols = np.tril_indices(d)
    return rows, cols, rows == cols


def _unpack(params: np.ndarray, d: int, layout):
    """(B, P) parameter rows -> means (B, d) and Cholesky factors (B, d, d)."""
    rows, cols, diag = layout
    mu = params[:, :d]
    raw = params[:, d:]
    L = np.zeros((params.shape[0], d, d))
    L[:, rows, cols] = np.where(diag, np.exp(raw), raw)
    return mu, L


def _pack(mu: np.ndarray, L: np.ndarray, layout) -> np.ndarray:
    rows, cols, diag = layout
    raw = L[:, rows, cols]
    raw = np.where(diag, np.log(np.where(diag, raw, 1.0)), raw)
    return np.concatenate([mu, raw], axis=1)


def _param_gradient(gz, eps, L, weights, layout, entropy: bool) -> np.ndarray:
    """Chain the z-gradients of z = mu + L eps back to packed parameters.

    ``gz`` and ``eps`` have shape (B, M, d); ``weights`` (B, M) combine the M
    per-sample gradients.
    """
    rows, cols, diag = layout
    wg = weights[:, :, None] * gz
    g_mu = wg.sum(axis=1)
    g_L = np.einsum("bmi,bmj->bij", wg, eps)
    g_raw = g_L[:, rows, cols]
    g_raw = np.where(diag, g_raw * L[:, rows, cols], g_raw)
    if entropy:
        # d/d log L_ii of sum_i log L_ii
        g_raw = g_raw + diag
    return np.concatenate([g_mu, g_raw], axis=1)


def _sample_z(mu, L, eps):
    return mu[:, None, :] + np.einsum("bij,bmj->bmi", L, eps)


def _objective_and_gradient(model, batch_rep, mu, L, eps, layout, estimator):
    """Per-problem IW-ELBO sample value (B,) and packed gradient (B, P)."""
    B, M, d = eps.shape
    z = _sample_z(mu, L, eps)
    vals, gz, ok = _values_and_grads(model, z.reshape(B * M, d), batch_rep)
    vals = vals.reshape(B, M)
    gz = gz.reshape(B, M, d)
    ok = ok.reshape(B, M).all(axis=1)
    log_diag = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    log_q = -0.5 * d * LOG_2PI - log_diag[:, None] - 0.5 * np.sum(eps * eps, axis=2)
    with np.errstate(invalid="ignore", over="ignore"):
        log_w = vals - log_q
        top = np.max(log_w, axis=1, keepdims=True)
        e = np.exp(log_w - top)
        total = e.sum(axis=1, keepdims=True)
        value = (top + np.log(total))[:, 0] - math.log(M)
        weights = e / total
        if estimator == "stl":
            # grad log q with parameters held fixed is -L^{-T} eps
            lt_inv_eps = np.linalg.solve(np.swapaxes(L, 1, 2), np.swapaxes(eps, 1, 2))
            gz = gz + np.swapaxes(lt_inv_eps, 1, 2)
        grad = _param_gradient(gz, eps, L, weights, layout, entropy=(estimator == "reparam"))
    ok &= np.isfinite(value) & np.all(np.isfinite(grad), axis=1)
    return value, grad, ok


def vi_batch(
    model: ModelSpec,
    datas: Sequence[Data],
    rngs: Sequence[RngStream],
    iters: int,
    M: int = 1,
    estimator: str = "stl",
) -> list[FitReport]:
    """Gaussian VI on several datasets at once.

    Starts every problem at N(0, I) and runs Adam (step size 1e-3, then
    1e-4) on the mean and a log-diagonal Cholesky factor. With ``M == 1``
    the objective is the ELBO and ``estimator`` picks the sticking-the-
    landing or plain reparameterization gradient; with ``M > 1`` it is the
    importance-weighted ELBO with the plain reparameterization gradient.
    Each step uses one draw of M samples per problem from that problem's
    stream. Steps with a non-finite objective or gradient are skipped.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if M < 1:
        raise ValueError("M must be at least 1")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    if M > 1 and estimator == "stl":
        raise ValueError("the sticking-the-landing estimator is only defined for M = 1")
    B, d = len(datas), model.dim
    if len(rngs) != B:
        raise ValueError("need one random stream per dataset")
    batch = _row_batch(datas)
    batch_rep = {k: np.repeat(v, M, axis=0) for k, v in batch.items()}
    layout = _tril_layout(d)
    params = _pack(np.zeros((B, d)), np.broadcast_to(np.eye(d), (B, d, d)).copy(), layout)
    state = AdamState.fresh(params.shape, *VI_LR, total_iters=iters)
    trace = np.empty((B, iters))
    skipped = np.zeros(B, dtype=np.int64)
    noise = None
    for it in range(iters):
        j = it % _NOISE_BLOCK
        if j == 0:
            n = min(_NOISE_BLOCK, iters - it)
            noise = np.stack([r.gen.standard_normal((n, M, d)) for r in rngs])
        eps = noise[:, j]
        mu, L = _unpack(params, d, layout)
        value, grad, ok = _objective_and_gradient(model, batch_rep, mu, L, eps, layout, estimator)
        trace[:, it] = np.where(ok, value, np.nan)
        skipped += ~ok
        state, params = adam_update(state, params, np.where(ok[:, None], grad, 0.0), active=ok)
    mu, L = _unpack(params, d, layout)
    method = "vi" if M == 1 else "iwvi"
    return [
        FitReport(GaussianApprox(mu[b], L[b]), trace[b].copy(), method, iters, None, None, int(skipped[b]), M,
                  {"estimator": estimator})
        for b in range(B)
    ]


def vi_fit(model: ModelSpec, data: Data, iters: int, seed: int, estimator: str = "stl") -> FitReport:
    """VI for one dataset, noise drawn from ``RngStream(seed, 0)``."""
    rep = vi_batch(model, [data], [RngStream(seed, 0)], iters, 1, estimator)[0]
    return replace(rep, seed=seed)


def iwvi_fit(model: ModelSpec, data: Data, M: int, iters: int, seed: int) -> FitReport:
    """Importance-weighted VI for one dataset; M = 1 is plain reparameterized VI."""
    rep = vi_batch(model, [data], [RngStream(seed, 0)], iters, M, "reparam")[0]
    return replace(rep, seed=seed)


def _q_gradient(model, data, mean, chol, rng, estimator):
    d = model.dim
    mean = np.asarray(mean, dtype=float)
    chol = np.asarray(chol, dtype=float)
    eps = rng.gen.standard_normal((1, 1, d))
    batch = {k: np.asarray(v, dtype=float)[None, :] for k, v in data.items()}
    layout = _tril_layout(d)
    z = _sample_z(mean[None], chol[None], eps)
    vals, gz, ok = _values_and_grads(model, z.reshape(1, d), batch)
    if not ok[0]:
        raise NonFiniteValue("log-joint or its gradient is non-finite at the sampled point")
    gz = gz.reshape(1, 1, d)
    if estimator == "stl":
        gz = gz + np.linalg.solve(chol.T, eps[0, 0])[None, None, :]
    g_mu = gz[0, 0]
    g_L = np.tril(np.outer(gz[0, 0], eps[0, 0]))
    if estimator == "reparam":
        g_L = g_L + np.diag(1.0 / np.diag(chol))
    return g_mu, g_L


def stl_gradient(mean, chol, model: ModelSpec, data: Data, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample sticking-the-landing ELBO gradient.

    Differentiates log p(mean + L eps) - log q(mean + L eps) holding the
    parameters inside log q fixed. Returns gradients with respect to the
    mean and to the lower-triangular entries of ``chol``.
    """
    return _q_gradient(model, data, mean, chol, rng, "stl")


def reparam_gradient(mean, chol, model: ModelSpec, data: Data, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample reparameterization ELBO gradient including the entropy term."""
    return _q_gradient(model, data, mean, chol, rng, "reparam")


def log_weights(model: ModelSpec, data: Data, q: GaussianApprox, Z) -> np.ndarray:
    """log p(z_m, x) - log q(z_m | x) for each row of ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    lp = model.log_joint_many(Z, data)
    lq = np.array([gaussian_log_density(z, q) for z in Z])
    return lp - lq


def elbo_estimate(model: ModelSpec, data: Data, q: GaussianApprox, n_samples: int, rng: RngStream) -> float:
    """Monte-Carlo ELBO with ``n_samples`` reparameterized draws from q."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    eps = rng.gen.standard_normal((n_samples, q.dim))
    lw = log_weights(model, data, q, q.mean + eps @ q.chol.T)
    if not np.all(np.isfinite(lw)):
        raise NonFiniteValue("non-finite log-weight")
    return float(np.mean(lw))


def iw_elbo_estimate(model: ModelSpec, data: Data, q: GaussianApprox, M: int, rng: RngStream) -> float:
    """One importance-weighted ELBO draw: ln of the mean of M weights."""
    if M < 1:
        raise ValueError("M must be at least 1")
    eps = rng.gen.standard_normal((M, q.dim))
    lw = log_weights(model, data, q, q.mean + eps @ q.chol.T)
    if not np.all(np.isfinite(lw)):
        raise NonFiniteValue("non-finite log-weight")
    return log_sum_exp(lw) - math.log(M)


# ---------------------------------------------------------------------------
# fitters: (model, data, rng) -> GaussianApprox


class Fitter:
    """Inference procedure with its budget fixed.

    Subclasses implement :meth:`fit_batch`; :meth:`fit` is the one-dataset
    case. Failures inside a batch are returned, not raised.
    """

    method = "fitter"
    M = 1

    def fit_batch(self, model: ModelSpec, datas: Sequence[Data], rngs: Sequence[RngStream]) -> list:
        raise NotImplementedError

    def fit(self, model: ModelSpec, data: Data, rng: RngStream) -> GaussianApprox:
        res = self.fit_batch(model, [data], [rng])[0]
        if isinstance(res, Exception):
            raise res
        return res


class LaplaceFitter(Fitter):
    def __init__(self, iters: int, adjusted: bool = False):
        self.iters = int(iters)
        self.adjusted = adjusted
        self.method = "laplace-adjusted" if adjusted else "laplace"

    def fit_batch(self, model, datas, rngs):
        res = laplace_batch(model, datas, self.iters, self.adjusted)
        return [r if isinstance(r, Exception) else r.q for r in res]


class VIFitter(Fitter):
    def __init__(self, iters: int, M: int = 1, estimator: str | None = None):
        self.iters = int(iters)
        self.M = int(M)
        self.estimator = estimator or ("stl" if M == 1 else "reparam")
        self.method = "vi" if M == 1 else "iwvi"

    def fit_batch(self, model, datas, rngs):
        return [r.q for r in vi_batch(model, datas, rngs, self.iters, self.M, self.estimator)]


class ExactFitter(Fitter):
    """Closed-form posterior of a conjugate model."""

    method = "exact"

    def fit_batch(self, model, datas, rngs):
        out = []
        for data in datas:
            q = model.exact_posterior(data)
            if q is None:
                raise ValueError(f"model {model.name!r} has no closed-form posterior")
            out.append(q)
        return out


class PerturbedExactFitter(Fitter):
    """Exact posterior with its covariance scaled and its mean shifted.

    A deliberately wrong fitter with closed-form divergence, for testing.
    """

    method = "perturbed-exact"

    def __init__(self, variance_scale: float = 1.0, mean_shift: float = 0.0):
        self.variance_scale = float(variance_scale)
        self.mean_shift = float(mean_shift)

    def fit_batch(self, model, datas, rngs):
        out = []
        for q in ExactFitter().fit_batch(model, datas, rngs):
            out.append(GaussianApprox(q.mean + self.mean_shift, q.chol * math.sqrt(self.variance_scale)))
        return out
