"""Symmetric-KL diagnostics estimated over simulated datasets.

Each repetition simulates ``(z, x)`` from the model, fits ``q(z | x)`` with a
fresh run of the inference method, draws ``z~`` from ``q`` and records

    d = [log p(z, x) - log q(z | x)] - [log p(z~, x) - log q(z~ | x)].

The average of d over repetitions estimates the symmetric KL divergence
between p(z, x) and p(x) q(z | x), with a normal-theory confidence interval.
The variants for conditional models, augmented approximations and
importance weighting follow the same pattern.

Repetition ``k`` is driven by ``RngStream(master_seed, k)``, split into
child streams: 0 simulates the data, 1 feeds the fitter, 2 draws from q and
3 draws auxiliary variables. Results are reduced in repetition order and do
not depend on how repetitions are grouped or scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .errors import AllRepetitionsFailed, CurvatureFailure, NonFiniteValue
from .inference import Fitter, log_weights
from .mathcore import GaussianApprox, RngStream, gaussian_sample, log_sum_exp, softmax
from .models import Data, ModelSpec

SIM, FIT, EVAL, AUX = 0, 1, 2, 3
# per-repetition failures that are counted rather than raised
REP_FAILURES = (CurvatureFailure, NonFiniteValue)


def summarize(d_values, level: float = 0.95) -> tuple[float, float, tuple[float, float]]:
    """Mean, standard error and normal-theory confidence interval.

    >>> summarize([1.0, 2.0, 3.0])[:2]
    (2.0, 0.5773502691896258)
    """
    d = np.asarray(d_values, dtype=float)
    if d.ndim != 1 or d.size < 2:
        raise ValueError("need at least two values to summarize")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    mean = float(np.mean(d))
    se = float(np.std(d, ddof=1) / math.sqrt(d.size))
    half = NormalDist().inv_cdf(0.5 + level / 2.0) * se
    return mean, se, (mean - half, mean + half)


@dataclass(frozen=True, eq=False)
class DiagnosticResult:
    """Per-repetition values d_k and their summary.

    Failed repetitions are excluded from ``d_values`` and counted in
    ``metadata["failure_count"]``.
    """

    d_values: np.ndarray
    mean: float
    std_error: float
    ci: tuple[float, float]
    level: float
    metadata: dict = field(default_factory=dict)

    @property
    def failure_count(self) -> int:
        return int(self.metadata.get("failure_count", 0))

    @property
    def K(self) -> int:
        return int(self.metadata.get("K", self.d_values.size))


def _result(values: list, level: float, metadata: dict) -> DiagnosticResult:
    ok = [v for v in values if not isinstance(v, Exception)]
    failures = len(values) - len(ok)
    if not ok:
        raise AllRepetitionsFailed(f"all {len(values)} repetitions failed; first error: {values[0]!r}")
    d = np.array(ok, dtype=float)
    if d.size >= 2:
        mean, se, ci = summarize(d, level)
    else:
        mean, se, ci = float(d[0]), math.nan, (math.nan, math.nan)
    meta = dict(metadata, K=len(values), failure_count=failures)
    return DiagnosticResult(d, mean, se, ci, level, meta)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Augmentation:
    """Augmenting distribution p(h | z, x) over unconstrained latents z."""

    simulate: Callable[[np.ndarray, Data, RngStream], np.ndarray]
    log_density: Callable[[np.ndarray, np.ndarray, Data], float]


class FactorizedAugmentedApprox:
    """q(z, h | x) = q(z | x) q(h | z, x)."""

    def __init__(self, q_z: GaussianApprox, sample_h, log_density_h, data: Data):
        self.q_z = q_z
        self._sample_h = sample_h
        self._log_density_h = log_density_h
        self._data = data

    def sample(self, rng: RngStream):
        z = gaussian_sample(self.q_z, rng)
        return z, self._sample_h(z, self._data, rng)

    def log_density_terms(self, z, h) -> tuple[float, float]:
        return self.q_z.log_density(z), float(self._log_density_h(h, z, self._data))


class FactorizedAugmentedFitter(Fitter):
    """Pairs a base fitter for q(z | x) with a fixed conditional q(h | z, x)."""

    def __init__(self, base: Fitter, sample_h, log_density_h):
        self.base = base
        self.sample_h = sample_h
        self.log_density_h = log_density_h
        self.method = f"{base.method}+aug"

    def fit_batch(self, model, datas, rngs):
        out = []
        for q, data in zip(self.base.fit_batch(model, datas, rngs), datas):
            out.append(q if isinstance(q, Exception) else FactorizedAugmentedApprox(q, self.sample_h, self.log_density_h, data))
        return out


# ---------------------------------------------------------------------------
# per-repetition values


def _log_ratio(model, data, q, z) -> float:
    lw = float(log_weights(model, data, q, np.asarray(z)[None, :])[0])
    if not math.isfinite(lw):
        raise NonFiniteValue("non-finite log p - log q")
    return lw


def _joint_value(model, data, q, u, stream) -> float:
    z_tilde = gaussian_sample(q, stream.child(EVAL))
    return _log_ratio(model, data, q, u) - _log_ratio(model, data, q, z_tilde)


def _iw_value(model, data, q, u, M, stream) -> float:
    aux, ev = stream.child(AUX), stream.child(EVAL)
    block = [u] + [gaussian_sample(q, aux) for _ in range(M - 1)]
    tilde = [gaussian_sample(q, ev) for _ in range(M)]
    return iw_log_ratio(model, data, q, block) - iw_log_ratio(model, data, q, tilde)


def iw_log_ratio(model: ModelSpec, data: Data, q: GaussianApprox, Z) -> float:
    """ln sum_m p(z_m, x) / q(z_m | x), independent of the order of ``Z``."""
    lw = log_weights(model, data, q, np.asarray(Z, dtype=float))
    value = log_sum_exp(lw)
    if not math.isfinite(value):
        raise NonFiniteValue("non-finite importance-weight sum")
    return value


def _augmented_value(model, data, qa, u, augmentation, stream) -> float:
    h = augmentation.simulate(u, data, stream.child(AUX))
    z_t, h_t = qa.sample(stream.child(EVAL))

    def bracket(z, hh):
        lq_z, lq_h = qa.log_density_terms(z, hh)
        lp_z = model.log_joint(z, data)
        lp_h = float(augmentation.log_density(hh, z, data))
        return (lp_z - lq_z) + (lp_h - lq_h)

    value = bracket(u, h) - bracket(z_t, h_t)
    if not math.isfinite(value):
        raise NonFiniteValue("non-finite augmented log-ratio")
    return value


def _run_chunk(args) -> list:
    kind, model, fitter, master_seed, indices, M, augmentation = args
    streams = [RngStream(master_seed, k) for k in indices]
    sims = [model.simulate(s.child(SIM)) for s in streams]
    datas = [data for _, data in sims]
    fits = fitter.fit_batch(model, datas, [s.child(FIT) for s in streams])
    out = []
    for (u, data), q, stream in zip(sims, fits, streams):
        if isinstance(q, REP_FAILURES):
            out.append(q)
            continue
        try:
            if kind == "joint":
                out.append(_joint_value(model, data, q, u, stream))
            elif kind == "iw":
                out.append(_iw_value(model, data, q, u, M, stream))
            else:
                out.append(_augmented_value(model, data, q, u, augmentation, stream))
        except REP_FAILURES as exc:
            out.append(exc)
    return out


def _chunks(K: int, parallelism: int) -> list[range]:
    n = max(1, min(parallelism, K))
    bounds = np.linspace(0, K, n + 1).round().astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(n) if bounds[i + 1] > bounds[i]]


def _run(kind, model, fitter, K, master_seed, parallelism, M=1, augmentation=None) -> list:
    if K < 2:
        raise ValueError("K must be at least 2 so a standard error is defined")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    jobs = [(kind, model, fitter, master_seed, list(r), M, augmentation) for r in _chunks(K, parallelism)]
    if len(jobs) == 1:
        parts = [_run_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    return [v for part in parts for v in part]


def _single(kind, model, fitter, rng, M=1, augmentation=None) -> float:
    """One repetition driven by the stream ``rng``; failures are raised."""
    stream = rng
    u, data = model.simulate(stream.child(SIM))
    q = fitter.fit(model, data, stream.child(FIT))
    if kind == "joint":
        return _joint_value(model, data, q, u, stream)
    if kind == "iw":
        return _iw_value(model, data, q, u, M, stream)
    return _augmented_value(model, data, q, u, augmentation, stream)


def _meta(model, fitter, master_seed, M, **extra) -> dict:
    meta = {
        "model": model.name,
        "method": getattr(fitter, "method", type(fitter).__name__),
        "iters": getattr(fitter, "iters", None),
        "M": M,
        "seed": master_seed,
    }
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# public estimators


def diagnostic_rep_joint(model: ModelSpec, fitter: Fitter, rng: RngStream) -> float:
    """One d_k for the joint diagnostic."""
    return _single("joint", model, fitter, rng)


def sdos_joint(
    model: ModelSpec, fitter: Fitter, K: int, master_seed: int, parallelism: int = 1, level: float = 0.95
) -> DiagnosticResult:
    """Joint symmetric-KL diagnostic averaged over K simulated datasets."""
    values = _run("joint", model, fitter, K, master_seed, parallelism)
    return _result(values, level, _meta(model, fitter, master_seed, 1))


def sdos_conditional(
    model: ModelSpec,
    fitter: Fitter,
    K: int,
    master_seed: int,
    parallelism: int = 1,
    level: float = 0.95,
    covariates=None,
) -> DiagnosticResult:
    """Diagnostic for p(z, y | x) with the covariates x held fixed.

    Only the latents and responses are simulated in each repetition. Pass
    ``covariates`` to replace the model's design before running.
    """
    if covariates is not None:
        model = model.with_covariates(covariates)
    if model.covariates is None:
        raise ValueError(f"model {model.name!r} has no covariates to condition on")
    values = _run("joint", model, fitter, K, master_seed, parallelism)
    return _result(values, level, _meta(model, fitter, master_seed, 1, conditional=True))


def sdos_augmented(
    model: ModelSpec,
    augmentation: Augmentation,
    aug_fitter: Fitter,
    K: int,
    master_seed: int,
    parallelism: int = 1,
    level: float = 0.95,
) -> DiagnosticResult:
    """Diagnostic for an approximation q(z, h | x) of p(z, x) p(h | z, x).

    The estimate upper-bounds the divergence of the marginal q(z | x).
    """
    values = _run("augmented", model, aug_fitter, K, master_seed, parallelism, augmentation=augmentation)
    return _result(values, level, _meta(model, aug_fitter, master_seed, 1, augmented=True))


def diagnostic_rep_augmented(model: ModelSpec, augmentation: Augmentation, aug_fitter: Fitter, rng: RngStream) -> float:
    return _single("augmented", model, aug_fitter, rng, augmentation=augmentation)


def sample_qiw(q: GaussianApprox, model: ModelSpec, data: Data, M: int, rng: RngStream) -> np.ndarray:
    """Draw from the augmented self-normalized importance sampler.

    Draws M proposals from q, picks one with probability proportional to
    p / q, moves it to the front and keeps the rest in their original order.
    Returns shape (M, d).
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    Z = np.stack([gaussian_sample(q, rng) for _ in range(M)])
    if M == 1:
        return Z
    lw = log_weights(model, data, q, Z)
    if not np.any(np.isfinite(lw)) or np.any(np.isnan(lw)):
        raise NonFiniteValue("importance weights are undefined")
    m = int(rng.gen.choice(M, p=softmax(lw)))
    order = [m] + [i for i in range(M) if i != m]
    return Z[order]


def diagnostic_rep_iw(model: ModelSpec, fitter: Fitter, M: int, rng: RngStream) -> float:
    """One d_k for the importance-weighted diagnostic with M samples."""
    if M < 1:
        raise ValueError("M must be at least 1")
    return _single("iw", model, fitter, rng, M=M)


def sdos_iw(
    model: ModelSpec,
    fitter: Fitter,
    M: int,
    K: int,
    master_seed: int,
    parallelism: int = 1,
    level: float = 0.95,
) -> DiagnosticResult:
    """Importance-weighted diagnostic; M = 1 reproduces :func:`sdos_joint`."""
    if M < 1:
        raise ValueError("M must be at least 1")
    values = _run("iw", model, fitter, K, master_seed, parallelism, M=M)
    return _result(values, level, _meta(model, fitter, master_seed, M))
