"""Benchmark models and conjugate toys.

Every model exposes the same surface:

* ``simulate_latent(rng)`` draws constrained latents from the prior;
* ``simulate_data(z, rng)`` draws a dataset given constrained latents;
* ``log_joint_unconstrained(u, data)`` evaluates log p(z(u), x) plus the
  log-Jacobian of u -> z. It is written with :mod:`sdos.autodiff` primitives,
  takes latents of shape (B, d) and data fields of shape (B, k) (or (k,)),
  and returns shape (B, 1);
* ``log_joint_constrained(z, data)`` evaluates log p(z, x) for one latent
  vector in its natural space with scipy.stats; it shares no code with the
  unconstrained route.

Datasets are dicts mapping field names to 1-D float arrays.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from . import autodiff as ad
from .errors import DimensionError
from .mathcore import (
    LOG_2PI,
    GaussianApprox,
    Interval,
    Positive,
    Real,
    RngStream,
    TransformSpec,
    to_unconstrained,
)

Data = Mapping[str, np.ndarray]


def stack_data(datasets: Sequence[Data]) -> dict[str, np.ndarray]:
    """Stack per-repetition datasets field-wise into (B, k) arrays."""
    keys = datasets[0].keys()
    return {k: np.stack([np.asarray(d[k], dtype=float) for d in datasets]) for k in keys}


def _log_choose(n, k):
    return special.gammaln(n + 1.0) - special.gammaln(k + 1.0) - special.gammaln(n - k + 1.0)


def _normal_logpdf(x, mean, var):
    """Elementwise log N(x; mean, var) for a known constant variance."""
    return -0.5 * (LOG_2PI + math.log(var)) - 0.5 * ad.square(x - mean) / var


class ModelSpec:
    """A joint density p(z, x) in unconstrained coordinates.

    Subclasses set ``name``, ``param_names`` and ``transform`` and implement
    the four methods listed in the module docstring.
    """

    name: str = "model"
    param_names: tuple[str, ...] = ()
    transform: TransformSpec = TransformSpec(())
    covariates: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.transform)

    def simulate_latent(self, rng: RngStream) -> np.ndarray:
        raise NotImplementedError

    def simulate_data(self, z: np.ndarray, rng: RngStream) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def log_joint_unconstrained(self, u, data: Data):
        raise NotImplementedError

    def log_joint_constrained(self, z, data: Data) -> float:
        raise NotImplementedError

    def exact_posterior(self, data: Data) -> GaussianApprox | None:
        """Closed-form posterior over unconstrained latents, if available."""
        return None

    # convenience wrappers -------------------------------------------------

    def simulate(self, rng: RngStream) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Draw ``(u, data)`` with ``u`` the unconstrained latent."""
        z = self.simulate_latent(rng)
        data = self.simulate_data(z, rng)
        u, _ = to_unconstrained(z, self.transform)
        return u, data

    def log_joint(self, u, data: Data) -> float:
        """log p(u, x) at one unconstrained point."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise DimensionError(f"expected {self.dim} latents, got shape {u.shape}")
        batch = {k: np.asarray(v, dtype=float)[None, :] for k, v in data.items()}
        return float(np.asarray(self.log_joint_unconstrained(u[None, :], batch)).reshape(-1)[0])

    def log_joint_many(self, U, data: Data) -> np.ndarray:
        """log p(u_m, x) for each row of ``U`` under one shared dataset."""
        U = np.asarray(U, dtype=float)
        batch = {k: np.asarray(v, dtype=float)[None, :] for k, v in data.items()}
        return np.asarray(self.log_joint_unconstrained(U, batch)).reshape(-1)

    def batch_value_and_grad(self, U, batch: Data) -> tuple[np.ndarray, np.ndarray]:
        """Values and gradients for row ``b`` of ``U`` under dataset row ``b``."""
        return ad.batch_value_and_grad(lambda u: self.log_joint_unconstrained(u, batch), U)

    def batch_hessian(self, U, batch: Data) -> np.ndarray:
        return ad.batch_hessian(lambda u: self.log_joint_unconstrained(u, batch), U)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


# ---------------------------------------------------------------------------


class GaussianToy(ModelSpec):
    """z ~ N(0, prior_var), x | z ~ N(z, noise_var), a single observation."""

    param_names = ("z",)
    transform = TransformSpec.real(1)

    def __init__(self, prior_var: float = 1.0, noise_var: float = 1.0):
        if not (prior_var > 0 and noise_var > 0):
            raise ValueError("variances must be positive")
        self.prior_var = float(prior_var)
        self.noise_var = float(noise_var)
        self.name = "gaussian_toy"

    @property
    def posterior_var(self) -> float:
        return 1.0 / (1.0 / self.prior_var + 1.0 / self.noise_var)

    def posterior_mean(self, x: float) -> float:
        return self.posterior_var * x / self.noise_var

    def log_evidence(self, data: Data) -> float:
        """log p(x) = log N(x; 0, prior_var + noise_var)."""
        x = float(np.asarray(data["x"])[0])
        return float(stats.norm.logpdf(x, 0.0, math.sqrt(self.prior_var + self.noise_var)))

    def simulate_latent(self, rng):
        return np.array([rng.gen.normal(0.0, math.sqrt(self.prior_var))])

    def simulate_data(self, z, rng):
        return {"x": np.array([rng.gen.normal(z[0], math.sqrt(self.noise_var))])}

    def log_joint_unconstrained(self, u, data):
        z = u[:, 0:1]
        return _normal_logpdf(z, 0.0, self.prior_var) + _normal_logpdf(data["x"], z, self.noise_var)

    def log_joint_constrained(self, z, data):
        x = float(np.asarray(data["x"])[0])
        return float(
            stats.norm.logpdf(z[0], 0.0, math.sqrt(self.prior_var))
            + stats.norm.logpdf(x, z[0], math.sqrt(self.noise_var))
        )

    def exact_posterior(self, data):
        x = float(np.asarray(data["x"])[0])
        return GaussianApprox([self.posterior_mean(x)], [[math.sqrt(self.posterior_var)]])


def gaussian_toy(prior_var: float = 1.0, noise_var: float = 1.0) -> GaussianToy:
    return GaussianToy(prior_var, noise_var)


# ---------------------------------------------------------------------------


class GlmBinomial(ModelSpec):
    """Quadratic-trend binomial GLM with a logit link.

    alpha, beta1, beta2 ~ N(0, 10^2); c_i ~ Binomial(n_i, logistic(eta_i))
    with eta_i = alpha + beta1 x_i + beta2 x_i^2 and x_i equally spaced on
    [-1, 1].
    """

    name = "glm_binomial"
    param_names = ("alpha", "beta1", "beta2")
    transform = TransformSpec.real(3)
    prior_sd = 10.0

    def __init__(self, n_years: int = 40, trials=50):
        self.x = np.linspace(-1.0, 1.0, n_years)
        self.trials = np.broadcast_to(np.asarray(trials, dtype=float), (n_years,)).copy()

    def _eta(self, alpha, b1, b2):
        return alpha + b1 * self.x + b2 * (self.x * self.x)

    def simulate_latent(self, rng):
        return rng.gen.normal(0.0, self.prior_sd, size=3)

    def simulate_data(self, z, rng):
        p = ad.logistic(self._eta(*z))
        return {"c": rng.gen.binomial(self.trials.astype(np.int64), p).astype(float)}

    def log_joint_unconstrained(self, u, data):
        var = self.prior_sd**2
        alpha, b1, b2 = u[:, 0:1], u[:, 1:2], u[:, 2:3]
        prior = _normal_logpdf(alpha, 0.0, var) + _normal_logpdf(b1, 0.0, var) + _normal_logpdf(b2, 0.0, var)
        c = data["c"]
        eta = self._eta(alpha, b1, b2)
        lik = _log_choose(self.trials, c) + c * eta - self.trials * ad.log1pexp(eta)
        return prior + ad.sum(lik)

    def log_joint_constrained(self, z, data):
        p = special.expit(self._eta(*z))
        return float(
            np.sum(stats.norm.logpdf(z, 0.0, self.prior_sd))
            + np.sum(stats.binom.logpmf(np.asarray(data["c"]), self.trials, p))
        )


def glm_binomial(n_years: int = 40, trials=50) -> GlmBinomial:
    return GlmBinomial(n_years, trials)


# ---------------------------------------------------------------------------


class HeartTransplants(ModelSpec):
    """Surgery survival model.

    p_T ~ Uniform(0, 1), y_T ~ Binomial(N, p_T), theta ~ Gamma(1/3, rate 1/3)
    and eight survival times s_i ~ Exponential(theta). The number of
    survival times is fixed at eight whatever y_T turns out to be.
    """

    name = "heart_transplants"
    param_names = ("p_T", "theta")
    transform = TransformSpec([Interval(0.0, 1.0), Positive()])
    gamma_shape = 1.0 / 3.0
    gamma_rate = 1.0 / 3.0
    n_survivors = 8

    def __init__(self, n_patients: int = 10):
        if n_patients < 1:
            raise ValueError("n_patients must be positive")
        self.n_patients = int(n_patients)

    def simulate_latent(self, rng):
        p = rng.gen.uniform(0.0, 1.0)
        theta = rng.gen.gamma(self.gamma_shape, 1.0 / self.gamma_rate)
        return np.array([p, theta])

    def simulate_data(self, z, rng):
        p, theta = z
        y = rng.gen.binomial(self.n_patients, p)
        s = rng.gen.exponential(1.0 / theta, size=self.n_survivors)
        return {"y": np.array([float(y)]), "s": s}

    def log_joint_unconstrained(self, u, data):
        logit_p, log_theta = u[:, 0:1], u[:, 1:2]
        N = float(self.n_patients)
        y, s = data["y"], data["s"]
        a, b = self.gamma_shape, self.gamma_rate
        theta = ad.exp(log_theta)
        # uniform prior density is 1; binomial in terms of the logit
        lp = _log_choose(N, y) + y * logit_p - N * ad.log1pexp(logit_p)
        lp = lp - ad.log1pexp(-logit_p) - ad.log1pexp(logit_p)  # Jacobian of the logistic
        lp = lp + (a * math.log(b) - special.gammaln(a)) + (a - 1.0) * log_theta - b * theta
        lp = lp + log_theta  # Jacobian of exp
        n_s = s.shape[-1]
        return lp + n_s * log_theta - theta * ad.sum(s)

    def log_joint_constrained(self, z, data):
        p, theta = z
        y = float(np.asarray(data["y"])[0])
        return float(
            stats.uniform.logpdf(p)
            + stats.binom.logpmf(y, self.n_patients, p)
            + stats.gamma.logpdf(theta, self.gamma_shape, scale=1.0 / self.gamma_rate)
            + np.sum(stats.expon.logpdf(np.asarray(data["s"]), scale=1.0 / theta))
        )


def heart_transplants(n_patients: int = 10) -> HeartTransplants:
    return HeartTransplants(n_patients)


# ---------------------------------------------------------------------------

DEFAULT_HOSPITAL_SIZES = np.round(np.linspace(50, 300, 12))


class Hospitals(ModelSpec):
    """Hierarchical mortality model.

    omega ~ Uniform(0.25, 1), mu ~ Uniform(-3, 3),
    logit(theta_i) ~ N(mu, omega^2), y_i ~ Binomial(n_i, theta_i).
    The latent vector is (omega, mu, logit theta_1, ..., logit theta_H).
    """

    name = "hospitals"

    def __init__(self, operations=DEFAULT_HOSPITAL_SIZES):
        self.operations = np.asarray(operations, dtype=float)
        if self.operations.ndim != 1 or self.operations.size == 0:
            raise ValueError("operations must be a non-empty vector")
        H = self.operations.size
        self.param_names = ("omega", "mu") + tuple(f"logit_theta_{i + 1}" for i in range(H))
        self.transform = TransformSpec([Interval(0.25, 1.0), Interval(-3.0, 3.0)] + [Real()] * H)

    @property
    def n_hospitals(self) -> int:
        return self.operations.size

    def simulate_latent(self, rng):
        omega = rng.gen.uniform(0.25, 1.0)
        mu = rng.gen.uniform(-3.0, 3.0)
        logit_theta = rng.gen.normal(mu, omega, size=self.n_hospitals)
        return np.concatenate([[omega, mu], logit_theta])

    def simulate_data(self, z, rng):
        theta = ad.logistic(z[2:])
        return {"y": rng.gen.binomial(self.operations.astype(np.int64), theta).astype(float)}

    def log_joint_unconstrained(self, u, data):
        t_omega, t_mu = self.transform[0], self.transform[1]
        u_omega, u_mu, lt = u[:, 0:1], u[:, 1:2], u[:, 2:]
        omega = t_omega.constrain(u_omega)
        mu = t_mu.constrain(u_mu)
        lp = t_omega.log_abs_det_jacobian(u_omega) + t_mu.log_abs_det_jacobian(u_mu)
        lp = lp - (math.log(0.75) + math.log(6.0))  # uniform prior densities
        H = float(self.n_hospitals)
        resid = ad.sum(ad.square(lt - mu))
        lp = lp - H * (0.5 * LOG_2PI + ad.log(omega)) - 0.5 * resid / ad.square(omega)
        y, n = data["y"], self.operations
        return lp + ad.sum(_log_choose(n, y) + y * lt - n * ad.log1pexp(lt))

    def log_joint_constrained(self, z, data):
        omega, mu, lt = z[0], z[1], np.asarray(z[2:])
        return float(
            stats.uniform.logpdf(omega, 0.25, 0.75)
            + stats.uniform.logpdf(mu, -3.0, 6.0)
            + np.sum(stats.norm.logpdf(lt, mu, omega))
            + np.sum(stats.binom.logpmf(np.asarray(data["y"]), self.operations, special.expit(lt)))
        )


def hospitals(operations=DEFAULT_HOSPITAL_SIZES) -> Hospitals:
    return Hospitals(operations)


# ---------------------------------------------------------------------------


class _Regression(ModelSpec):
    """Shared plumbing for models conditioned on a fixed design matrix."""

    def __init__(self, X):
        X = np.array(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DimensionError(f"design matrix must be 2-D and non-empty, got shape {X.shape}")
        self.covariates = X
        self.transform = TransformSpec.real(X.shape[1])
        self.param_names = tuple(f"w{j}" for j in range(X.shape[1]))

    def with_covariates(self, X):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        _Regression.__init__(clone, X)
        return clone

    def simulate_latent(self, rng):
        return rng.gen.standard_normal(self.dim)

    def _prior(self, w):
        return ad.sum(-0.5 * LOG_2PI - 0.5 * ad.square(w))


class LinearRegression(_Regression):
    """w ~ N(0, I), y | w ~ N(X w, noise_var I). The posterior is Gaussian."""

    name = "concrete"

    def __init__(self, X, noise_var: float = 1.0):
        super().__init__(X)
        if not noise_var > 0:
            raise ValueError("noise_var must be positive")
        self.noise_var = float(noise_var)

    def simulate_data(self, z, rng):
        X = self.covariates
        return {"y": X @ z + rng.gen.normal(0.0, math.sqrt(self.noise_var), size=X.shape[0])}

    def log_joint_unconstrained(self, u, data):
        mean = ad.linear(u, self.covariates)
        return self._prior(u) + ad.sum(_normal_logpdf(data["y"], mean, self.noise_var))

    def log_joint_constrained(self, z, data):
        X = self.covariates
        return float(
            np.sum(stats.norm.logpdf(z))
            + np.sum(stats.norm.logpdf(np.asarray(data["y"]), X @ z, math.sqrt(self.noise_var)))
        )

    def posterior_precision(self) -> np.ndarray:
        X = self.covariates
        return np.eye(self.dim) + X.T @ X / self.noise_var

    def exact_posterior(self, data):
        X = self.covariates
        prec = self.posterior_precision()
        cov = np.linalg.inv(prec)
        mean = cov @ (X.T @ np.asarray(data["y"], dtype=float)) / self.noise_var
        return GaussianApprox.from_covariance(mean, cov)


class LogisticRegression(_Regression):
    """w ~ N(0, I), y_i | w ~ Bernoulli(logistic(x_i . w))."""

    name = "ionosphere"

    def simulate_data(self, z, rng):
        p = ad.logistic(self.covariates @ z)
        return {"y": (rng.gen.uniform(size=p.shape) < p).astype(float)}

    def log_joint_unconstrained(self, u, data):
        eta = ad.linear(u, self.covariates)
        y = data["y"]
        return self._prior(u) + ad.sum(y * eta - ad.log1pexp(eta))

    def log_joint_constrained(self, z, data):
        p = special.expit(self.covariates @ z)
        return float(np.sum(stats.norm.logpdf(z)) + np.sum(stats.bernoulli.logpmf(np.asarray(data["y"]), p)))


def _design(dataset, intercept: bool) -> np.ndarray:
    X = np.asarray(dataset.features if hasattr(dataset, "features") else dataset, dtype=float)
    if intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    return X


def concrete(dataset, intercept: bool = True, noise_var: float = 1.0) -> LinearRegression:
    """Bayesian linear regression on a dataset's features (or a raw matrix)."""
    return LinearRegression(_design(dataset, intercept), noise_var)


def ionosphere(dataset, intercept: bool = True) -> LogisticRegression:
    """Bayesian logistic regression on a dataset's features (or a raw matrix)."""
    return LogisticRegression(_design(dataset, intercept))


MODEL_IDS = ("glm_binomial", "heart_transplants", "hospitals", "ionosphere", "concrete", "gaussian_toy")
DATASET_MODELS = ("ionosphere", "concrete")
