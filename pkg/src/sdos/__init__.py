"""Simulation-based diagnostics for approximate Bayesian inference.

Estimates the symmetric KL divergence between a model's joint p(z, x) and
p(x) q(z | x) by simulating datasets, running inference on each and
comparing densities at the true and approximate latents.
"""

from .diagnostics import (
    Augmentation,
    DiagnosticResult,
    FactorizedAugmentedFitter,
    sample_qiw,
    sdos_augmented,
    sdos_conditional,
    sdos_iw,
    sdos_joint,
    summarize,
)
from .inference import (
    ExactFitter,
    LaplaceFitter,
    PerturbedExactFitter,
    VIFitter,
    iwvi_fit,
    laplace_adjust,
    laplace_fit,
    vi_fit,
)
from .mathcore import GaussianApprox, RngStream

__version__ = "0.1.0"

__all__ = [
    "Augmentation",
    "DiagnosticResult",
    "ExactFitter",
    "FactorizedAugmentedFitter",
    "GaussianApprox",
    "LaplaceFitter",
    "PerturbedExactFitter",
    "RngStream",
    "VIFitter",
    "iwvi_fit",
    "laplace_adjust",
    "laplace_fit",
    "sample_qiw",
    "sdos_augmented",
    "sdos_conditional",
    "sdos_iw",
    "sdos_joint",
    "summarize",
    "vi_fit",
]
