"""Self-distillation losses between a frozen teacher and a student Gaussian.

``kl_loss`` is implemented exactly as

    log(sigma_t / sigma_s) + (sigma_s**2 + (mu_s - mu_t)**2) / (2 * sigma_t**2)

which is the Gaussian KL(student || teacher) plus the constant 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SIGMA_FLOOR = 1e-4


@dataclass
class GaussianPair:
    mu_t: np.ndarray
    sigma_t: np.ndarray
    mu_s: np.ndarray
    sigma_s: np.ndarray

    def __post_init__(self):
        for name in ("mu_t", "sigma_t", "mu_s", "sigma_s"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(~(self.sigma_t > 0)) or np.any(~(self.sigma_s > 0)):
            raise ValueError("standard deviations must be positive")


class DistillLoss(NamedTuple):
    per_pixel: np.ndarray
    mean: float


def kl_loss(pair: GaussianPair) -> DistillLoss:
    p = pair
    val = np.log(p.sigma_t / p.sigma_s) + (p.sigma_s**2 + (p.mu_s - p.mu_t) ** 2) / (2 * p.sigma_t**2)
    return DistillLoss(val, float(np.mean(val)))


def kl_loss_grad(pair: GaussianPair):
    """Per-pixel ``(d/d mu_s, d/d sigma_s)`` of :func:`kl_loss`."""
    p = pair
    var_t = p.sigma_t**2
    return (p.mu_s - p.mu_t) / var_t, p.sigma_s / var_t - 1.0 / p.sigma_s


def _check_sigma(sigma_s):
    s = np.asarray(sigma_s, dtype=float)
    if np.any(~(s > 0)):
        raise ValueError("sigma_s must be positive")
    return s


def nll_loss(mu_s, sigma_s, mu_t) -> DistillLoss:
    """Gaussian negative log-likelihood of the teacher mean, up to log(sqrt(2 pi))."""
    s = _check_sigma(sigma_s)
    gap = np.asarray(mu_s, dtype=float) - np.asarray(mu_t, dtype=float)
    val = gap**2 / (2 * s**2) + np.log(s)
    return DistillLoss(val, float(np.mean(val)))


def nll_loss_grad(mu_s, sigma_s, mu_t):
    s = _check_sigma(sigma_s)
    gap = np.asarray(mu_s, dtype=float) - np.asarray(mu_t, dtype=float)
    return gap / s**2, 1.0 / s - gap**2 / s**3
