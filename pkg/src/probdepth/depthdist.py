"""Symmetric generalized-normal depth distributions and their sample sets.

A pixel's depth follows ``f(x) ∝ exp(-(|x - mu| / gamma) ** beta)`` with
``beta = 1`` (Laplace) or ``beta = 2`` (Gaussian).  Each distribution is
represented by ``n`` deterministic samples placed where the density ratio to
the mode is ``2i / (n + 1)``, i.e. at ``mu ± gamma * (-log(2i/(n+1)))**(1/beta)``.
Because those ratios are fixed by construction, the normalized sample
weights depend on ``n`` only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DEPTH_FLOOR = 1e-3


@dataclass(frozen=True)
class DistributionFamily:
    beta: int

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValueError(f"beta must be 1 (Laplace) or 2 (Gaussian), got {self.beta}")

    @classmethod
    def from_name(cls, name: str) -> "DistributionFamily":
        try:
            return cls({"laplace": 1, "gauss": 2, "gaussian": 2, "normal": 2}[name.lower()])
        except KeyError:
            raise ValueError(f"unknown distribution family {name!r}") from None

    @property
    def name(self) -> str:
        return "laplace" if self.beta == 1 else "gauss"

    @property
    def scale_per_sigma(self) -> float:
        """d(gamma)/d(sigma); gamma is linear in the standard deviation."""
        return 1.0 / math.sqrt(2.0) if self.beta == 1 else math.sqrt(2.0)

    def gamma_of_sigma(self, sigma):
        return self.scale_per_sigma * np.asarray(sigma, dtype=float)


GAUSSIAN = DistributionFamily(2)
LAPLACE = DistributionFamily(1)


def _check_n(n: int) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1 or n % 2 == 0:
        raise ValueError(f"sample count must be a positive odd integer, got {n}")
    return int(n)


def density_ratio(i: int, n: int) -> float:
    """Density of the level-``i`` sample relative to the density at the mean."""
    n = _check_n(n)
    if not 1 <= i <= (n + 1) // 2:
        raise ValueError(f"level index {i} outside [1, {(n + 1) // 2}]")
    return 2 * i / (n + 1)


@lru_cache(maxsize=None)
def _levels(n: int) -> tuple[int, ...]:
    # level index of each sample, in ascending-offset order
    m = (n + 1) // 2
    return tuple(range(1, m + 1)) + tuple(range(m - 1, 0, -1))


def make_sample_offsets(n: int, beta: int) -> np.ndarray:
    """Offsets from the mean in units of gamma, sorted ascending."""
    n = _check_n(n)
    DistributionFamily(beta)
    m = (n + 1) // 2
    mags = [(-math.log(density_ratio(i, n))) ** (1.0 / beta) if i < m else 0.0 for i in range(1, m + 1)]
    left = [-mags[i] for i in range(m - 1)]
    right = [mags[i] for i in range(m - 2, -1, -1)]
    return np.array(left + [0.0] + right)


def normalized_weights(n: int) -> np.ndarray:
    """Sample weights aligned with :func:`make_sample_offsets`, summing to 1."""
    n = _check_n(n)
    raw = np.array([density_ratio(i, n) for i in _levels(n)])
    return raw / math.fsum(raw)


@dataclass(frozen=True)
class SampleSet:
    n: int
    family: DistributionFamily
    offsets: np.ndarray
    weights: np.ndarray

    @classmethod
    def create(cls, n: int = 9, family: DistributionFamily = GAUSSIAN) -> "SampleSet":
        return _sample_set(_check_n(n), family)

    @property
    def center(self) -> int:
        return self.n // 2


@lru_cache(maxsize=None)
def _sample_set(n: int, family: DistributionFamily) -> SampleSet:
    offsets = make_sample_offsets(n, family.beta)
    weights = normalized_weights(n)
    offsets.setflags(write=False)
    weights.setflags(write=False)
    return SampleSet(n, family, offsets, weights)


PARAMETERIZATIONS = ("alpha", "sigma")


@dataclass
class EtaMap:
    """Per-pixel depth-distribution parameters.

    With the default ``"alpha"`` parameterization the spread array holds the
    relative spread ``alpha`` in ``[0, 1]`` and ``sigma = alpha * mu``.  With
    ``"sigma"`` it holds the standard deviation in meters directly, which
    only has to be non-negative.
    """

    mu: np.ndarray
    alpha: np.ndarray
    family: DistributionFamily = GAUSSIAN
    parameterization: str = "alpha"

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=float)
        self.alpha = np.array(self.alpha, dtype=float)
        if self.mu.ndim != 2 or self.mu.shape != self.alpha.shape:
            raise ValueError(f"mu {self.mu.shape} and alpha {self.alpha.shape} must be equal 2-D shapes")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"unknown parameterization {self.parameterization!r}")

    def validate(self) -> "EtaMap":
        if not np.all(np.isfinite(self.mu)) or np.any(self.mu <= 0):
            raise ValueError("mu must be finite and positive")
        if not np.all(np.isfinite(self.alpha)) or np.any(self.alpha < 0):
            raise ValueError("spread must be finite and non-negative")
        if self.parameterization == "alpha" and np.any(self.alpha > 1):
            raise ValueError("alpha must lie in [0, 1]")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        if self.parameterization == "alpha":
            return self.alpha * self.mu
        return self.alpha.copy()

    @classmethod
    def constant(cls, shape, mu, alpha, family=GAUSSIAN, parameterization="alpha") -> "EtaMap":
        return cls(np.full(shape, float(mu)), np.full(shape, float(alpha)), family, parameterization)

    def copy(self) -> "EtaMap":
        return EtaMap(self.mu.copy(), self.alpha.copy(), self.family, self.parameterization)


def _sample_stack(mu, spread, family, parameterization, sset: SampleSet, with_grad=False):
    if sset.family != family:
        raise ValueError("sample set and EtaMap use different distribution families")
    c = family.scale_per_sigma
    sigma = spread * mu if parameterization == "alpha" else spread
    gamma = c * sigma
    raw = np.stack([mu + gamma * o for o in sset.offsets])
    depths = np.maximum(raw, DEPTH_FLOOR)
    if not with_grad:
        return depths
    free = raw >= DEPTH_FLOOR
    offs = sset.offsets.reshape((-1,) + (1,) * np.ndim(mu))
    if parameterization == "alpha":
        d_mu = 1.0 + c * spread * offs
        d_spread = c * mu * offs
    else:
        d_mu = np.ones_like(raw)
        d_spread = c * offs * np.ones_like(raw)
    return depths, np.where(free, d_mu, 0.0), np.where(free, d_spread, 0.0)


def sample_depths(eta: EtaMap, sset: SampleSet, with_grad: bool = False):
    """The ``n`` sampled depth maps, stacked as ``(n, H, W)``.

    With ``with_grad`` also returns ``d(sample)/d(mu)`` and
    ``d(sample)/d(alpha)`` (or ``/d(sigma)``), zero where the floor clamp is
    active.
    """
    return _sample_stack(eta.mu, eta.alpha, eta.family, eta.parameterization, sset, with_grad)
