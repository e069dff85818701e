"""Direct per-pixel optimization of depth distributions.

The per-pixel EtaMap stands in for a network output: it is updated by
heavy-ball momentum gradient descent on the reconstruction loss, with the
step size halved for the last quarter of the run.  Gradients are those of
the masked *sum* of per-pixel losses (mean gradient times kept-pixel count)
so step sizes do not depend on image size.

The mean is descended in disparity units ``x = s / mu`` with
``s = fx * |t|`` (pixels of image motion per unit inverse depth), so
``lr_mu`` is a step in pixels and does not depend on the rig scale.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..depthdist import DEPTH_FLOOR, GAUSSIAN, PARAMETERIZATIONS, DistributionFamily, EtaMap, SampleSet
from ..distill import SIGMA_FLOOR, GaussianPair, kl_loss, kl_loss_grad, nll_loss, nll_loss_grad
from ..photoloss import PhotometricConfig, ReconsObjective
from .scenes import Scene

DIVERGENCE_LIMIT = 1e6
MAX_DEPTH = 1e4


class OptimizationDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"optimization diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class OptimizeConfig:
    steps: int = 3000
    lr_mu: float = 0.25
    lr_alpha: float = 0.02
    momentum: float = 0.9
    init_mu: float = 20.0
    init_alpha: float = 0.1
    n_samples: int = 9
    family: str = "gauss"
    parameterization: str = "alpha"
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    drop_at: float = 0.75
    drop_factor: float = 0.5

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if not (self.lr_mu > 0 and self.lr_alpha > 0):
            raise ValueError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.init_mu > DEPTH_FLOOR:
            raise ValueError(f"init_mu must exceed {DEPTH_FLOOR} m")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}, got {self.parameterization!r}")
        if not 0 <= self.init_alpha <= (1 if self.parameterization == "alpha" else np.inf):
            raise ValueError("init_alpha must lie in [0, 1] (alpha) or be non-negative (sigma)")
        if not 0 < self.drop_at <= 1 or not 0 < self.drop_factor <= 1:
            raise ValueError("drop_at and drop_factor must lie in (0, 1]")
        SampleSet.create(self.n_samples, DistributionFamily.from_name(self.family))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizeTrace:
    losses: list[float]
    grad_norms: list[float]
    eta: EtaMap


def _step_scale(step: int, steps: int, drop_at: float, drop_factor: float) -> float:
    return drop_factor if step >= int(round(drop_at * steps)) else 1.0


def _check_finite(step: int, value: float):
    if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
        raise OptimizationDiverged(step, value)


def optimize_eta(scene: Scene, cfg: OptimizeConfig = OptimizeConfig(), init: EtaMap | None = None) -> OptimizeTrace:
    """Minimize the probabilistic reconstruction loss over a per-pixel EtaMap."""
    family = DistributionFamily.from_name(cfg.family)
    sset = SampleSet.create(cfg.n_samples, family)
    objective = ReconsObjective(scene.target, scene.source, scene.K, scene.T, sset, cfg.photometric)
    if init is None:
        eta = EtaMap.constant(scene.shape, cfg.init_mu, cfg.init_alpha, family, cfg.parameterization)
    else:
        eta = init.copy()
    eta.validate()
    spread_max = 1.0 if eta.parameterization == "alpha" else np.inf
    s = scene.K.fx * float(np.linalg.norm(scene.T.translation)) or scene.K.fx
    v_mu = np.zeros(scene.shape)
    v_alpha = np.zeros(scene.shape)
    losses, norms = [], []
    for step in range(cfg.steps):
        loss, g_mu, g_alpha = objective.loss_and_grad(eta)
        _check_finite(step, loss.value)
        count = loss.mask.sum()
        g_mu *= count
        g_alpha *= count
        losses.append(loss.value)
        norms.append(float(np.sqrt(np.sum(g_mu**2) + np.sum(g_alpha**2))))
        scale = _step_scale(step, cfg.steps, cfg.drop_at, cfg.drop_factor)
        # dL/dx = -(mu^2 / s) dL/dmu for the disparity x = s / mu
        v_mu = cfg.momentum * v_mu - (eta.mu**2 / s) * g_mu
        v_alpha = cfg.momentum * v_alpha + g_alpha
        x = np.clip(s / eta.mu - scale * cfg.lr_mu * v_mu, s / MAX_DEPTH, s / DEPTH_FLOOR)
        eta.mu = s / x
        eta.alpha = np.clip(eta.alpha - scale * cfg.lr_alpha * v_alpha, 0.0, spread_max)
    return OptimizeTrace(losses, norms, eta)


DISTILL_LOSSES = ("kl", "nll")


@dataclass(frozen=True)
class DistillConfig:
    """Settings for :func:`distill_eta`.

    The student is a Gaussian with free mean and log standard deviation.
    Steps are natural-gradient steps under the student's own Fisher metric
    (``sigma**2`` for the mean, ``1/2`` for ``log sigma``), clipped to a
    trust region of one standard deviation and one e-fold per step.
    """

    steps: int = 5000
    loss: str = "kl"
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    sigma_floor: float = SIGMA_FLOOR
    freeze_mu: bool = False
    drop_at: float = 0.75
    drop_factor: float = 0.5

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.loss not in DISTILL_LOSSES:
            raise ValueError(f"loss must be one of {DISTILL_LOSSES}, got {self.loss!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if not 0 < self.drop_at <= 1 or not 0 < self.drop_factor <= 1:
            raise ValueError("drop_at and drop_factor must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def random_student(teacher: EtaMap, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random ``(mu, sigma)`` around the teacher's mean depth level."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mu = rng.uniform(0.5, 1.5, teacher.shape) * float(np.mean(teacher.mu))
    sigma = mu * rng.uniform(0.01, 0.5, teacher.shape)
    return mu, sigma


def distill_eta(teacher: EtaMap, cfg: DistillConfig = DistillConfig(), init=None) -> OptimizeTrace:
    """Fit a Gaussian student to a frozen teacher by KL or NLL descent.

    ``init`` is an optional ``(mu, sigma)`` pair; by default the student is
    drawn by :func:`random_student`.  The returned EtaMap uses the sigma
    parameterization (spread array in meters).
    """
    teacher.validate()
    mu_t = teacher.mu
    sigma_t = teacher.sigma
    if np.any(~(sigma_t > 0)):
        raise ValueError("teacher sigma must be positive everywhere")
    if init is None:
        mu, sigma = random_student(teacher, cfg.seed)
    else:
        mu = np.array(init[0], dtype=float)
        sigma = np.array(init[1], dtype=float)
        if mu.shape != teacher.shape or sigma.shape != teacher.shape:
            raise ValueError("student init must match the teacher shape")
    log_floor = np.log(cfg.sigma_floor)
    log_s = np.maximum(np.log(sigma), log_floor)
    v_mu = np.zeros(teacher.shape)
    v_ls = np.zeros(teacher.shape)
    losses, norms = [], []
    for step in range(cfg.steps):
        s = np.exp(log_s)
        if cfg.loss == "kl":
            pair = GaussianPair(mu_t, sigma_t, mu, s)
            value = kl_loss(pair).mean
            g_mu, g_s = kl_loss_grad(pair)
        else:
            value = nll_loss(mu, s, mu_t).mean
            g_mu, g_s = nll_loss_grad(mu, s, mu_t)
        _check_finite(step, value)
        g_ls = g_s * s
        if cfg.freeze_mu:
            g_mu = np.zeros_like(g_mu)
        losses.append(value)
        norms.append(float(np.sqrt(np.sum(g_mu**2) + np.sum(g_ls**2))))
        scale = _step_scale(step, cfg.steps, cfg.drop_at, cfg.drop_factor)
        v_mu = cfg.momentum * v_mu + np.clip(s**2 * g_mu, -s, s)
        v_ls = cfg.momentum * v_ls + np.clip(0.5 * g_ls, -1.0, 1.0)
        mu = np.maximum(mu - scale * cfg.lr * v_mu, DEPTH_FLOOR)
        log_s = np.maximum(log_s - scale * cfg.lr * v_ls, log_floor)
    student = EtaMap(mu, np.exp(log_s), GAUSSIAN, "sigma")
    return OptimizeTrace(losses, norms, student)
