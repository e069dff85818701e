"""Depth accuracy, sparsification (AUSE/AURG) and absolute uncertainty metrics.

All per-frame metrics are computed over the frame's valid mask.  Dataset
scores are uniform means over frames, in frame order.

Sparsification removes ``ceil(i * N / 50)`` pixels for ``i = 0..49``.  Pixels
with equal sort keys are handled by one of two tie policies:

* ``"average"`` (default): a tie group straddling the removal boundary is
  removed *fractionally*, every member keeping weight ``1 - r/m`` where ``r``
  of its ``m`` members must go.  This is the expectation over all orders of
  the tied pixels, so a constant uncertainty map yields exactly the random
  curve.
* ``"stable"``: ties are removed in ascending pixel-index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

N_BINS = 50
DELTA_THRESHOLD = 1.25
BASE_METRICS = ("abs_rel", "rmse", "delta1")  # "delta1" sparsifies 1 - delta1
TIE_POLICIES = ("average", "stable")


@dataclass
class EvalFrame:
    d_hat: np.ndarray
    d_star: np.ndarray
    u: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.d_hat = np.asarray(self.d_hat, dtype=float)
        self.d_star = np.asarray(self.d_star, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.mask is None:
            self.mask = np.ones(self.d_star.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.d_hat.shape == self.d_star.shape == self.u.shape == self.mask.shape):
            raise ValueError("d_hat, d_star, u and mask must have equal shapes")

    def values(self):
        """Masked ``(d_hat, d_star, u)`` as flat arrays, after contract checks."""
        m = self.mask
        if not m.any():
            raise ValueError("empty valid mask")
        d_hat, d_star, u = self.d_hat[m], self.d_star[m], self.u[m]
        if np.any(~(d_star > 0)) or not np.all(np.isfinite(d_star)):
            raise ValueError("ground-truth depth must be finite and positive on the mask")
        if np.any(~(d_hat > 0)) or not np.all(np.isfinite(d_hat)):
            raise ValueError("predicted depth must be finite and positive on the mask")
        if np.any(~(u >= 0)) or not np.all(np.isfinite(u)):
            raise ValueError("uncertainty must be finite and non-negative on the mask")
        return d_hat, d_star, u


class DepthMetrics(NamedTuple):
    abs_rel: float
    rmse: float
    delta1: float


def _pixel_errors(d_hat, d_star):
    err = d_hat - d_star
    ratio = np.maximum(d_hat / d_star, d_star / d_hat)
    return {"abs_rel": np.abs(err) / d_star, "rmse": err**2, "delta1": ratio}


def _weighted(metric: str, per_pixel: np.ndarray, w: np.ndarray | None = None) -> float:
    # lower-is-better value of a base metric over (fractionally) kept pixels
    if metric == "delta1":
        per_pixel = (per_pixel >= DELTA_THRESHOLD).astype(float)
    if w is None:
        value = float(np.mean(per_pixel))
    else:
        value = float(np.sum(w * per_pixel) / np.sum(w))
    return float(np.sqrt(value)) if metric == "rmse" else value


def depth_metrics(frame: EvalFrame) -> DepthMetrics:
    d_hat, d_star, _ = frame.values()
    e = _pixel_errors(d_hat, d_star)
    return DepthMetrics(
        _weighted("abs_rel", e["abs_rel"]),
        _weighted("rmse", e["rmse"]),
        1.0 - _weighted("delta1", e["delta1"]),
    )


def removal_counts(n: int) -> np.ndarray:
    """``ceil(i * n / 50)`` for ``i = 0..49``, in exact integer arithmetic."""
    return np.array([-(-i * n // N_BINS) for i in range(N_BINS)])


def _keep_weights(key: np.ndarray, k: int, ties: str) -> np.ndarray:
    """Weights of the pixels kept after removing the ``k`` with largest key."""
    n = key.size
    order = np.argsort(-key, kind="stable")
    w = np.ones(n)
    if k == 0:
        return w
    if ties == "stable":
        w[order[:k]] = 0.0
        return w
    s = key[order]
    boundary = s[k - 1]
    above = s > boundary
    group = s == boundary
    n_above = int(above.sum())
    m = int(group.sum())
    w[order[above]] = 0.0
    w[order[group]] = 1.0 - (k - n_above) / m
    return w


@dataclass
class SparsificationCurve:
    metric: str
    fractions: np.ndarray
    values_pred: np.ndarray
    values_oracle: np.ndarray
    value_random: float
    ause: float = field(init=False)
    aurg: float = field(init=False)

    def __post_init__(self):
        self.ause = float(np.mean(self.values_pred - self.values_oracle))
        self.aurg = float(np.mean(self.value_random - self.values_pred))


def sparsification(frame: EvalFrame, base_metric: str = "abs_rel", ties: str = "average"):
    """Sparsification curves for one frame; returns ``(curve, ause, aurg)``."""
    if base_metric not in BASE_METRICS:
        raise ValueError(f"base metric must be one of {BASE_METRICS}, got {base_metric!r}")
    if ties not in TIE_POLICIES:
        raise ValueError(f"tie policy must be one of {TIE_POLICIES}, got {ties!r}")
    d_hat, d_star, u = frame.values()
    n = d_star.size
    if n < N_BINS:
        raise ValueError("insufficient pixels for 2% bins")
    per_pixel = _pixel_errors(d_hat, d_star)[base_metric]
    pred, oracle = [], []
    for k in removal_counts(n):
        pred.append(_weighted(base_metric, per_pixel, _keep_weights(u, k, ties)))
        oracle.append(_weighted(base_metric, per_pixel, _keep_weights(per_pixel, k, ties)))
    curve = SparsificationCurve(
        base_metric,
        np.arange(N_BINS) / N_BINS,
        np.array(pred),
        np.array(oracle),
        _weighted(base_metric, per_pixel),
    )
    return curve, curve.ause, curve.aurg


def aru_rmsu(frame: EvalFrame) -> tuple[float, float]:
    """Absolute relative uncertainty error and root-mean-square uncertainty error."""
    d_hat, d_star, u = frame.values()
    diff = u - np.abs(d_hat - d_star)
    return float(np.mean(np.abs(diff) / d_star)), float(np.sqrt(np.mean(diff**2)))


def median_scale(frame: EvalFrame) -> EvalFrame:
    """Rescale prediction and uncertainty so the masked medians of depth agree."""
    d_hat, d_star, _ = frame.values()
    s = np.median(d_star) / np.median(d_hat)
    return EvalFrame(frame.d_hat * s, frame.d_star, frame.u * s, frame.mask)


@dataclass
class MetricReport:
    abs_rel: float
    rmse: float
    delta1: float
    ause: dict[str, float]
    aurg: dict[str, float]
    aru: float
    rmsu: float
    n_frames: int

    def to_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "rmse": self.rmse,
            "delta1": self.delta1,
            "ause": {m: self.ause[m] for m in BASE_METRICS},
            "aurg": {m: self.aurg[m] for m in BASE_METRICS},
            "aru": self.aru,
            "rmsu": self.rmsu,
            "n_frames": self.n_frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


def evaluate(frames, median_scaling: bool = False, ties: str = "average"):
    """Dataset report plus the per-frame sparsification curves.

    Returns ``(report, curves)`` where ``curves[i][metric]`` is the curve of
    frame ``i``.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to evaluate")
    rows, curves = [], []
    for f in frames:
        if median_scaling:
            f = median_scale(f)
        dm = depth_metrics(f)
        per = {m: sparsification(f, m, ties)[0] for m in BASE_METRICS}
        aru, rmsu = aru_rmsu(f)
        rows.append((dm, per, aru, rmsu))
        curves.append(per)

    def mean(values):
        return float(np.mean(np.array(values, dtype=float)))

    report = MetricReport(
        abs_rel=mean([r[0].abs_rel for r in rows]),
        rmse=mean([r[0].rmse for r in rows]),
        delta1=mean([r[0].delta1 for r in rows]),
        ause={m: mean([r[1][m].ause for r in rows]) for m in BASE_METRICS},
        aurg={m: mean([r[1][m].aurg for r in rows]) for m in BASE_METRICS},
        aru=mean([r[2] for r in rows]),
        rmsu=mean([r[3] for r in rows]),
        n_frames=len(frames),
    )
    return report, curves
