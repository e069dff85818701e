"""Photometric error, expected reconstruction and the probabilistic reconstruction loss.

The loss compares the target image with the weighted average of the ``n``
reconstructions obtained by warping the source with each sampled depth map.
The additive normalization constant of the underlying likelihood is never
computed: it carries no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camgeom import CameraIntrinsics, Reprojector, RigidPose, WarpResult, as_image, warp_points
from .depthdist import EtaMap, SampleSet, _sample_stack

MODES = ("l1", "ssim_l1")
MASK_POLICIES = ("and", "renormalize")


@dataclass(frozen=True)
class PhotometricConfig:
    """How two images are compared.

    ``mask_policy="and"`` keeps a pixel only when every sampled depth warped
    in bounds; ``"renormalize"`` keeps it when any did and re-weights the
    in-bounds samples.
    """

    mode: str = "ssim_l1"
    ssim_weight: float = 0.85
    ssim_window: int = 3
    c1: float = 0.01**2
    c2: float = 0.03**2
    mask_policy: str = "and"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ValueError("ssim_weight must lie in [0, 1]")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 3")
        if self.mask_policy not in MASK_POLICIES:
            raise ValueError(f"mask_policy must be one of {MASK_POLICIES}")


L1 = PhotometricConfig(mode="l1")


@dataclass
class LossValue:
    value: float
    per_pixel: np.ndarray
    mask: np.ndarray


def _box(x: np.ndarray, r: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window with reflection padding, per channel."""
    H, W = x.shape[:2]
    p = np.pad(x, ((r, r), (r, r), (0, 0)), mode="reflect")
    acc = np.zeros_like(x)
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            acc += p[dy : dy + H, dx : dx + W]
    return acc / (2 * r + 1) ** 2


def _box_adjoint(g: np.ndarray, r: int) -> np.ndarray:
    """Transpose of :func:`_box`."""
    H, W = g.shape[:2]
    p = np.zeros((H + 2 * r, W + 2 * r) + g.shape[2:])
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            p[dy : dy + H, dx : dx + W] += g
    p /= (2 * r + 1) ** 2
    # fold reflected rows/columns back onto their originals
    for k in range(1, r + 1):
        p[r + k] += p[r - k]
        p[r + H - 1 - k] += p[r + H - 1 + k]
    for k in range(1, r + 1):
        p[:, r + k] += p[:, r - k]
        p[:, r + W - 1 - k] += p[:, r + W - 1 + k]
    return p[r : r + H, r : r + W]


def _ssim_parts(x, y, cfg: PhotometricConfig):
    r = cfg.ssim_window // 2
    if min(x.shape[:2]) <= r:
        raise ValueError(f"SSIM with a {cfg.ssim_window}x{cfg.ssim_window} window needs images larger than {r} px")
    mx, my = _box(x, r), _box(y, r)
    sx = _box(x * x, r) - mx * mx
    sy = _box(y * y, r) - my * my
    sxy = _box(x * y, r) - mx * my
    a1 = 2 * mx * my + cfg.c1
    a2 = 2 * sxy + cfg.c2
    b1 = mx * mx + my * my + cfg.c1
    b2 = sx + sy + cfg.c2
    return mx, my, a1, a2, b1, b2


def ssim_map(x, y, cfg: PhotometricConfig = PhotometricConfig()) -> np.ndarray:
    """Per-pixel, per-channel SSIM of two ``(H, W, C)`` images."""
    _, _, a1, a2, b1, b2 = _ssim_parts(as_image(x), as_image(y), cfg)
    return (a1 * a2) / (b1 * b2)


def _ssim_grad(x, y, g_s, cfg: PhotometricConfig) -> np.ndarray:
    """Gradient w.r.t. ``x`` of ``sum(g_s * ssim_map(x, y))``."""
    r = cfg.ssim_window // 2
    mx, my, a1, a2, b1, b2 = _ssim_parts(x, y, cfg)
    den = b1 * b2
    s = a1 * a2 / den
    d_sx = -s / b2
    d_sxy = 2 * a1 / den
    d_mx = 2 * my * a2 / den - 2 * mx * s / b1 - 2 * mx * d_sx - my * d_sxy
    return (
        _box_adjoint(g_s * d_mx, r)
        + 2 * x * _box_adjoint(g_s * d_sx, r)
        + y * _box_adjoint(g_s * d_sxy, r)
    )


def _check_pair(A, B):
    a, b = as_image(A), as_image(B)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _check_mask(mask, shape) -> np.ndarray:
    m = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match image shape {shape}")
    if not m.any():
        raise ValueError("no valid pixels")
    return m


def _per_pixel(a, b, cfg):
    l1 = np.abs(a - b)
    if cfg.mode == "l1":
        return l1.mean(axis=2)
    w = cfg.ssim_weight
    s = ssim_map(a, b, cfg)
    return (w * (1.0 - s) / 2.0 + (1.0 - w) * l1).mean(axis=2)


def photometric_error(A, B, cfg: PhotometricConfig = PhotometricConfig(), mask=None) -> LossValue:
    """Mean photometric distance between ``A`` and ``B`` over ``mask``."""
    a, b = _check_pair(A, B)
    m = _check_mask(mask, a.shape[:2])
    per_pixel = _per_pixel(a, b, cfg)
    return LossValue(float(per_pixel[m].mean()), per_pixel, m)


def photometric_error_grad(A, B, cfg: PhotometricConfig, mask) -> np.ndarray:
    """Gradient of ``photometric_error(A, B).value`` w.r.t. ``A``; shape of ``A``."""
    a, b = _check_pair(A, B)
    m = _check_mask(mask, a.shape[:2])
    C = a.shape[2]
    scale = np.where(m, 1.0 / (m.sum() * C), 0.0)[..., None]
    if cfg.mode == "l1":
        return scale * np.sign(a - b)
    w = cfg.ssim_weight
    g = (1.0 - w) * scale * np.sign(a - b)
    g_s = np.broadcast_to(-0.5 * w * scale, a.shape)
    return g + _ssim_grad(a, b, g_s, cfg)


def _expected(source, proj, mu, spread, family, parameterization, sset, cfg, with_grad):
    """Weighted sample average of warped values, the kept mask and (optionally)
    per-sample ``d(expected)/d(depth_k)`` plus the sample-depth derivatives."""
    stack = _sample_stack(mu, spread, family, parameterization, sset, with_grad)
    depths = stack[0] if with_grad else stack
    w = sset.weights
    c = sset.center
    warps = [warp_points(source, proj, depths[k], with_grad) for k in range(sset.n)]
    if cfg.mask_policy == "and":
        keep = warps[0][1].copy()
        for k in range(1, sset.n):
            keep &= warps[k][1]
        # centered accumulation: identical samples reproduce the center warp exactly
        center = warps[c][0]
        acc = np.zeros_like(center)
        for k in range(sset.n):
            if k != c:
                acc += w[k] * (warps[k][0] - center)
        expected = center + acc
        coef = [np.full(mu.shape, w[k]) for k in range(sset.n)]
    else:
        total = np.zeros(mu.shape)
        for k in range(sset.n):
            total += w[k] * warps[k][1]
        keep = total > 0
        norm = np.where(keep, total, 1.0)
        expected = np.zeros_like(warps[0][0])
        coef = []
        for k in range(sset.n):
            ck = np.where(warps[k][1], w[k], 0.0) / norm
            expected += ck[..., None] * warps[k][0]
            coef.append(ck)
        center = warps[c][0]
        expected = np.where(keep[..., None], expected, center)
    if not with_grad:
        return expected, keep
    d_exp = [coef[k][..., None] * warps[k][2] for k in range(sset.n)]
    return expected, keep, d_exp, stack[1], stack[2]


def _setup(eta: EtaMap, I_s, K, T):
    src = as_image(I_s)
    if eta.shape != src.shape[:2]:
        raise ValueError(f"EtaMap shape {eta.shape} does not match image shape {src.shape[:2]}")
    return src, Reprojector.for_grid(*eta.shape, K, T)


def expected_reconstruction(
    eta: EtaMap,
    I_s,
    K: CameraIntrinsics,
    T: RigidPose,
    sset: SampleSet,
    cfg: PhotometricConfig = PhotometricConfig(),
) -> WarpResult:
    """Weighted average of the reconstructions warped with each depth sample."""
    src, proj = _setup(eta, I_s, K, T)
    expected, keep = _expected(src, proj, eta.mu, eta.alpha, eta.family, eta.parameterization, sset, cfg, False)
    return WarpResult(expected, keep)


def expected_reconstruction_points(source, proj: Reprojector, mu, alpha, family, sset: SampleSet,
                                   parameterization="alpha", cfg: PhotometricConfig = PhotometricConfig()):
    """Expected reconstruction at an arbitrary set of target pixels.

    ``proj`` fixes the pixels; ``mu`` and ``alpha`` share its shape.
    """
    return _expected(as_image(source), proj, np.asarray(mu, float), np.asarray(alpha, float),
                     family, parameterization, sset, cfg, False)


def recons_loss(eta, I_t, I_s, K, T, sset, cfg: PhotometricConfig = PhotometricConfig()) -> LossValue:
    recon = expected_reconstruction(eta, I_s, K, T, sset, cfg)
    return photometric_error(recon.image, I_t, cfg, recon.in_bounds)


class ReconsObjective:
    """Loss and gradient for a fixed image pair and rig.

    Caches the reprojection coefficients so repeated evaluations during
    optimization or gradient checking only recompute depth-dependent terms.
    """

    def __init__(self, I_t, I_s, K, T, sset: SampleSet, cfg: PhotometricConfig = PhotometricConfig()):
        self.target, self.source = _check_pair(I_t, I_s)
        self.proj = Reprojector.for_grid(*self.target.shape[:2], K, T)
        self.sset = sset
        self.cfg = cfg

    def _check(self, eta: EtaMap):
        if eta.shape != self.target.shape[:2]:
            raise ValueError(f"EtaMap shape {eta.shape} does not match image shape {self.target.shape[:2]}")

    def loss(self, eta: EtaMap) -> LossValue:
        self._check(eta)
        expected, keep = _expected(self.source, self.proj, eta.mu, eta.alpha, eta.family,
                                   eta.parameterization, self.sset, self.cfg, False)
        return photometric_error(expected, self.target, self.cfg, keep)

    def loss_and_grad(self, eta: EtaMap):
        """``(LossValue, dL/dmu, dL/dalpha)``; gradients have the EtaMap shape."""
        self._check(eta)
        expected, keep, d_exp, d_mu, d_spread = _expected(
            self.source, self.proj, eta.mu, eta.alpha, eta.family, eta.parameterization, self.sset, self.cfg, True
        )
        loss = photometric_error(expected, self.target, self.cfg, keep)
        g_img = photometric_error_grad(expected, self.target, self.cfg, keep)
        g_mu = np.zeros(eta.shape)
        g_alpha = np.zeros(eta.shape)
        for k in range(self.sset.n):
            g_depth = np.sum(g_img * d_exp[k], axis=2)
            g_mu += g_depth * d_mu[k]
            g_alpha += g_depth * d_spread[k]
        return loss, g_mu, g_alpha


def recons_loss_grad(eta, I_t, I_s, K, T, sset, cfg: PhotometricConfig = PhotometricConfig()):
    """Per-pixel ``(dL/dmu, dL/dalpha)`` of :func:`recons_loss`."""
    _, g_mu, g_alpha = ReconsObjective(I_t, I_s, K, T, sset, cfg).loss_and_grad(eta)
    return g_mu, g_alpha
