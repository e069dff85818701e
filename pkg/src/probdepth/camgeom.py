"""Pinhole reprojection and differentiable bilinear inverse warping.

Pixel (0, 0) is the center of the top-left pixel and the homogeneous ray of
pixel (u, v) is ``K^-1 (u, v, 1)``.  Images are ``(H, W, C)`` float arrays
(``(H, W)`` is accepted and promoted), depth maps are ``(H, W)`` in meters.

Reprojection is evaluated in an offset form,

    u_s = u + (n_x + (fx*t_x - (u - cx)*t_z) / d) / (g_z + t_z / d)

where ``g = R K^-1 p`` and ``n_x = fx*g_x - (u - cx)*g_z`` is expanded so
that identity rotations contribute an exact zero.  It is the same map as
``pi(K (R d K^-1 p + t))`` but keeps identity poses exact and integer
stereo disparities (``fx*b/d`` integral) free of rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

BEHIND_CAMERA_EPS = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (np.isfinite(self.fx) and self.fx > 0 and np.isfinite(self.fy) and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def centered(cls, width: int, height: int, focal: float) -> "CameraIntrinsics":
        """Square pixels with the principal point at the image center."""
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True)
class RigidPose:
    """Rigid motion ``X_s = R X_t + t`` from target to source camera."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def stereo(cls, baseline: float) -> "RigidPose":
        """Source camera displaced by ``baseline`` meters along +x.

        Scene points then appear ``fx*baseline/depth`` pixels further left in
        the source image.
        """
        return cls(np.eye(3), np.array([-baseline, 0.0, 0.0]))

    def inverse(self) -> "RigidPose":
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.rotation == np.eye(3)) and np.all(self.translation == 0.0))


class WarpResult(NamedTuple):
    image: np.ndarray
    in_bounds: np.ndarray


def as_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W), (H, W, 1) or (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


class Reprojector:
    """Per-pixel reprojection coefficients for a fixed set of target pixels.

    Everything that does not depend on depth is computed once here, so
    repeated warps during optimization only pay for the depth-dependent part.
    All arithmetic is elementwise: evaluating any subset of pixels gives
    bit-identical results to evaluating the full set.
    """

    def __init__(self, u, v, K: CameraIntrinsics, T: RigidPose):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        R = T.rotation
        tx, ty, tz = (float(c) for c in T.translation)
        eu = u - K.cx
        ev = v - K.cy
        rx = eu / K.fx
        ry = ev / K.fy
        tilt = R[2, 0] * rx + R[2, 1] * ry
        self.u = u
        self.v = v
        self.gz = tilt + R[2, 2]
        self.nx = (eu * (R[0, 0] - R[2, 2]) + R[0, 1] * (K.fx / K.fy) * ev + R[0, 2] * K.fx) - eu * tilt
        self.ny = (ev * (R[1, 1] - R[2, 2]) + R[1, 0] * (K.fy / K.fx) * eu + R[1, 2] * K.fy) - ev * tilt
        self.bx = K.fx * tx - eu * tz
        self.by = K.fy * ty - ev * tz
        self.tz = tz

    @classmethod
    def for_grid(cls, height: int, width: int, K: CameraIntrinsics, T: RigidPose) -> "Reprojector":
        v, u = np.mgrid[0:height, 0:width].astype(float)
        return cls(u, v, K, T)

    def project(self, depth, with_grad: bool = False):
        """Source coordinates ``(us, vs, valid[, dus, dvs])`` for ``depth``.

        ``valid`` is False where the transformed point lies at or behind the
        source camera plane; coordinates there are set to the target pixel.
        """
        d = np.asarray(depth, dtype=float)
        w = self.gz + self.tz / d
        z = d * w
        valid = z > BEHIND_CAMERA_EPS
        w_safe = np.where(valid, w, 1.0)
        us = np.where(valid, self.u + (self.nx + self.bx / d) / w_safe, self.u)
        vs = np.where(valid, self.v + (self.ny + self.by / d) / w_safe, self.v)
        if not with_grad:
            return us, vs, valid
        den = np.where(valid, z, 1.0) ** 2
        dus = np.where(valid, (self.nx * self.tz - self.gz * self.bx) / den, 0.0)
        dvs = np.where(valid, (self.ny * self.tz - self.gz * self.by) / den, 0.0)
        return us, vs, valid, dus, dvs


def reproject_pixel(p_t, depth: float, K: CameraIntrinsics, T: RigidPose):
    """Map target pixel ``p_t`` at ``depth`` meters to the source image.

    Returns ``((u_s, v_s), valid)``; ``valid`` is False when the point ends up
    behind the source camera.
    """
    depth = float(depth)
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    proj = Reprojector(np.array([float(p_t[0])]), np.array([float(p_t[1])]), K, T)
    us, vs, valid = proj.project(np.array([depth]))
    return (float(us[0]), float(vs[0])), bool(valid[0])


def _bilinear(img: np.ndarray, x, y, with_grad: bool = False):
    """Vectorized bilinear lookup into an ``(H, W, C)`` image.

    Returns values of shape ``x.shape + (C,)``, the in-bounds flag, and
    optionally the spatial derivatives ``dV/dx`` and ``dV/dy`` (zero where the
    coordinate was clamped; right-sided on lattice lines).
    """
    H, W, C = img.shape
    inside = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xc = np.clip(x, 0.0, W - 1)
    yc = np.clip(y, 0.0, H - 1)
    x0 = np.minimum(np.floor(xc), max(W - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(yc), max(H - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = (xc - x0)[..., None]
    ay = (yc - y0)[..., None]
    flat = img.reshape(H * W, C)
    r0 = y0 * W
    r1 = y1 * W
    i00 = np.take(flat, r0 + x0, axis=0)
    i10 = np.take(flat, r0 + x1, axis=0)
    i01 = np.take(flat, r1 + x0, axis=0)
    i11 = np.take(flat, r1 + x1, axis=0)
    top = (1.0 - ax) * i00 + ax * i10
    bottom = (1.0 - ax) * i01 + ax * i11
    values = (1.0 - ay) * top + ay * bottom
    if not with_grad:
        return values, inside
    gate = inside[..., None]
    dx = np.where(gate, (1.0 - ay) * (i10 - i00) + ay * (i11 - i01), 0.0)
    dy = np.where(gate, bottom - top, 0.0)
    if W == 1:
        dx = np.zeros_like(dx)
    if H == 1:
        dy = np.zeros_like(dy)
    return values, inside, dx, dy


def bilinear_sample(image, p):
    """Sample ``image`` at continuous coordinate ``p = (x, y)``.

    Coordinates are clamped to the image border; the returned flag is False
    when the unclamped point lies outside ``[0, W-1] x [0, H-1]``.
    """
    img = as_image(image)
    x, y = float(p[0]), float(p[1])
    if np.isnan(x) or np.isnan(y):
        raise ValueError("NaN sampling coordinate")
    values, inside = _bilinear(img, np.array([x]), np.array([y]))
    return values[0], bool(inside[0])


def warp_points(source, proj: Reprojector, depth, with_grad: bool = False):
    """Inverse-warp ``source`` at the pixels held by ``proj``.

    Returns ``(values, in_bounds)`` or ``(values, in_bounds, dvalues_ddepth)``.
    """
    img = source if isinstance(source, np.ndarray) and source.ndim == 3 else as_image(source)
    if with_grad:
        us, vs, valid, dus, dvs = proj.project(depth, with_grad=True)
        values, inside, gx, gy = _bilinear(img, us, vs, with_grad=True)
        ok = valid & inside
        jac = np.where(ok[..., None], gx * dus[..., None] + gy * dvs[..., None], 0.0)
        return values, ok, jac
    us, vs, valid = proj.project(depth)
    values, inside = _bilinear(img, us, vs)
    return values, valid & inside


def _check_depth(img: np.ndarray, depth) -> np.ndarray:
    d = np.asarray(depth, dtype=float)
    if d.shape != img.shape[:2]:
        raise ValueError(f"depth map shape {d.shape} does not match image shape {img.shape[:2]}")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("depth must be finite and positive")
    return d


def warp_image(I_s, D, K: CameraIntrinsics, T: RigidPose) -> WarpResult:
    """Reconstruct the target view by sampling ``I_s`` at reprojected pixels."""
    img = as_image(I_s)
    d = _check_depth(img, D)
    proj = Reprojector.for_grid(*d.shape, K, T)
    values, ok = warp_points(img, proj, d)
    return WarpResult(values, ok)


def warp_jacobian_depth(I_s, D, K: CameraIntrinsics, T: RigidPose) -> np.ndarray:
    """Per-pixel derivative of ``warp_image(I_s, D)`` w.r.t. ``D``, shape (H, W, C)."""
    img = as_image(I_s)
    d = _check_depth(img, D)
    proj = Reprojector.for_grid(*d.shape, K, T)
    return warp_points(img, proj, d, with_grad=True)[2]
