"""Synthetic rectified stereo pairs with exact ground-truth depth.

Scenes are built from textured layers defined in source-image coordinates on
a canvas wider than the image, so every target pixel has a well-defined
colour even when its source lookup falls outside the source frame.  The
source image is the composite of the visible layers; the target image is
produced by sampling each pixel's own layer with the same bilinear kernel
used by the warper.  On non-occluded, in-bounds pixels
``warp_image(I_s, D_star)`` therefore reproduces ``I_t`` bit-exactly (before
noise).

Randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..camgeom import CameraIntrinsics, Reprojector, RigidPose, _bilinear
from ..depthdist import DEPTH_FLOOR

TEXTURES = ("checker", "random-smooth", "constant", "mixed")
PROFILES = ("fronto-parallel", "slanted-plane", "two-layer")


@dataclass(frozen=True)
class DepthProfile:
    """Ground-truth depth layout.

    ``fronto-parallel`` uses ``depth``; ``slanted-plane`` uses
    ``depth + gradient * (u - cx)`` (gradient in meters per pixel column);
    ``two-layer`` puts a fronto-parallel occluder at ``near`` inside
    ``rect = (x0, y0, x1, y1)`` (inclusive target pixels) in front of a
    background at ``depth``.
    """

    kind: str = "fronto-parallel"
    depth: float = 10.0
    gradient: float = 0.0
    near: float = 5.0
    rect: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"depth profile must be one of {PROFILES}, got {self.kind!r}")
        object.__setattr__(self, "rect", tuple(int(c) for c in self.rect))


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    texture: str = "random-smooth"
    profile: DepthProfile = field(default_factory=DepthProfile)
    baseline: float = 0.5
    focal: float = 100.0
    noise_std: float = 0.0
    seed: int = 0
    checker_size: int = 4
    smoothness: float = 6.0
    channels: int = 3

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("scene must be at least 2x2 pixels")
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}, got {self.texture!r}")
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")
        if not self.focal > 0:
            raise ValueError("focal must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.checker_size < 1:
            raise ValueError("checker_size must be >= 1")
        if self.smoothness < 0:
            raise ValueError("smoothness must be non-negative")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["profile"] = DepthProfile(**d.get("profile", {}))
        return cls(**d)


@dataclass
class Scene:
    target: np.ndarray
    source: np.ndarray
    depth: np.ndarray
    K: CameraIntrinsics
    T: RigidPose
    occluded: np.ndarray
    out_of_view: np.ndarray
    textured: np.ndarray
    spec: SceneSpec | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def visible(self) -> np.ndarray:
        """Pixels with a valid correspondence in the source image."""
        return ~self.occluded & ~self.out_of_view


def ground_truth_depth(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Depth map and the boolean occluder-pixel map of the target view."""
    H, W = spec.height, spec.width
    p = spec.profile
    v, u = np.mgrid[0:H, 0:W].astype(float)
    on_near = np.zeros((H, W), dtype=bool)
    if p.kind == "fronto-parallel":
        depth = np.full((H, W), float(p.depth))
    elif p.kind == "slanted-plane":
        depth = p.depth + p.gradient * (u - (W - 1) / 2.0)
    else:
        x0, y0, x1, y1 = p.rect
        if not (x0 <= x1 and y0 <= y1):
            raise ValueError("occluder rect must satisfy x0 <= x1 and y0 <= y1")
        if not p.near < p.depth:
            raise ValueError("occluder must be nearer than the background")
        on_near[max(y0, 0) : y1 + 1, max(x0, 0) : x1 + 1] = True
        if on_near.all():
            raise ValueError("occluder covers the entire image")
        depth = np.where(on_near, float(p.near), float(p.depth))
    if np.any(depth <= DEPTH_FLOOR):
        raise ValueError(f"all depths must exceed {DEPTH_FLOOR} m")
    return depth, on_near


def _texture(kind: str, shape, rng: np.random.Generator, spec: SceneSpec, x_origin: int) -> np.ndarray:
    """One layer of shape ``(H, Wc, C)``; random channels are drawn independently."""
    H, Wc = shape
    C = spec.channels
    y, x = np.mgrid[0:H, 0:Wc]
    x = x - x_origin
    if kind == "constant":
        return np.full((H, Wc, C), 0.5)
    if kind == "checker":
        s = spec.checker_size
        return np.repeat(np.where(((x // s) + (y // s)) % 2 == 0, 0.2, 0.8)[:, :, None], C, axis=2)
    chans = []
    for _ in range(C):
        noise = rng.standard_normal(shape)
        smooth = gaussian_filter(noise, spec.smoothness, mode="wrap") if spec.smoothness > 0 else noise
        lo, hi = smooth.min(), smooth.max()
        chans.append(0.1 + 0.8 * (smooth - lo) / (hi - lo))
    tex = np.stack(chans, axis=2)
    if kind == "mixed":
        tex = np.where((x < spec.width // 2)[:, :, None], tex, 0.5)
    return tex


def gen_scene(spec: SceneSpec) -> Scene:
    """Render a stereo pair for ``spec``; see the module docstring."""
    H, W = spec.height, spec.width
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    K = CameraIntrinsics.centered(W, H, spec.focal)
    T = RigidPose.stereo(spec.baseline)
    depth, on_near = ground_truth_depth(spec)
    fb = spec.focal * spec.baseline
    margin = int(math.ceil(fb / depth.min())) + 2
    canvas_shape = (H, W + 2 * margin)

    background = _texture(spec.texture, canvas_shape, rng, spec, margin)
    occluder = _texture(spec.texture, canvas_shape, rng, spec, margin) if on_near.any() else background

    # which source pixels show the occluder: x + disparity_near inside the rect's extent
    xs = np.arange(W, dtype=float)
    src_occ = np.zeros((H, W), dtype=bool)
    if on_near.any():
        x0, y0, x1, y1 = spec.profile.rect
        hit = (xs + fb / spec.profile.near >= x0 - 0.5) & (xs + fb / spec.profile.near < x1 + 0.5)
        src_occ[max(y0, 0) : y1 + 1, :] = hit[None, :]
    crop = slice(margin, margin + W)
    source = np.where(src_occ[:, :, None], occluder[:, crop], background[:, crop])

    proj = Reprojector.for_grid(H, W, K, T)
    us, vs, _ = proj.project(depth)
    inside = (us >= 0) & (us <= W - 1)
    target = np.empty((H, W, spec.channels))
    for layer, sel in ((background, ~on_near), (occluder, on_near)):
        in_frame, _ = _bilinear(layer[:, crop], us, vs)
        off_frame, _ = _bilinear(layer, us + margin, vs)
        target[sel] = np.where(inside[..., None], in_frame, off_frame)[sel]

    # a pixel is violated when its bilinear support touches the other layer in the source
    xc = np.clip(us, 0, W - 1)
    x0i = np.minimum(np.floor(xc), W - 2).astype(int)
    frac = xc - x0i
    rows = np.arange(H)[:, None]
    other = np.where(on_near, ~src_occ[rows, x0i], src_occ[rows, x0i]) & (frac < 1)
    other |= np.where(on_near, ~src_occ[rows, x0i + 1], src_occ[rows, x0i + 1]) & (frac > 0)
    occluded = other & inside

    clean = target
    pad = np.pad(clean, ((1, 1), (1, 1), (0, 0)), mode="edge")
    spread = np.zeros((H, W))
    for dy in range(3):
        for dx in range(3):
            diff = np.abs(pad[dy : dy + H, dx : dx + W] - clean).max(axis=2)
            spread = np.maximum(spread, diff)
    textured = spread > 1e-3

    if spec.noise_std > 0:
        target = np.clip(target + spec.noise_std * rng.standard_normal(target.shape), 0.0, 1.0)
        source = np.clip(source + spec.noise_std * rng.standard_normal(source.shape), 0.0, 1.0)
    return Scene(target, source, depth, K, T, occluded, ~inside, textured, spec)
