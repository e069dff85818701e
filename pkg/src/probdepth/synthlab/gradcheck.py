"""Central-difference check of the reconstruction-loss gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camgeom import Reprojector
from ..depthdist import DistributionFamily, EtaMap, SampleSet, _sample_stack
from ..photoloss import PhotometricConfig, ReconsObjective
from .scenes import Scene, SceneSpec, gen_scene


@dataclass
class GradCheckReport:
    """Discrepancy statistics; ``rel_err[i]`` belongs to ``coords[i] = (param, row, col)``."""

    coords: list[tuple[str, int, int]]
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    lattice: np.ndarray  # True where the +-h probe crosses a bilinear cell or the bounds

    @property
    def median_rel(self) -> float:
        return float(np.median(self.rel_err))

    @property
    def max_rel(self) -> float:
        return float(np.max(self.rel_err))

    @property
    def max_rel_off_lattice(self) -> float:
        off = self.rel_err[~self.lattice]
        return float(off.max()) if off.size else 0.0

    @property
    def n_lattice(self) -> int:
        return int(self.lattice.sum())

    def summary(self) -> dict:
        return {
            "n_coords": len(self.coords),
            "median_rel": self.median_rel,
            "max_rel": self.max_rel,
            "max_rel_off_lattice": self.max_rel_off_lattice,
            "n_lattice": self.n_lattice,
        }


def _cells(scene: Scene, sset: SampleSet, eta: EtaMap, i: int, j: int):
    # bilinear cell and bounds status of every depth sample at pixel (i, j)
    depths = _sample_stack(eta.mu[i : i + 1, j : j + 1], eta.alpha[i : i + 1, j : j + 1],
                           eta.family, eta.parameterization, sset)
    H, W = scene.shape
    proj = Reprojector(np.array([[float(j)]]), np.array([[float(i)]]), scene.K, scene.T)
    out = []
    for d in depths:
        us, vs, valid = proj.project(d)
        x, y = float(us[0, 0]), float(vs[0, 0])
        inside = bool(valid[0, 0]) and 0 <= x <= W - 1 and 0 <= y <= H - 1
        out.append((np.floor(x), np.floor(y), inside))
    return out


def finite_diff_check(
    scene: Scene,
    eta: EtaMap,
    step_rel: float = 1e-4,
    n_coords: int = 200,
    seed: int = 0,
    photometric: PhotometricConfig = PhotometricConfig(),
    n_samples: int = 9,
    atol: float = 1e-12,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on random coordinates.

    Coordinates ``(param, row, col)`` are drawn without replacement from the
    ``2 * H * W`` entries of ``(mu, alpha)``; if fewer exist, all are used.
    The probe step is ``step_rel * max(|value|, 1e-3)``.  The relative error
    is ``|a - n| / max(|a|, |n|, atol)``.
    """
    if not 1e-6 <= step_rel <= 1e-2:
        raise ValueError("step_rel must lie in [1e-6, 1e-2]")
    sset = SampleSet.create(n_samples, eta.family)
    obj = ReconsObjective(scene.target, scene.source, scene.K, scene.T, sset, photometric)
    _, g_mu, g_alpha = obj.loss_and_grad(eta)
    H, W = eta.shape
    total = 2 * H * W
    rng = np.random.Generator(np.random.PCG64(seed))
    flat = rng.choice(total, size=min(n_coords, total), replace=False)
    coords, ana, num, lattice = [], [], [], []
    for f in flat:
        which = "mu" if f < H * W else "alpha"
        i, j = divmod(int(f) % (H * W), W)
        grad = g_mu if which == "mu" else g_alpha
        h = step_rel * max(abs(getattr(eta, which)[i, j]), 1e-3)
        probes = []
        for sign in (1.0, -1.0):
            e = eta.copy()
            getattr(e, which)[i, j] += sign * h
            probes.append(e)
        fd = (obj.loss(probes[0]).value - obj.loss(probes[1]).value) / (2 * h)
        coords.append((which, i, j))
        ana.append(grad[i, j])
        num.append(fd)
        lattice.append(_cells(scene, sset, probes[0], i, j) != _cells(scene, sset, probes[1], i, j))
    ana, num = np.array(ana), np.array(num)
    rel = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), atol)
    return GradCheckReport(coords, ana, num, rel, np.array(lattice, dtype=bool))


def random_check_instance(seed: int, size: int = 8, channels: int = 1, family: str = "gauss"):
    """A small random scene and EtaMap suited to gradient checking.

    The rig keeps all depth samples within a pixel or so of the target, so
    most of them stay in bounds on an 8x8 image.
    """
    spec = SceneSpec(width=size, height=size, texture="random-smooth", smoothness=0.0,
                     baseline=0.3, focal=10.0, seed=seed, channels=channels)
    scene = gen_scene(spec)
    rng = np.random.Generator(np.random.PCG64(seed + 1_000_003))
    eta = EtaMap(rng.uniform(4.0, 8.0, (size, size)), rng.uniform(0.05, 0.3, (size, size)),
                 DistributionFamily.from_name(family))
    return scene, eta
