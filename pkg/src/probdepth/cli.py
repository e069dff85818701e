"""Command-line entry point: ``probdepth {gen,optimize,distill,eval,gradcheck}``.

Exit codes: 0 success, 1 runtime error (or failed gradient check),
2 invalid arguments.  Every run writes ``config.json`` (the parsed flags)
into its output directory; identical flags give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io_formats as fio
from .camgeom import CameraIntrinsics, RigidPose
from .depthdist import PARAMETERIZATIONS, DistributionFamily, EtaMap
from .metrics import TIE_POLICIES, EvalFrame, evaluate
from .photoloss import MASK_POLICIES, MODES, PhotometricConfig
from .synthlab.gradcheck import finite_diff_check, random_check_instance
from .synthlab.optimize import DISTILL_LOSSES, DistillConfig, OptimizeConfig, distill_eta, optimize_eta
from .synthlab.scenes import PROFILES, TEXTURES, DepthProfile, Scene, SceneSpec, gen_scene, ground_truth_depth

ARTIFACT = "artifact choice"


class UsageError(Exception):
    """Invalid flag combination detected after parsing (exit code 2)."""


def _checked(kind, test, what):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if not test(value):
            raise argparse.ArgumentTypeError(f"must be {what}, got {text}")
        return value

    return parse


positive = _checked(float, lambda x: np.isfinite(x) and x > 0, "> 0")
non_negative = _checked(float, lambda x: np.isfinite(x) and x >= 0, ">= 0")
unit = _checked(float, lambda x: 0 <= x <= 1, "in [0, 1]")
momentum = _checked(float, lambda x: 0 <= x < 1, "in [0, 1)")
pos_int = _checked(int, lambda x: x > 0, "a positive integer")
size = _checked(int, lambda x: x >= 2, "an integer >= 2")
odd = _checked(int, lambda x: x > 0 and x % 2 == 1, "a positive odd integer")
step_rel = _checked(float, lambda x: 1e-6 <= x <= 1e-2, "in [1e-6, 1e-2]")
seed_int = _checked(int, lambda x: x >= 0, "a non-negative integer")


def _rect(text):
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x0,y0,x1,y1 integers, got {text!r}") from None
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected x0,y0,x1,y1 integers, got {text!r}")
    return tuple(parts)


def _photometric_flags(p):
    p.add_argument("--mode", choices=MODES, default="ssim_l1", help="photometric error (default: ssim_l1)")
    p.add_argument("--ssim-weight", type=unit, default=0.85, help="SSIM share of the error, unitless (default: 0.85)")
    p.add_argument("--mask-policy", choices=MASK_POLICIES, default="and",
                   help=f"which warped samples count as valid (default: and; {ARTIFACT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probdepth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic stereo scene")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--texture", choices=TEXTURES, default="random-smooth", help="surface texture")
    g.add_argument("--profile", choices=PROFILES, default="fronto-parallel", help="ground-truth depth layout")
    g.add_argument("--depth", type=positive, default=10.0, help="(background) depth, meters (default: 10)")
    g.add_argument("--gradient", type=float, default=0.0, help="slanted-plane depth change, meters per pixel column")
    g.add_argument("--near", type=positive, default=5.0, help="occluder depth for two-layer, meters (default: 5)")
    g.add_argument("--rect", type=_rect, default=(24, 16, 47, 47),
                   help="occluder rectangle x0,y0,x1,y1, inclusive target pixels")
    g.add_argument("--width", type=size, default=64, help="image width, pixels (default: 64)")
    g.add_argument("--height", type=size, default=64, help="image height, pixels (default: 64)")
    g.add_argument("--baseline", type=positive, default=0.5, help="stereo baseline, meters (default: 0.5)")
    g.add_argument("--focal", type=positive, default=100.0, help="focal length, pixels (default: 100)")
    g.add_argument("--noise", type=non_negative, default=0.0, help="photometric noise std, intensity units in [0, 1]")
    g.add_argument("--smoothness", type=non_negative, default=6.0,
                   help=f"random texture blur std, pixels (default: 6; {ARTIFACT})")
    g.add_argument("--checker-size", type=pos_int, default=4, help="checker square side, pixels")
    g.add_argument("--channels", type=int, choices=(1, 3), default=3, help=f"image channels ({ARTIFACT})")
    g.add_argument("--seed", type=seed_int, default=0, help="PCG64 seed")
    g.set_defaults(func=cmd_gen)

    o = sub.add_parser("optimize", help="fit a per-pixel depth distribution map to a scene")
    o.add_argument("--scene", required=True, help="scene directory written by gen")
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("--steps", type=pos_int, default=3000, help=f"descent steps (default: 3000; {ARTIFACT})")
    o.add_argument("--lr-mu", type=positive, default=0.25, help=f"mean step, pixels of disparity ({ARTIFACT})")
    o.add_argument("--lr-alpha", type=positive, default=0.02, help=f"spread step, spread units ({ARTIFACT})")
    o.add_argument("--momentum", type=momentum, default=0.9, help="heavy-ball momentum, unitless")
    o.add_argument("--init-mu", type=positive, default=None, help="initial mean depth, meters (default: 2x median true depth)")
    o.add_argument("--init-alpha", type=non_negative, default=0.1,
                   help="initial spread: alpha (unitless) or sigma (meters) per --param")
    o.add_argument("--n", type=odd, default=9, help="samples per pixel (default: 9)")
    o.add_argument("--family", choices=("gauss", "laplace"), default="gauss", help="depth distribution family")
    o.add_argument("--param", choices=PARAMETERIZATIONS, default="alpha", help="spread parameterization (default: alpha)")
    _photometric_flags(o)
    o.set_defaults(func=cmd_optimize)

    d = sub.add_parser("distill", help="fit a Gaussian student to a frozen teacher map")
    d.add_argument("--teacher", required=True, help="directory holding mu.pfm and alpha.pfm")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--loss", choices=DISTILL_LOSSES, default="kl", help="distillation loss (default: kl)")
    d.add_argument("--steps", type=pos_int, default=5000, help="descent steps (default: 5000)")
    d.add_argument("--lr", type=positive, default=0.1, help=f"natural-gradient step, unitless ({ARTIFACT})")
    d.add_argument("--momentum", type=momentum, default=0.9, help="heavy-ball momentum, unitless")
    d.add_argument("--sigma-floor", type=positive, default=1e-4, help="lower bound on student sigma, meters")
    d.add_argument("--freeze-mu", action="store_true", help="keep the student mean at its initial value")
    d.add_argument("--seed", type=seed_int, default=0, help="PCG64 seed of the random student init")
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("eval", help="depth and uncertainty metrics")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames", help="directory of frames (d_hat.pfm, u.pfm, d_star.pfm[, mask.pgm]), "
                                      "or a single such frame")
    src.add_argument("--scene", help="scene directory written by gen (use with --eta)")
    e.add_argument("--eta", help="EtaMap directory written by optimize; u = sigma in meters")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--median-scaling", action="store_true", help="scale each prediction to the ground-truth median")
    e.add_argument("--ties", choices=TIE_POLICIES, default="average", help=f"equal-uncertainty handling ({ARTIFACT})")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    c.add_argument("--scene", help="scene directory (default: random 8x8 instance)")
    c.add_argument("--eta", help="EtaMap directory (required with --scene)")
    c.add_argument("--seed", type=seed_int, default=0, help="seed of the random instance and coordinate draw")
    c.add_argument("--step-rel", type=step_rel, default=1e-4, help="relative probe step, unitless")
    c.add_argument("--coords", type=pos_int, default=200, help="number of coordinates to probe")
    c.add_argument("--bound", type=positive, default=1e-5, help="maximum allowed median relative error")
    c.add_argument("--n", type=odd, default=9, help="samples per pixel (default: 9)")
    c.add_argument("--family", choices=("gauss", "laplace"), default="gauss", help="depth distribution family")
    c.add_argument("--out", help="optional output directory for the report")
    _photometric_flags(c)
    c.set_defaults(func=cmd_gradcheck)
    return parser


# ------------------------------------------------------------------ helpers


def _prepare_out(path, args):
    os.makedirs(path, exist_ok=True)
    # the output location itself is left out so that runs compare byte-for-byte
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
           if k not in ("func", "out")}
    fio.write_json(os.path.join(path, "config.json"), cfg)


def _photometric(args) -> PhotometricConfig:
    return PhotometricConfig(mode=args.mode, ssim_weight=args.ssim_weight, mask_policy=args.mask_policy)


def write_scene(directory, scene: Scene) -> None:
    os.makedirs(directory, exist_ok=True)
    j = os.path.join
    fio.write_pfm(j(directory, "target.pfm"), scene.target)
    fio.write_pfm(j(directory, "source.pfm"), scene.source)
    fio.write_pfm(j(directory, "depth.pfm"), scene.depth)
    fio.write_mask(j(directory, "mask.pgm"), scene.visible)
    fio.write_mask(j(directory, "occluded.pgm"), scene.occluded)
    fio.write_mask(j(directory, "textured.pgm"), scene.textured)
    K, T = scene.K, scene.T
    rig = {
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy},
        "rotation": T.rotation.tolist(),
        "translation": T.translation.tolist(),
    }
    fio.write_json(j(directory, "rig.json"), rig)
    if scene.spec is not None:
        fio.write_json(j(directory, "scene.json"), scene.spec.to_dict())


def read_scene(directory) -> Scene:
    j = os.path.join
    rig = fio.read_json(j(directory, "rig.json"))
    K = CameraIntrinsics(**{k: float(v) for k, v in rig["intrinsics"].items()})
    T = RigidPose(np.array(rig["rotation"], dtype=float), np.array(rig["translation"], dtype=float))
    target = fio.read_pfm(j(directory, "target.pfm")).astype(float)
    source = fio.read_pfm(j(directory, "source.pfm")).astype(float)
    depth = fio.read_pfm(j(directory, "depth.pfm")).astype(float)
    visible = fio.read_mask(j(directory, "mask.pgm"))
    occluded = fio.read_mask(j(directory, "occluded.pgm"))
    textured = fio.read_mask(j(directory, "textured.pgm"))
    spec_path = j(directory, "scene.json")
    spec = SceneSpec.from_dict(fio.read_json(spec_path)) if os.path.exists(spec_path) else None
    return Scene(target, source, depth, K, T, occluded, ~visible & ~occluded, textured, spec)


def _accuracy(eta: EtaMap, scene: Scene) -> dict:
    sel = scene.textured & scene.visible
    if not sel.any():
        return {}
    rel = np.abs(eta.mu - scene.depth)[sel] / scene.depth[sel]
    return {"abs_rel": float(rel.mean()), "within_5pct": float(np.mean(rel < 0.05)), "n_pixels": int(sel.sum())}


# ------------------------------------------------------------------ commands


def _validated(build):
    try:
        return build()
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def cmd_gen(args):
    def build():
        profile = DepthProfile(kind=args.profile, depth=args.depth, gradient=args.gradient, near=args.near,
                               rect=args.rect)
        spec = SceneSpec(width=args.width, height=args.height, texture=args.texture, profile=profile,
                         baseline=args.baseline, focal=args.focal, noise_std=args.noise, seed=args.seed,
                         checker_size=args.checker_size, smoothness=args.smoothness, channels=args.channels)
        ground_truth_depth(spec)
        return spec

    spec = _validated(build)
    scene = gen_scene(spec)
    _prepare_out(args.out, args)
    write_scene(args.out, scene)
    print(f"wrote scene {spec.width}x{spec.height} to {args.out}")


def cmd_optimize(args):
    scene = read_scene(args.scene)
    init_mu = args.init_mu if args.init_mu is not None else 2.0 * float(np.median(scene.depth))
    cfg = _validated(lambda: OptimizeConfig(
        steps=args.steps, lr_mu=args.lr_mu, lr_alpha=args.lr_alpha, momentum=args.momentum, init_mu=init_mu,
        init_alpha=args.init_alpha, n_samples=args.n, family=args.family, parameterization=args.param,
        photometric=_photometric(args)))
    trace = optimize_eta(scene, cfg)
    _prepare_out(args.out, args)
    fio.write_eta(args.out, trace.eta)
    fio.write_trace_csv(os.path.join(args.out, "trace.csv"), trace)
    summary = {"final_loss": trace.losses[-1], "steps": len(trace.losses), **_accuracy(trace.eta, scene)}
    fio.write_json(os.path.join(args.out, "summary.json"), summary)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))


def cmd_distill(args):
    teacher = fio.read_eta(args.teacher)
    cfg = _validated(lambda: DistillConfig(
        steps=args.steps, loss=args.loss, lr=args.lr, momentum=args.momentum, seed=args.seed,
        sigma_floor=args.sigma_floor, freeze_mu=args.freeze_mu))
    trace = distill_eta(teacher, cfg)
    _prepare_out(args.out, args)
    fio.write_eta(args.out, trace.eta)
    fio.write_trace_csv(os.path.join(args.out, "trace.csv"), trace)
    s = trace.eta
    summary = {
        "final_loss": trace.losses[-1],
        "max_rel_err_mu": float(np.max(np.abs(s.mu - teacher.mu) / teacher.mu)),
        "max_rel_err_sigma": float(np.max(np.abs(s.sigma - teacher.sigma) / teacher.sigma)),
    }
    fio.write_json(os.path.join(args.out, "summary.json"), summary)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))


def _load_frame(directory) -> EvalFrame:
    j = os.path.join
    d_hat = fio.read_pfm(j(directory, "d_hat.pfm")).astype(float)
    u = fio.read_pfm(j(directory, "u.pfm")).astype(float)
    d_star, finite = fio.read_pfm(j(directory, "d_star.pfm"), with_mask=True)
    d_star = d_star.astype(float)
    mask_path = j(directory, "mask.pgm")
    if os.path.exists(mask_path):
        mask = fio.read_mask(mask_path) & finite
    else:
        mask = finite & (d_star > 0)
    return EvalFrame(d_hat, np.where(finite, d_star, 1.0), u, mask)


def cmd_eval(args):
    if args.scene is not None:
        if args.eta is None:
            raise UsageError("--scene requires --eta")
        scene = read_scene(args.scene)
        eta = fio.read_eta(args.eta)
        frames = [EvalFrame(eta.mu, scene.depth, eta.sigma, scene.visible)]
    else:
        if args.eta is not None:
            raise UsageError("--eta is only valid with --scene")
        root = args.frames
        if os.path.exists(os.path.join(root, "d_hat.pfm")):
            dirs = [root]
        else:
            dirs = sorted(os.path.join(root, n) for n in os.listdir(root)
                          if os.path.exists(os.path.join(root, n, "d_hat.pfm")))
        if not dirs:
            raise UsageError(f"--frames: no frame directories found in {root}")
        frames = [_load_frame(p) for p in dirs]
    report, curves = evaluate(frames, median_scaling=args.median_scaling, ties=args.ties)
    _prepare_out(args.out, args)
    fio.write_report(report, os.path.join(args.out, "report.json"))
    fio.write_curves_csv(os.path.join(args.out, "curves.csv"), curves)
    print(f"abs_rel={report.abs_rel} rmse={report.rmse} delta1={report.delta1} aru={report.aru} rmsu={report.rmsu}")


def cmd_gradcheck(args):
    family = DistributionFamily.from_name(args.family)
    if args.scene is not None:
        if args.eta is None:
            raise UsageError("--scene requires --eta")
        scene = read_scene(args.scene)
        eta = fio.read_eta(args.eta, family)
    else:
        if args.eta is not None:
            raise UsageError("--eta is only valid with --scene")
        scene, eta = random_check_instance(args.seed, family=args.family)
    report = finite_diff_check(scene, eta, args.step_rel, args.coords, args.seed, _photometric(args), args.n)
    summary = report.summary()
    summary["bound"] = args.bound
    summary["passed"] = bool(summary["median_rel"] <= args.bound)
    if args.out:
        _prepare_out(args.out, args)
        fio.write_json(os.path.join(args.out, "gradcheck.json"), summary)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0 if summary["passed"] else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"probdepth {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
