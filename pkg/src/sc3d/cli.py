"""Command-line front end: ``sc3d <command> [flags]``.

Results go to stdout as a single JSON object; progress goes to stderr.
Exit codes: 0 success, 1 invalid input, 2 file error, 3 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .camera import CameraPose
from .consistency import evaluate, project
from .io import (
    ConfigError,
    FormatError,
    RunConfig,
    load_grid,
    load_mask,
    load_views,
    read_run_config,
    save_grid,
    save_mask,
    quantize,
)
from .losses import l2d, l3d, supervised_total
from .optim import estimate_pose, reconstruct
from .oracle import gradcheck
from .voxel import binarize

log = logging.getLogger("sc3d")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def parse_angles(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"expected 'azimuth,elevation' in degrees, got {text!r}")
    try:
        az, el = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"expected 'azimuth,elevation' in degrees, got {text!r}") from None
    if not -90.0 <= el <= 90.0:
        raise UsageError(f"elevation {el} outside [-90, 90]")
    return az, el


def _config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config: {exc}") from None
    return read_run_config(text)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def _fail(msg) -> None:
    sys.stderr.write(f"sc3d: error: {msg}\n")


def _write_trace(path, trace) -> None:
    if path:
        Path(path).write_text("".join(json.dumps(r) + "\n" for r in trace))


def _pose(cfg: RunConfig, text: str) -> CameraPose:
    az, el = parse_angles(text)
    return cfg.pose(az, el)


def cmd_project(args) -> int:
    cfg = _config(args)
    pose = _pose(cfg, args.pose)
    H = args.height or cfg.mask_height
    W = args.width or cfg.mask_width
    grid = load_grid(args.voxel)
    P = project(grid, pose, cfg.resolved_intrinsics(W, H), H, W, cfg.sampling, args.threads)
    save_mask(args.out, P)
    _emit({"coverage": float(np.count_nonzero(quantize(P))) / P.size if P.size else 0.0})
    return EXIT_OK


def cmd_loss(args) -> int:
    cfg = _config(args)
    pose = _pose(cfg, args.pose)
    grid = load_grid(args.voxel)
    gt = load_grid(args.gt_voxel) if args.gt_voxel else None
    if gt is not None and gt.dim != grid.dim:
        raise UsageError(f"grid dimension mismatch: --voxel is {grid.dim}^3, --gt-voxel is {gt.dim}^3")
    mask = load_mask(args.mask)
    H, W = mask.shape
    ev = evaluate(grid, pose, mask, cfg.resolved_intrinsics(W, H), cfg.sampling, cfg.consistency,
                  threads=args.threads)
    lw = cfg.loss_weights
    terms = {
        "l_ray": ev.l_ray,
        "l_proj": ev.l_proj,
        "l_sc": ev.loss,
        "l_3d": l3d(grid, gt, lw.alpha_p, cfg.consistency.iou_denominator) if gt is not None else None,
        "l_2d": l2d(ev.projection, mask),
        # no latent code exists outside a trained encoder
        "l_kl": None,
    }
    present = {key: (val if val is not None else 0.0) for key, val in terms.items()}
    terms["total"] = supervised_total(present["l_3d"], present["l_2d"], present["l_sc"], present["l_kl"], lw)
    _emit(terms)
    return EXIT_OK


def cmd_estimate_pose(args) -> int:
    cfg = _config(args)
    init = _pose(cfg, args.init)
    if args.restarts < 1:
        raise UsageError("--restarts must be >= 1")
    grid = load_grid(args.voxel)
    mask = load_mask(args.mask)
    H, W = mask.shape
    log.info("estimating pose from %s x %s mask, %d restart(s)", H, W, args.restarts)
    est = estimate_pose(grid, mask, init, cfg.resolved_intrinsics(W, H), cfg.sampling, cfg.consistency,
                        cfg.optim, args.restarts, args.threads)
    _write_trace(args.trace, est.trace)
    _emit({
        "azimuth_deg": est.pose.azimuth_deg,
        "elevation_deg": est.pose.elevation_deg,
        "final_loss": est.final_loss,
        "iterations": len(est.trace) - 1,
    })
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    dim = args.grid_dim or cfg.grid_dim
    if dim < 1:
        raise UsageError("--grid-dim must be >= 1")
    if Path(args.out).suffix not in (".voxf", ".binvox"):
        raise UsageError("--out must end in .voxf or .binvox")
    views = load_views(args.views, cfg.translation)
    if not views:
        raise UsageError("view list is empty")
    shapes = {m.shape for m, _ in views}
    if len(shapes) != 1:
        raise UsageError(f"all masks must share one size, got {sorted(shapes)}")
    H, W = shapes.pop()
    log.info("reconstructing %d^3 grid from %d view(s)", dim, len(views))
    res = reconstruct(views, dim, cfg.resolved_intrinsics(W, H), cfg.sampling, cfg.consistency,
                      cfg.shape_optim, args.threads, cfg.init_occupancy, cfg.init_noise)
    grid = res.grid
    if Path(args.out).suffix == ".binvox":
        grid = binarize(grid)
    save_grid(args.out, grid)
    _write_trace(args.trace, res.trace)
    _emit({
        "final_loss": res.final_loss,
        "iterations": len(res.trace),
        "occupied_voxels": int(np.count_nonzero(res.grid.values >= 0.5)),
    })
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    for name in ("grid_dim", "n_samples", "mask_size", "triples"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    report = gradcheck(
        seed=args.seed,
        grid_dim=args.grid_dim,
        n_samples=args.n_samples,
        mask_size=args.mask_size,
        n_triples=args.triples,
        w=cfg.consistency,
        break_gradient=args.break_gradient,
    )
    _emit(report.to_json())
    return EXIT_OK if report.max_rel_error <= args.threshold else EXIT_CHECK


def cmd_info(args) -> int:
    cfg = _config(args)
    _emit({"version": __version__, "config": cfg.to_json()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")

    p = argparse.ArgumentParser(prog="sc3d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("project", parents=[common], help="render a soft silhouette")
    s.add_argument("--voxel", required=True)
    s.add_argument("--pose", required=True, help="'azimuth,elevation' in degrees")
    s.add_argument("--out", required=True, help="output .pgm")
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.set_defaults(fn=cmd_project)

    s = sub.add_parser("loss", parents=[common], help="evaluate every computable loss term")
    s.add_argument("--voxel", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--pose", required=True, help="'azimuth,elevation' in degrees")
    s.add_argument("--gt-voxel")
    s.set_defaults(fn=cmd_loss)

    s = sub.add_parser("estimate-pose", parents=[common], help="fit azimuth and elevation to a mask")
    s.add_argument("--voxel", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--init", required=True, help="'azimuth,elevation' in degrees")
    s.add_argument("--restarts", type=int, default=1)
    s.add_argument("--trace", help="write per-iteration records as JSON lines")
    s.set_defaults(fn=cmd_estimate_pose)

    s = sub.add_parser("reconstruct", parents=[common], help="fit a grid to posed silhouettes")
    s.add_argument("--views", required=True, help="JSON list of {mask, azimuth_deg, elevation_deg}")
    s.add_argument("--grid-dim", type=int)
    s.add_argument("--out", required=True, help="output .voxf (or .binvox, binarized at 0.5)")
    s.add_argument("--trace", help="write per-iteration records as JSON lines")
    s.set_defaults(fn=cmd_reconstruct)

    s = sub.add_parser("gradcheck", parents=[common], help="compare analytic and numeric gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid-dim", type=int, default=8)
    s.add_argument("--n-samples", type=int, default=16)
    s.add_argument("--mask-size", type=int, default=16)
    s.add_argument("--triples", type=int, default=1)
    s.add_argument("--threshold", type=float, default=1e-4)
    s.add_argument("--break-gradient", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("info", parents=[common], help="print the resolved run configuration")
    s.set_defaults(fn=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; report it as invalid input
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        _fail("--threads must be >= 1")
        return EXIT_INVALID
    try:
        return args.fn(args)
    except (FormatError, OSError) as exc:
        _fail(exc)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        _fail(exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
