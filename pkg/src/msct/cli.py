"""Command line front end (``msct``).

Exit codes: 0 success, 1 unexpected library error, 2 configuration error,
3 numerical failure, 4 file format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from msct import __version__, io
from msct.config import load_config
from msct.errors import ConfigurationError, MSCTError
from msct.fusion import build_side_information, fuse_sinograms
from msct.geometry import ImageGrid
from msct.metrics import psnr, ssim
from msct.optimizers import BacktrackConfig, Regularizer, SmoothDataFit, bregman_solve, fbs_solve
from msct.pipeline import run_pipeline, simulate_channels
from msct.prox import ProxConfig
from msct.regularizers import EdgeFieldParams, build_xi
from msct.tomo import XRayTransform

log = logging.getLogger("msct")


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "output_dir", None) is not None:
        overrides.append(f"output_dir={json.dumps(str(Path(args.output_dir).resolve()))}")
    return load_config(args.config, overrides)


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    manifest = run_pipeline(cfg, args.config)
    for label, best in sorted(manifest["best"].items()):
        print(f"{label}: best {best['method']}/{best['regularizer']} alpha={best['alpha']:g} "
              f"ssim={best['score']:.4f} ({best['path']})")
    print(f"outputs written to {cfg.output_dir}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if cfg.phantom is None:
        raise ConfigurationError("simulate needs a [phantom] configuration")
    out = io.ensure_dir(cfg.output_dir)
    for ch in simulate_channels(cfg):
        io.write_sinogram(out / f"{ch.label}.sino.raw", ch.sinogram)
        io.write_image(out / f"{ch.label}.truth.raw", ch.truth)
        print(out / f"{ch.label}.sino.raw")
    return 0


def cmd_fuse(args) -> int:
    fused = fuse_sinograms([io.read_sinogram(p) for p in args.sinograms])
    io.write_sinogram(args.output, fused)
    return 0


def _shape(args):
    return (args.size, args.size)


def _pixel_size(args, sino) -> float:
    return args.pixel_size if args.pixel_size is not None else sino.geometry.detector_spacing


def cmd_sideinfo(args) -> int:
    fused = io.read_sinogram(args.sinogram)
    args.pixel_size = _pixel_size(args, fused)
    v, trace = build_side_information(fused, args.alpha, _shape(args), args.pixel_size, args.tol, args.max_iters,
                                      BacktrackConfig(), ProxConfig(args.inner_iters, args.inner_tol))
    io.write_image(args.output, v)
    xi = build_xi(v.values, EdgeFieldParams(args.eta, args.epsilon), args.pixel_size)
    if args.xi_output:
        io.write_image(args.xi_output, ImageGrid(np.hypot(xi.xi[0], xi.xi[1]), args.pixel_size))
    print(f"side information after {len(trace)} iterations -> {args.output}")
    return 0


def cmd_reconstruct(args) -> int:
    if args.regularizer == "dtv" and args.side_info is None:
        raise ConfigurationError("--side-info is required for dtv")
    sino = io.read_sinogram(args.sinogram)
    h = _pixel_size(args, sino)
    op = XRayTransform(sino.geometry, _shape(args), h)
    fit = SmoothDataFit(op, sino.values)
    weight = None
    if args.regularizer == "dtv":
        weight = build_xi(io.read_image(args.side_info).values, EdgeFieldParams(args.eta, args.epsilon), h)
    reg = Regularizer(args.alpha, weight, h, True, ProxConfig(args.inner_iters, args.inner_tol))
    ref = io.read_image(args.reference).values if args.reference else None
    if args.method == "fbs":
        u, trace = fbs_solve(fit, reg, BacktrackConfig(), args.tol, args.max_iters, reference=ref)
    else:
        state, trace = bregman_solve(fit, reg, BacktrackConfig(), args.max_iters, reference=ref)
        u = state.u
    io.write_image(args.output, ImageGrid(u, h))
    if args.trace:
        io.write_trace_csv(args.trace, trace)
    print(f"{args.method}/{args.regularizer}: {len(trace)} iterations -> {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    x = io.read_image(args.image).values
    ref = io.read_image(args.reference).values
    result = {"ssim": ssim(x, ref), "psnr": psnr(x, ref)}
    print(json.dumps(result, indent=2))
    return 0


def _solver_options(p):
    p.add_argument("--size", type=int, required=True, help="image side length in pixels")
    p.add_argument("--pixel-size", type=float, default=None,
                   help="defaults to the detector spacing of the sinogram")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--inner-iters", type=int, default=100)
    p.add_argument("--inner-tol", type=float, default=1e-5)
    p.add_argument("--eta", type=float, default=0.9999, help="cap on |xi| for dtv")
    p.add_argument("--epsilon", type=float, default=0.01, help="edge threshold relative to max |grad v|")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msct", description="Multi-energy CT reconstruction with TV and dTV.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in [("pipeline", cmd_pipeline, "run every stage from a configuration file"),
                              ("simulate", cmd_simulate, "simulate per-channel sinograms from a configuration")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML experiment configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration entry")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir")
        p.set_defaults(func=func)

    p = sub.add_parser("fuse", help="sum per-channel sinograms")
    p.add_argument("sinograms", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("sideinfo", help="TV reconstruction of a fused sinogram")
    p.add_argument("sinogram")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--xi-output", help="also write |xi| of the edge field")
    _solver_options(p)
    p.set_defaults(func=cmd_sideinfo)

    p = sub.add_parser("reconstruct", help="reconstruct one channel")
    p.add_argument("sinogram")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", choices=("fbs", "bregman"), default="fbs")
    p.add_argument("--regularizer", choices=("tv", "dtv"), default="tv")
    p.add_argument("--side-info")
    p.add_argument("--reference", help="ground truth for the SSIM/PSNR trace columns")
    p.add_argument("--trace", help="write the iteration trace as CSV")
    _solver_options(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="SSIM and PSNR of an image against a reference")
    p.add_argument("image")
    p.add_argument("reference")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MSCTError as exc:
        print(f"msct: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
