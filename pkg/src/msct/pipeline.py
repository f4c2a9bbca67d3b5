"""End-to-end batch run: simulate, fuse, side information, reconstruct, evaluate.

Output layout (all names derive from the configuration)::

    MANIFEST.json                      hashes of inputs/outputs, completeness, best runs
    metrics.json                       summary over all runs
    truth/<label>.raw|.pgm             ground truth (phantom mode or given references)
    sinograms/<label>.raw|.pgm         per-channel and fused log sinograms
    side_info/alpha_<a>/v.raw, trace.csv
    side_info/v.raw|.pgm               selected side information
    side_info/xi_magnitude.raw|.pgm    |xi| of the edge field
    recon/<label>/<method>_<reg>/alpha_<a>/u.raw|.pgm, trace.csv, metrics.json
    recon/<label>/metrics.json
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from msct import io
from msct.config import ExperimentConfig
from msct.diffops import pointwise_norm
from msct.errors import ConfigurationError, MSCTError, PipelineError
from msct.fusion import build_side_information, fuse_sinograms
from msct.geometry import ImageGrid, Sinogram
from msct.metrics import psnr, ssim
from msct.optimizers import Regularizer, SmoothDataFit, bregman_solve, fbs_solve
from msct.regularizers import build_xi
from msct.simulation import (
    EnergyChannel,
    channel_seed,
    counts_to_sinogram,
    load_materials,
    rasterize_phantom,
    simulate_counts,
)
from msct.tomo import XRayTransform

__all__ = ["ChannelData", "run_pipeline", "simulate_channels", "select_side_information", "alpha_tag",
           "THREADS_ENV"]

log = logging.getLogger(__name__)

THREADS_ENV = "MSCT_THREADS"
LOCK_NAME = ".msct.lock"


@dataclass
class ChannelData:
    label: str
    sinogram: Sinogram
    truth: Optional[ImageGrid] = None


def alpha_tag(alpha: float) -> str:
    return f"alpha_{alpha:.6g}"


def _nan_to_none(x):
    return None if x is None or not np.isfinite(x) else float(x)


class _Outputs:
    """Writes artifacts below the output directory and remembers their hashes."""

    def __init__(self, root: Path):
        self.root = root
        self.files = {}

    def _target(self, rel) -> Path:
        path = self.root / rel
        io.ensure_dir(path.parent)
        return path

    def _record(self, path: Path):
        self.files[path.relative_to(self.root).as_posix()] = io.sha256_file(path)

    def image(self, rel, image: ImageGrid, preview=True):
        path = self._target(rel + ".raw")
        io.write_image(path, image)
        self._record(path)
        if preview:
            self.pgm(rel, image.values)

    def sinogram(self, rel, sino: Sinogram):
        path = self._target(rel + ".raw")
        io.write_sinogram(path, sino)
        self._record(path)
        self.pgm(rel, sino.values)

    def pgm(self, rel, values):
        path = self._target(rel + ".pgm")
        io.write_pgm16(path, values)
        self._record(path)

    def trace(self, rel, trace):
        path = self._target(rel)
        io.write_trace_csv(path, trace)
        self._record(path)

    def json(self, rel, obj):
        path = self._target(rel)
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        self._record(path)


def simulate_channels(cfg: ExperimentConfig) -> list:
    """Ground truth images and noisy (or exact) log sinograms for every channel."""
    spec = cfg.phantom_spec()
    geometry = cfg.scan_geometry()
    energies, _ = load_materials(cfg.phantom.get("materials"))
    exact = cfg.phantom.get("noise", "poisson") == "none"
    out = []
    for idx, ch in enumerate(cfg.channels):
        channel = EnergyChannel(ch["label"], float(ch.get("energy", energies.get(ch["label"], float("nan")))),
                                float(ch["photon_count"]))
        truth = rasterize_phantom(spec, channel)
        if exact:
            op = XRayTransform(geometry, truth.shape, truth.pixel_size)
            sino = Sinogram(op.forward(truth.values), geometry, channel.label)
        else:
            counts = simulate_counts(truth, geometry, channel, channel_seed(cfg.seed, idx))
            sino = counts_to_sinogram(counts, channel, geometry)
        out.append(ChannelData(channel.label, sino, truth))
    return out


def _load_channels(cfg: ExperimentConfig) -> list:
    out = []
    for label, path in cfg.data["sinograms"].items():
        sino = io.read_sinogram(path)
        truth = io.read_image(cfg.references[label]) if label in cfg.references else None
        out.append(ChannelData(label, Sinogram(sino.values, sino.geometry, label), truth))
    return out


def select_side_information(candidates: list, reference: Optional[np.ndarray], rule: str) -> int:
    """Index of the chosen candidate image (``rule`` is ``ssim``, ``psnr`` or ``first``).

    ``first`` ignores the reference. ``ssim`` and ``psnr`` pick against the
    fused ground truth, so later dTV runs are no longer oblivious to it;
    they exist for side-information studies on simulated data only.
    """
    if rule == "first" or reference is None or len(candidates) == 1:
        if rule != "first" and reference is None and len(candidates) > 1:
            log.warning("no fused reference available; using the first side-information alpha")
        return 0
    score = ssim if rule == "ssim" else psnr
    return int(np.argmax([score(c, reference) for c in candidates]))


def _side_information(cfg, fused, fused_truth, shape, h, out: _Outputs):
    side = cfg.side_info
    if "path" in side:
        v = io.read_image(side["path"])
        if v.shape != shape:
            raise ConfigurationError(f"side-information image has shape {v.shape}, expected {shape}")
        info = {"source": str(side["path"])}
    else:
        ref = None if fused_truth is None else fused_truth.values
        candidates, table = [], []
        for alpha in side["alpha"]:
            v_a, trace = build_side_information(fused, alpha, shape, h, side["tol"], side["max_iters"],
                                                cfg.backtrack, cfg.prox)
            tag = f"side_info/{alpha_tag(alpha)}"
            out.image(f"{tag}/v", v_a, preview=False)
            out.trace(f"{tag}/trace.csv", trace)
            candidates.append(v_a.values)
            table.append({"alpha": alpha, "iterations": len(trace),
                          "ssim": None if ref is None else ssim(v_a.values, ref),
                          "psnr": None if ref is None else _nan_to_none(psnr(v_a.values, ref))})
        k = select_side_information(candidates, ref, side["select"])
        v = ImageGrid(candidates[k], h)
        info = {"alpha": side["alpha"][k], "select": side["select"], "candidates": table}
    weight = build_xi(v.values, cfg.edge, h)
    out.image("side_info/v", v)
    out.image("side_info/xi_magnitude", ImageGrid(pointwise_norm(weight.xi), h))
    return v, weight, info


def _reconstruct_channel(cfg, ch: ChannelData, weight, out: _Outputs) -> list:
    h = cfg.pixel_size()
    shape = cfg.image_size()
    op = XRayTransform(ch.sinogram.geometry, shape, h)
    fit = SmoothDataFit(op, ch.sinogram.values)
    ref = None if ch.truth is None else ch.truth.values
    runs = []
    for blk in cfg.reconstructions:
        if blk.channels is not None and ch.label not in blk.channels:
            continue
        for alpha in blk.alphas:
            reg = Regularizer(alpha, weight if blk.regularizer == "dtv" else None, h, True, cfg.prox)
            rel = f"recon/{ch.label}/{blk.name}/{alpha_tag(alpha)}"
            log.info("reconstructing %s", rel)
            if blk.method == "fbs":
                u, trace = fbs_solve(fit, reg, cfg.backtrack, blk.tol, blk.max_iters, reference=ref)
            else:
                state, trace = bregman_solve(fit, reg, cfg.backtrack, blk.max_iters, blk.checkpoint_every,
                                             reference=ref)
                u = state.u
                for key, img in sorted(trace.checkpoints.items(), key=lambda kv: str(kv[0])):
                    name = key if isinstance(key, str) else f"iter_{key:06d}"
                    out.image(f"{rel}/{name}", ImageGrid(img, h), preview=False)
            out.image(f"{rel}/u", ImageGrid(u, h))
            out.trace(f"{rel}/trace.csv", trace)
            best = trace.best("ssim")
            entry = {
                "channel": ch.label, "method": blk.method, "regularizer": blk.regularizer, "alpha": alpha,
                "path": rel, "iterations": len(trace),
                "final_ssim": None if ref is None else ssim(u, ref),
                "final_psnr": None if ref is None else _nan_to_none(psnr(u, ref)),
                "best_ssim": None if best is None else best.ssim,
                "best_iter": None if best is None else best.iter,
            }
            # FBS is judged at its stopping point, Bregman at its best iteration.
            entry["score"] = entry["final_ssim"] if blk.method == "fbs" else entry["best_ssim"]
            out.json(f"{rel}/metrics.json", entry)
            runs.append(entry)
    out.json(f"recon/{ch.label}/metrics.json", runs)
    return runs


def _best_per_channel(runs: list) -> dict:
    best = {}
    for r in runs:
        if r["score"] is None:
            continue
        cur = best.get(r["channel"])
        if cur is None or r["score"] > cur["score"]:
            best[r["channel"]] = r
    return best


def _input_hashes(cfg: ExperimentConfig, config_path) -> dict:
    paths = [] if config_path is None else [Path(config_path)]
    if cfg.phantom is not None:
        paths += [cfg.phantom[k] for k in ("regions", "materials") if k in cfg.phantom]
    else:
        paths += list(cfg.data["sinograms"].values())
    paths += list(cfg.references.values())
    if "path" in cfg.side_info:
        paths.append(cfg.side_info["path"])
    return {str(p): io.sha256_file(p) for p in paths}


def _threads(cfg: ExperimentConfig) -> int:
    env = os.environ.get(THREADS_ENV)
    n = int(env) if env else cfg.threads
    if n < 1:
        raise ConfigurationError("thread count must be at least 1")
    return n


class _Lock:
    def __init__(self, root: Path):
        self.path = root / LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigurationError(f"{self.path} exists: another run is using this output directory") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def run_pipeline(cfg: ExperimentConfig, config_path=None) -> dict:
    """Run every stage and write the artifacts; returns the manifest dictionary.

    A failing stage raises :class:`PipelineError` tagged with the stage name
    after writing a manifest with ``"complete": false``.
    """
    root = io.ensure_dir(cfg.output_dir)
    out = _Outputs(root)
    manifest = {"complete": False, "seed": cfg.seed, "config": cfg.raw, "stage": None}
    with _Lock(root):
        try:
            manifest["inputs"] = _input_hashes(cfg, config_path)
            shape, h = cfg.image_size(), cfg.pixel_size()

            manifest["stage"] = "simulate"
            channels = simulate_channels(cfg) if cfg.phantom is not None else _load_channels(cfg)
            for ch in channels:
                out.sinogram(f"sinograms/{ch.label}", ch.sinogram)
                if ch.truth is not None:
                    if ch.truth.shape != shape:
                        raise ConfigurationError(f"reference for {ch.label} has shape {ch.truth.shape}")
                    out.image(f"truth/{ch.label}", ch.truth)

            manifest["stage"] = "fuse"
            fused = fuse_sinograms([ch.sinogram for ch in channels])
            out.sinogram("sinograms/fused", fused)
            if "fused" in cfg.references:
                fused_truth = io.read_image(cfg.references["fused"])
            elif all(ch.truth is not None for ch in channels):
                fused_truth = ImageGrid(sum(ch.truth.values for ch in channels), h)
            else:
                fused_truth = None
            if fused_truth is not None:
                out.image("truth/fused", fused_truth)

            manifest["stage"] = "side_info"
            _, weight, manifest["side_information"] = _side_information(cfg, fused, fused_truth, shape, h, out)

            manifest["stage"] = "reconstruct"
            n = min(_threads(cfg), len(channels))
            if n > 1:
                with ThreadPoolExecutor(max_workers=n) as pool:
                    per_channel = list(pool.map(lambda c: _reconstruct_channel(cfg, c, weight, out), channels))
            else:
                per_channel = [_reconstruct_channel(cfg, c, weight, out) for c in channels]
            runs = [r for rs in per_channel for r in rs]

            manifest["stage"] = "evaluate"
            manifest["runs"] = runs
            manifest["best"] = _best_per_channel(runs)
            out.json("metrics.json", {"side_information": manifest["side_information"], "runs": runs,
                                      "best": manifest["best"]})
            manifest["complete"] = True
            manifest["stage"] = None
        except MSCTError as exc:
            manifest["error"] = str(exc)
            raise PipelineError(manifest["stage"], exc) from exc
        except (OSError, ValueError, ArithmeticError) as exc:
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            raise PipelineError(manifest["stage"], exc) from exc
        finally:
            manifest["outputs"] = dict(sorted(out.files.items()))
            with open(root / "MANIFEST.json", "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
                fh.write("\n")
    return manifest
