"""Experiment configuration: a TOML file with nested sections.

See ``presets/`` for commented examples. Paths are resolved relative to the
directory of the configuration file.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from msct import _toml
from msct.errors import ConfigurationError
from msct.geometry import ScanGeometry, fan_geometry, parallel_geometry
from msct.optimizers import BacktrackConfig
from msct.prox import ProxConfig
from msct.regularizers import EdgeFieldParams

__all__ = ["ExperimentConfig", "ReconstructionBlock", "load_config", "apply_overrides"]

METHODS = ("fbs", "bregman")
REGULARIZERS = ("tv", "dtv")


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


@dataclass
class ReconstructionBlock:
    method: str
    regularizer: str
    alphas: list
    tol: float = 1e-6
    max_iters: int = 1000
    checkpoint_every: int = 0
    channels: Optional[list] = None

    @property
    def name(self) -> str:
        return f"{self.method}_{self.regularizer}"


@dataclass
class ExperimentConfig:
    """Validated experiment description (see :func:`load_config`)."""

    raw: dict
    base_dir: Path
    seed: int
    output_dir: Path
    threads: int
    geometry: dict
    phantom: Optional[dict]
    channels: list
    data: Optional[dict]
    side_info: dict
    edge: EdgeFieldParams
    reconstructions: list
    backtrack: BacktrackConfig
    prox: ProxConfig
    references: dict = field(default_factory=dict)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def image_size(self) -> tuple:
        n = (self.phantom if self.phantom is not None else self.data)["size"]
        return (int(n[0]), int(n[1])) if isinstance(n, list) else (int(n), int(n))

    def phantom_spec(self):
        from msct.simulation import default_phantom

        rows, cols = self.image_size()
        spec = default_phantom(cols, self.phantom.get("regions"), self.phantom.get("materials"))
        spec.shape = (rows, cols)
        if "width" in self.phantom:
            spec = spec.scaled(float(self.phantom["width"]) / spec.width)
        spec.validate()
        return spec

    def pixel_size(self) -> float:
        if self.phantom is not None:
            return self.phantom_spec().pixel_size
        return float(self.data["pixel_size"])

    def scan_geometry(self) -> ScanGeometry:
        g = self.geometry
        spacing = g.get("detector_spacing", self.pixel_size())
        arc = float(g.get("arc", 2 * math.pi))
        if g.get("kind", "parallel") == "parallel":
            return parallel_geometry(int(g["num_angles"]), int(g["num_detectors"]), float(spacing), arc)
        return fan_geometry(int(g["num_angles"]), int(g["num_detectors"]), float(spacing),
                            float(g["source_radius"]), float(g["detector_radius"]), arc)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigurationError(f"[{where}] lacks required key {key!r}")
    return section[key]


def _positive(value, what):
    if not (isinstance(value, (int, float)) and value > 0):
        raise ConfigurationError(f"{what} must be positive, got {value!r}")
    return value


def _size(value, what):
    if isinstance(value, list):
        if len(value) != 2:
            raise ConfigurationError(f"{what} must be an integer or [rows, cols]")
        return [_size(v, what) for v in value]
    if not (isinstance(value, int) and value > 0):
        raise ConfigurationError(f"{what} must be a positive integer, got {value!r}")
    return value


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as TOML literals."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        try:
            value = _toml.loads(f"v = {text}")["v"]
        except _toml.TOMLDecodeError:
            value = text
        node = raw
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends into a non-table")
        node[parts[-1]] = value
    return raw


def load_config(path, overrides=None) -> ExperimentConfig:
    """Read, override and validate an experiment configuration file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = _toml.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"configuration file {path} does not exist") from None
    except _toml.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    raw = apply_overrides(raw, overrides)
    return from_dict(raw, path.parent)


def from_dict(raw: dict, base_dir=".") -> ExperimentConfig:
    base_dir = Path(base_dir)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    def must_exist(p, what):
        rp = resolve(p)
        if not rp.exists():
            raise ConfigurationError(f"{what} {rp} does not exist")
        return rp

    phantom = raw.get("phantom")
    data = raw.get("data")
    if (phantom is None) == (data is None):
        raise ConfigurationError("exactly one of [phantom] or [data] must be given")
    # Measured sinograms carry their own geometry in the file header.
    geometry = dict(raw.get("geometry", {}))
    if geometry.get("kind", "parallel") not in ("parallel", "fan"):
        raise ConfigurationError(f"unknown geometry kind {geometry.get('kind')!r}")
    channels = []
    if phantom is not None:
        _require(geometry, "num_angles", "geometry")
        _require(geometry, "num_detectors", "geometry")
        phantom = dict(phantom)
        if phantom.get("noise", "poisson") not in ("poisson", "none"):
            raise ConfigurationError(f"unknown phantom noise model {phantom['noise']!r}")
        _size(_require(phantom, "size", "phantom"), "phantom.size")
        for key in ("regions", "materials"):
            if key in phantom:
                phantom[key] = must_exist(phantom[key], f"phantom {key} file")
        for ch in raw.get("channels", []):
            channels.append(dict(label=_require(ch, "label", "channels"),
                                 photon_count=_positive(_require(ch, "photon_count", "channels"), "photon_count")))
        if not channels:
            raise ConfigurationError("phantom mode needs at least one [[channels]] entry")
    else:
        data = dict(data)
        _size(_require(data, "size", "data"), "data.size")
        _positive(_require(data, "pixel_size", "data"), "data.pixel_size")
        sinos = dict(_require(data, "sinograms", "data"))
        if not sinos:
            raise ConfigurationError("[data.sinograms] is empty")
        data["sinograms"] = {label: must_exist(p, f"sinogram for {label}") for label, p in sinos.items()}
        channels = [dict(label=label) for label in data["sinograms"]]

    labels = [c["label"] for c in channels]
    if len(set(labels)) != len(labels):
        raise ConfigurationError("channel labels must be unique")

    side = dict(raw.get("side_information", {}))
    if "path" in side:
        side["path"] = must_exist(side["path"], "side-information image")
    else:
        side["alpha"] = [_positive(a, "side_information.alpha") for a in _as_list(side.get("alpha", 1e-4))]
    side.setdefault("tol", 1e-6)
    side.setdefault("max_iters", 1000)
    side.setdefault("select", "first")
    if side["select"] not in ("ssim", "psnr", "first"):
        raise ConfigurationError(f"unknown side-information selection rule {side['select']!r}")

    e = raw.get("edge_field", {})
    edge = EdgeFieldParams(float(e.get("eta", 0.9999)), float(e.get("epsilon", 0.01)), e.get("rule", "relative"))

    recs = []
    for blk in raw.get("reconstruction", []):
        method = _require(blk, "method", "reconstruction")
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
        for reg in _as_list(_require(blk, "regularizer", "reconstruction")):
            if reg not in REGULARIZERS:
                raise ConfigurationError(f"unknown regularizer {reg!r}; expected one of {REGULARIZERS}")
            alphas = [_positive(a, "reconstruction.alpha") for a in _as_list(_require(blk, "alpha", "reconstruction"))]
            chans = blk.get("channels")
            if chans is not None and not set(chans) <= set(labels):
                raise ConfigurationError(f"reconstruction block names unknown channels {set(chans) - set(labels)}")
            recs.append(ReconstructionBlock(method, reg, alphas, float(blk.get("tol", 1e-6)),
                                            int(blk.get("max_iters", 1000)), int(blk.get("checkpoint_every", 0)),
                                            chans))
    names = [(r.method, r.regularizer) for r in recs]
    if len(set(names)) != len(names):
        raise ConfigurationError("each method/regularizer pair may appear in only one reconstruction block")

    b = raw.get("backtracking", {})
    backtrack = BacktrackConfig(b.get("sigma0"), float(b.get("rho_down", 0.5)), float(b.get("rho_up", 1.1)),
                                int(b.get("max_backtracks", 50)))
    p = raw.get("prox", {})
    prox = ProxConfig(int(p.get("max_inner_iters", 100)), float(p.get("inner_tol", 1e-5)))

    refs = {}
    for label, ref in raw.get("metrics", {}).get("references", {}).items():
        if label not in labels and label != "fused":
            raise ConfigurationError(f"reference given for unknown channel {label!r}")
        refs[label] = must_exist(ref, f"reference image for {label}")

    return ExperimentConfig(
        raw=raw,
        base_dir=base_dir,
        seed=int(raw.get("seed", 0)),
        output_dir=resolve(raw.get("output_dir", "run")),
        threads=int(raw.get("threads", 1)),
        geometry=geometry,
        phantom=phantom,
        channels=channels,
        data=data,
        side_info=side,
        edge=edge,
        reconstructions=recs,
        backtrack=backtrack,
        prox=prox,
        references=refs,
    )
