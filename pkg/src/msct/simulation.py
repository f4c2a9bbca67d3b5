"""Synthetic multi-energy data: phantoms, Beer-Lambert counts and log sinograms.

Each energy channel is monoenergetic: every material has one attenuation
value per channel and the channel's expected unattenuated count per ray is
``photon_count``. Counts are Poisson with mean
``photon_count * exp(-(A u)_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from msct import _toml
from msct.errors import ConfigurationError
from msct.geometry import ImageGrid, ScanGeometry, Sinogram
from msct.tomo import XRayTransform

__all__ = [
    "Region",
    "PhantomSpec",
    "EnergyChannel",
    "rasterize_phantom",
    "expected_counts",
    "simulate_counts",
    "counts_to_sinogram",
    "load_materials",
    "default_phantom",
    "default_channels",
    "channel_seed",
    "VOID",
]

VOID = "void"


@dataclass(frozen=True)
class Region:
    """A painted shape. ``params`` holds ``center``/``radius`` (disk),
    ``center``/``size`` (axis-aligned rectangle) or ``vertices`` (polygon)."""

    shape: str
    material: str
    params: dict

    def bounds(self):
        """``(x_min, x_max, y_min, y_max)`` of the shape."""
        p = self.params
        if self.shape == "disk":
            (cx, cy), r = p["center"], p["radius"]
            return cx - r, cx + r, cy - r, cy + r
        if self.shape == "rectangle":
            (cx, cy), (w, h) = p["center"], p["size"]
            return cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2
        if self.shape == "polygon":
            v = np.asarray(p["vertices"], dtype=float)
            return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()
        raise ConfigurationError(f"unknown region shape {self.shape!r}")

    def contains(self, x, y) -> np.ndarray:
        p = self.params
        if self.shape == "disk":
            (cx, cy), r = p["center"], p["radius"]
            return (x - cx) ** 2 + (y - cy) ** 2 <= r * r
        if self.shape == "rectangle":
            (cx, cy), (w, h) = p["center"], p["size"]
            return (np.abs(x - cx) <= w / 2) & (np.abs(y - cy) <= h / 2)
        if self.shape == "polygon":
            return _inside_polygon(x, y, np.asarray(p["vertices"], dtype=float))
        raise ConfigurationError(f"unknown region shape {self.shape!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        d = dict(d)
        try:
            shape = d.pop("shape")
            material = d.pop("material")
        except KeyError as exc:
            raise ConfigurationError(f"region lacks key {exc}") from None
        needed = {"disk": ("center", "radius"), "rectangle": ("center", "size"), "polygon": ("vertices",)}
        if shape not in needed:
            raise ConfigurationError(f"unknown region shape {shape!r}")
        missing = [k for k in needed[shape] if k not in d]
        if missing:
            raise ConfigurationError(f"{shape} region lacks {', '.join(missing)}")
        return cls(shape, material, d)


def _inside_polygon(x, y, v):
    # Even-odd crossing rule on a horizontal ray towards +x.
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    n = len(v)
    for k in range(n):
        (x1, y1), (x2, y2) = v[k], v[(k + 1) % n]
        if y1 == y2:
            continue
        straddle = (y1 > y) != (y2 > y)
        x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddle & (x < x_cross)
    return inside


@dataclass
class PhantomSpec:
    """Canvas, painted regions and per-channel material attenuation.

    ``materials`` maps a material name to ``{channel_label: mu}``, with ``mu``
    in inverse length units matching ``pixel_size``. ``width`` is the
    physical side of the square canvas; ``pixel_size = width / cols``.
    """

    shape: tuple
    width: float
    regions: list = field(default_factory=list)
    materials: dict = field(default_factory=dict)

    @property
    def pixel_size(self) -> float:
        return self.width / self.shape[1]

    def validate(self):
        n1, n2 = self.shape
        if n1 < 1 or n2 < 1 or not self.width > 0:
            raise ConfigurationError("phantom canvas must be non-empty with positive width")
        hx, hy = self.width / 2, self.pixel_size * n1 / 2
        for reg in self.regions:
            x0, x1, y0, y1 = reg.bounds()
            if x0 < -hx or x1 > hx or y0 < -hy or y1 > hy:
                raise ConfigurationError(f"{reg.shape} region of {reg.material} extends outside the canvas")
            if reg.material != VOID and reg.material not in self.materials:
                raise ConfigurationError(f"unknown material {reg.material!r}")
        for name, mus in self.materials.items():
            if any(m < 0 for m in mus.values()):
                raise ConfigurationError(f"material {name} has negative attenuation")

    def scaled(self, factor: float) -> "PhantomSpec":
        """The same layout with every length multiplied by ``factor``."""
        regions = []
        for reg in self.regions:
            params = {k: (np.asarray(v, dtype=float) * factor).tolist() if k in ("center", "size", "vertices", "radius")
                      else v for k, v in reg.params.items()}
            regions.append(Region(reg.shape, reg.material, params))
        return PhantomSpec(tuple(self.shape), self.width * factor, regions, dict(self.materials))

    def material_map(self) -> np.ndarray:
        """Index of the topmost region covering each pixel centre, ``-1`` for background."""
        self.validate()
        n1, n2 = self.shape
        h = self.pixel_size
        x = (np.arange(n2) - (n2 - 1) / 2) * h
        y = ((n1 - 1) / 2 - np.arange(n1)) * h
        X, Y = np.meshgrid(x, y)
        idx = np.full(self.shape, -1, dtype=int)
        for k, reg in enumerate(self.regions):
            idx[reg.contains(X, Y)] = k
        return idx


@dataclass(frozen=True)
class EnergyChannel:
    label: str
    energy: float
    photon_count: float

    def __post_init__(self):
        if not self.photon_count > 0:
            raise ConfigurationError(f"channel {self.label}: photon_count must be positive")


def rasterize_phantom(spec: PhantomSpec, channel: EnergyChannel) -> ImageGrid:
    """Attenuation image of the phantom at one channel; background is 0."""
    idx = spec.material_map()
    lut = np.zeros(len(spec.regions) + 1)
    for k, reg in enumerate(spec.regions):
        if reg.material != VOID:
            try:
                lut[k] = spec.materials[reg.material][channel.label]
            except KeyError:
                raise ConfigurationError(
                    f"material {reg.material!r} has no attenuation for channel {channel.label}") from None
    return ImageGrid(lut[idx], spec.pixel_size)


def expected_counts(u: ImageGrid, geometry: ScanGeometry, channel: EnergyChannel) -> np.ndarray:
    """Mean photon counts ``I0 * exp(-A u)``."""
    op = XRayTransform(geometry, u.shape, u.pixel_size)
    return channel.photon_count * np.exp(-op.forward(u.values))


def simulate_counts(u: ImageGrid, geometry: ScanGeometry, channel: EnergyChannel, seed) -> np.ndarray:
    """Poisson photon counts, shape ``(num_angles, num_detectors)``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if np.any(u.values < 0):
        raise ConfigurationError("attenuation image must be nonnegative")
    rng = np.random.default_rng(seed)
    return rng.poisson(expected_counts(u, geometry, channel))


def counts_to_sinogram(counts, channel: EnergyChannel, geometry: ScanGeometry,
                       min_count: Optional[float] = 1.0) -> Sinogram:
    """Log transform ``b = -ln(max(Z, min_count) / I0)``.

    Zero counts are clamped to ``min_count`` photons so ``b`` stays finite.
    Pass ``min_count=None`` to disable the clamp for strictly positive data.
    """
    z = np.asarray(counts, dtype=float)
    if np.any(z < 0):
        raise ConfigurationError("counts must be nonnegative")
    if min_count is not None:
        z = np.maximum(z, min_count)
    return Sinogram(-np.log(z / channel.photon_count), geometry, channel.label)


def channel_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for channel ``index`` of a run."""
    return np.random.SeedSequence([int(seed), int(index)])


def load_materials(path=None) -> tuple[dict, dict]:
    """Read a materials table; returns ``(energies, {material: {label: mu}})``."""
    if path is None:
        data = _toml.loads(resources.files("msct.data").joinpath("materials.toml").read_text())
    else:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    mats = {name: {k: float(v) for k, v in m["mu"].items()} for name, m in data.get("materials", {}).items()}
    return dict(data.get("energies", {})), mats


def load_regions(path=None) -> tuple[float, list]:
    if path is None:
        data = _toml.loads(resources.files("msct.data").joinpath("phantom.toml").read_text())
    else:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    return float(data.get("width", 1.0)), [Region.from_dict(r) for r in data.get("regions", [])]


def default_phantom(n: int = 512, regions_path=None, materials_path=None) -> PhantomSpec:
    """The shipped quartz/pyrite/galena phantom on an ``n x n`` canvas."""
    width, regions = load_regions(regions_path)
    _, mats = load_materials(materials_path)
    spec = PhantomSpec((n, n), width, regions, mats)
    spec.validate()
    return spec


def default_channels(photon_counts: Sequence[float] = (4e7, 4e7, 4e7), materials_path=None) -> list:
    """Channels E0, E1, E2 at the energies of the materials table."""
    energies, _ = load_materials(materials_path)
    labels = sorted(energies)
    if len(photon_counts) != len(labels):
        raise ConfigurationError("one photon count per channel is required")
    return [EnergyChannel(lab, float(energies[lab]), float(c)) for lab, c in zip(labels, photon_counts)]
