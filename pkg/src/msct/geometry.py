"""Image grids, scan geometries and sinograms.

Images are stored as 2D arrays of shape ``(rows, cols)`` and centred on the
origin. Row 0 is the top of the image (largest y), column 0 the left edge
(smallest x). Sinograms are 2D arrays of shape ``(num_angles, num_detectors)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from msct.errors import ConfigurationError

__all__ = ["ImageGrid", "ScanGeometry", "Sinogram", "parallel_geometry", "fan_geometry"]


@dataclass
class ImageGrid:
    """A 2D attenuation image with square pixels of side ``pixel_size``."""

    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ConfigurationError(f"image must be a non-empty 2D array, got shape {self.values.shape}")
        if not self.pixel_size > 0:
            raise ConfigurationError(f"pixel_size must be positive, got {self.pixel_size}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("image contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, shape, pixel_size=1.0) -> "ImageGrid":
        return cls(np.zeros(shape), pixel_size)


@dataclass(frozen=True)
class ScanGeometry:
    """Acquisition geometry of a 2D scan.

    Parameters
    ----------
    kind : {"parallel", "fan"}
        Beam type.
    angles : tuple of float
        Projection angles in radians, strictly increasing within ``[0, 2*pi)``.
    num_detectors : int
        Detector cells per angle.
    detector_spacing : float
        Cell pitch on the detector, in the same length unit as pixel sizes.
    source_radius, detector_radius : float
        Fan beam only: distance from the rotation centre to the source and to
        the flat detector line.
    """

    kind: str
    angles: tuple
    num_detectors: int
    detector_spacing: float = 1.0
    source_radius: Optional[float] = None
    detector_radius: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in np.ravel(self.angles)))
        if self.kind not in ("parallel", "fan"):
            raise ConfigurationError(f"unknown geometry kind {self.kind!r}")
        if len(self.angles) < 1 or self.num_detectors < 1:
            raise ConfigurationError("geometry needs at least one angle and one detector")
        a = np.asarray(self.angles)
        if np.any(a < 0) or np.any(a >= 2 * np.pi) or np.any(np.diff(a) <= 0):
            raise ConfigurationError("angles must be strictly increasing within [0, 2*pi)")
        if not self.detector_spacing > 0:
            raise ConfigurationError("detector_spacing must be positive")
        if self.kind == "fan":
            if self.source_radius is None or self.detector_radius is None:
                raise ConfigurationError("fan-beam geometry needs source_radius and detector_radius")
            if not (self.source_radius > 0 and self.detector_radius > 0):
                raise ConfigurationError("fan-beam radii must be strictly positive")

    @property
    def num_angles(self) -> int:
        return len(self.angles)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_angles, self.num_detectors)

    def detector_offsets(self) -> np.ndarray:
        """Signed positions of the detector cell centres along the detector."""
        return (np.arange(self.num_detectors) - (self.num_detectors - 1) / 2) * self.detector_spacing

    def scaled(self, factor: float) -> "ScanGeometry":
        """The same geometry with every length multiplied by ``factor``."""
        return ScanGeometry(
            self.kind,
            self.angles,
            self.num_detectors,
            self.detector_spacing * factor,
            None if self.source_radius is None else self.source_radius * factor,
            None if self.detector_radius is None else self.detector_radius * factor,
        )

    def to_header(self) -> dict:
        hdr = {
            "geometry": self.kind,
            "num_angles": str(self.num_angles),
            "num_detectors": str(self.num_detectors),
            "detector_spacing": repr(self.detector_spacing),
            "angles": ",".join(repr(a) for a in self.angles),
        }
        if self.kind == "fan":
            hdr["source_radius"] = repr(self.source_radius)
            hdr["detector_radius"] = repr(self.detector_radius)
        return hdr

    @classmethod
    def from_header(cls, hdr: dict) -> "ScanGeometry":
        try:
            angles = tuple(float(a) for a in hdr["angles"].split(","))
            return cls(
                hdr["geometry"],
                angles,
                int(hdr["num_detectors"]),
                float(hdr["detector_spacing"]),
                float(hdr["source_radius"]) if "source_radius" in hdr else None,
                float(hdr["detector_radius"]) if "detector_radius" in hdr else None,
            )
        except KeyError as exc:
            raise ConfigurationError(f"geometry header lacks key {exc}") from None


def parallel_geometry(num_angles, num_detectors, detector_spacing=1.0, arc=2 * np.pi) -> ScanGeometry:
    """Parallel beam with ``num_angles`` angles uniformly spaced in ``[0, arc)``."""
    angles = np.arange(num_angles) * (arc / num_angles)
    return ScanGeometry("parallel", tuple(angles), num_detectors, detector_spacing)


def fan_geometry(num_angles, num_detectors, detector_spacing, source_radius, detector_radius,
                 arc=2 * np.pi) -> ScanGeometry:
    """Flat-detector fan beam with angles uniformly spaced in ``[0, arc)``."""
    angles = np.arange(num_angles) * (arc / num_angles)
    return ScanGeometry("fan", tuple(angles), num_detectors, detector_spacing, source_radius, detector_radius)


@dataclass
class Sinogram:
    """Log-transformed line integrals, one row per projection angle."""

    values: np.ndarray
    geometry: ScanGeometry
    energy_label: Optional[str] = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.geometry.shape:
            if self.values.size == self.geometry.num_angles * self.geometry.num_detectors:
                self.values = self.values.reshape(self.geometry.shape)
            else:
                raise ConfigurationError(
                    f"sinogram shape {self.values.shape} does not match geometry {self.geometry.shape}"
                )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("sinogram contains non-finite values")
