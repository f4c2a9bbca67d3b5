"""Side information from fused multi-energy data."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from msct.errors import ConfigurationError
from msct.geometry import ImageGrid, Sinogram
from msct.optimizers import BacktrackConfig, Regularizer, SmoothDataFit, fbs_solve
from msct.prox import ProxConfig
from msct.tomo import XRayTransform

__all__ = ["fuse_sinograms", "build_side_information"]


def fuse_sinograms(sinograms: Sequence[Sinogram], label: str = "fused") -> Sinogram:
    """Elementwise sum of sinograms sharing one geometry."""
    if len(sinograms) == 0:
        raise ConfigurationError("need at least one sinogram to fuse")
    geom = sinograms[0].geometry
    for s in sinograms[1:]:
        if s.geometry != geom:
            raise ConfigurationError("cannot fuse sinograms acquired with different geometries")
    total = np.zeros(geom.shape)
    for s in sinograms:
        total += s.values
    return Sinogram(total, geom, label)


def build_side_information(
    fused: Sinogram,
    alpha: float,
    shape,
    pixel_size: float = 1.0,
    tol: float = 1e-6,
    max_iters: int = 500,
    backtrack: BacktrackConfig = BacktrackConfig(),
    prox_config: Optional[ProxConfig] = None,
    u0: Optional[np.ndarray] = None,
):
    """TV-regularised, nonnegative reconstruction of the fused sinogram.

    Starts from ``u0`` (default zero, so zero data gives ``v = 0`` exactly).

    Returns
    -------
    v : ImageGrid
    trace : SolverTrace
    """
    if not alpha > 0:
        raise ConfigurationError("side-information alpha must be positive")
    op = XRayTransform(fused.geometry, shape, pixel_size)
    fit = SmoothDataFit(op, fused.values)
    reg = Regularizer(alpha, None, pixel_size, True, prox_config or ProxConfig())
    v, trace = fbs_solve(fit, reg, backtrack, tol, max_iters, np.zeros(shape) if u0 is None else u0)
    return ImageGrid(v, pixel_size), trace
