"""Finite-difference gradient, divergence and the directional weighting field.

Vector fields are arrays of shape ``(2, rows, cols)``; channel 0 differentiates
along rows (axis 0), channel 1 along columns (axis 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msct.errors import ConfigurationError

__all__ = ["gradient", "divergence", "DirectionalWeight", "apply_weight", "pointwise_norm"]


def gradient(u: np.ndarray, pixel_size: float = 1.0) -> np.ndarray:
    """Forward differences with replicate (Neumann) boundary.

    The last row of the axis-0 channel and the last column of the axis-1
    channel are zero.
    """
    u = np.asarray(u, dtype=float)
    g = np.zeros((2,) + u.shape)
    g[0, :-1, :] = u[1:, :] - u[:-1, :]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    if pixel_size != 1.0:
        g /= pixel_size
    return g


def divergence(p: np.ndarray, pixel_size: float = 1.0) -> np.ndarray:
    """Negative adjoint of :func:`gradient`: ``<grad u, p> = -<u, div p>``."""
    p = np.asarray(p, dtype=float)
    p0, p1 = p[0], p[1]
    d = np.zeros(p.shape[1:])
    d[:-1, :] += p0[:-1, :]
    d[1:, :] -= p0[:-1, :]
    d[:, :-1] += p1[:, :-1]
    d[:, 1:] -= p1[:, :-1]
    if pixel_size != 1.0:
        d /= pixel_size
    return d


def pointwise_norm(p: np.ndarray) -> np.ndarray:
    """Euclidean norm of each pixel's vector."""
    return np.sqrt(p[0] ** 2 + p[1] ** 2)


@dataclass
class DirectionalWeight:
    """The field ``xi`` defining ``P_j = I - xi_j xi_j^T`` at every pixel.

    ``eta`` is an upper bound on ``|xi_j|`` and ``epsilon`` the smoothing
    scale that produced the field; both are kept for reporting.
    """

    xi: np.ndarray
    eta: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if self.xi.ndim != 3 or self.xi.shape[0] != 2:
            raise ConfigurationError(f"xi must have shape (2, rows, cols), got {self.xi.shape}")
        if not np.all(np.isfinite(self.xi)):
            raise ConfigurationError("xi contains non-finite values")
        if np.any(pointwise_norm(self.xi) >= 1.0):
            raise ConfigurationError("every |xi_j| must be strictly below 1")

    @property
    def shape(self):
        return self.xi.shape[1:]

    @classmethod
    def identity(cls, shape) -> "DirectionalWeight":
        """The weight with ``xi = 0``, for which dTV reduces to TV."""
        return cls(np.zeros((2,) + tuple(shape)), 0.0, 1.0)

    def apply(self, p: np.ndarray) -> np.ndarray:
        return apply_weight(self, p)


def apply_weight(weight: DirectionalWeight, p: np.ndarray) -> np.ndarray:
    """Pixelwise ``p_j - <xi_j, p_j> xi_j``."""
    p = np.asarray(p, dtype=float)
    if p.shape != weight.xi.shape:
        raise ConfigurationError(f"vector field shape {p.shape} does not match weight {weight.xi.shape}")
    xi = weight.xi
    inner = xi[0] * p[0] + xi[1] * p[1]
    return p - inner * xi
