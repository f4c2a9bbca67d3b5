"""Discrete 2D X-ray transform with exact pixel intersection lengths.

The system matrix entry ``a_ij`` is the Euclidean length of ray ``i`` inside
pixel ``j``. It is assembled once per (geometry, grid) pair by a Siddon
traversal and stored as a sparse matrix, so the forward projection and the
back projection share exactly the same weights.
"""

from __future__ import annotations

import functools

import numpy as np
import scipy.sparse as sp

from msct.errors import ConfigurationError
from msct.geometry import ImageGrid, ScanGeometry, Sinogram

__all__ = [
    "XRayTransform",
    "ray_endpoints",
    "siddon_ray",
    "forward_project",
    "back_project",
    "estimate_operator_norm",
    "POWER_ITERATION_SEED",
]

#: Seed of the start vector used by :func:`estimate_operator_norm`.
POWER_ITERATION_SEED = 20210315

# Fraction of a pixel side below which an intersection is treated as a corner graze.
_GRAZE = 1e-12


def image_extent(shape, pixel_size):
    """Return ``(x_min, x_max, y_min, y_max)`` of a centred image."""
    n1, n2 = shape
    hx, hy = n2 * pixel_size / 2, n1 * pixel_size / 2
    return -hx, hx, -hy, hy


def ray_endpoints(geometry: ScanGeometry, shape, pixel_size):
    """Start and end points of every ray, each of shape ``(m1, m2, 2)``.

    For parallel beams the ray for angle ``theta`` and detector offset ``s``
    is the line ``s*e + t*r`` with ``e = (cos, sin)`` and ``r = (-sin, cos)``,
    clipped to a segment that covers the image. For fan beams the source sits
    at ``-source_radius*r`` and the detector cell at ``detector_radius*r + s*e``.
    """
    theta = np.asarray(geometry.angles)[:, None]
    s = geometry.detector_offsets()[None, :]
    e = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    r = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    x_min, x_max, y_min, y_max = image_extent(shape, pixel_size)
    half_diag = np.hypot(x_max, y_max)
    if geometry.kind == "parallel":
        reach = half_diag + pixel_size
        centre = s[..., None] * e
        return centre - reach * r, centre + reach * r
    if geometry.source_radius <= half_diag or geometry.detector_radius <= half_diag:
        raise ConfigurationError(
            "fan-beam source and detector must lie outside the image support "
            f"(half diagonal {half_diag:g})"
        )
    src = np.broadcast_to(-geometry.source_radius * r, (theta.shape[0], s.shape[1], 2))
    det = geometry.detector_radius * r + s[..., None] * e
    return src, det


def siddon_ray(p0, p1, shape, pixel_size):
    """Pixel indices and intersection lengths of the segment ``p0 -> p1``.

    Returns
    -------
    flat_index : ndarray of int
        Row-major pixel indices.
    length : ndarray of float
        Length of the segment inside each listed pixel.

    Notes
    -----
    A ray running exactly along a pixel edge is assigned to a single pixel:
    pixels are half-open in x, ``[x_j, x_j + h)``, and rows cover
    ``(y_top - (i + 1) h, y_top - i h]``.
    """
    n1, n2 = shape
    h = pixel_size
    x_min, x_max, y_min, y_max = image_extent(shape, h)
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    lo, hi = 0.0, 1.0
    alphas = [np.empty(0), np.empty(0)]
    for axis, (d, start, a_min, count) in enumerate(((dx, p0[0], x_min, n2), (dy, p0[1], y_min, n1))):
        a_max = a_min + count * h
        if d == 0.0:
            if not a_min <= start <= a_max:
                return np.empty(0, dtype=np.int64), np.empty(0)
            continue
        planes = a_min + h * np.arange(count + 1)
        alpha = (planes - start) / d
        lo = max(lo, min(alpha[0], alpha[-1]))
        hi = min(hi, max(alpha[0], alpha[-1]))
        alphas[axis] = alpha
    if hi <= lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    a = np.concatenate([[lo, hi], alphas[0], alphas[1]])
    a = np.unique(a[(a >= lo) & (a <= hi)])
    seg = np.diff(a) * np.hypot(dx, dy)
    mid = 0.5 * (a[1:] + a[:-1])
    col = np.floor((p0[0] + mid * dx - x_min) / h).astype(np.int64)
    row = np.floor((y_max - (p0[1] + mid * dy)) / h).astype(np.int64)
    keep = (seg > _GRAZE * h) & (col >= 0) & (col < n2) & (row >= 0) & (row < n1)
    return row[keep] * n2 + col[keep], seg[keep]


@functools.lru_cache(maxsize=16)
def _system_matrix(geometry: ScanGeometry, shape: tuple, pixel_size: float) -> sp.csr_matrix:
    p0, p1 = ray_endpoints(geometry, shape, pixel_size)
    m = geometry.num_angles * geometry.num_detectors
    p0 = p0.reshape(m, 2)
    p1 = p1.reshape(m, 2)
    indptr = np.zeros(m + 1, dtype=np.int64)
    indices, data = [], []
    for i in range(m):
        idx, length = siddon_ray(p0[i], p1[i], shape, pixel_size)
        order = np.argsort(idx, kind="stable")
        indices.append(idx[order])
        data.append(length[order])
        indptr[i + 1] = indptr[i] + idx.size
    indices = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    data = np.concatenate(data) if data else np.empty(0)
    mat = sp.csr_matrix((data, indices, indptr), shape=(m, shape[0] * shape[1]))
    mat.sum_duplicates()
    return mat


class XRayTransform:
    """Forward operator ``A`` for a fixed geometry and image grid.

    Parameters
    ----------
    geometry : ScanGeometry
    shape : tuple of int
        Image shape ``(rows, cols)``.
    pixel_size : float
    """

    def __init__(self, geometry: ScanGeometry, shape, pixel_size: float = 1.0):
        shape = tuple(int(n) for n in shape)
        if len(shape) != 2 or min(shape) < 1:
            raise ConfigurationError(f"invalid image shape {shape}")
        if not pixel_size > 0:
            raise ConfigurationError("pixel_size must be positive")
        self.geometry = geometry
        self.shape = shape
        self.pixel_size = float(pixel_size)
        self.matrix = _system_matrix(geometry, shape, self.pixel_size)
        self._matrix_t = self.matrix.T.tocsr()
        if self.matrix.nnz == 0:
            raise ConfigurationError("no ray of the scan geometry intersects the image")
        self._norm = None

    @property
    def range_shape(self):
        return self.geometry.shape

    def forward(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ConfigurationError(f"image shape {u.shape} does not match operator domain {self.shape}")
        return (self.matrix @ u.ravel()).reshape(self.range_shape)

    __call__ = forward

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != self.range_shape:
            raise ConfigurationError(f"sinogram shape {y.shape} does not match operator range {self.range_shape}")
        return (self._matrix_t @ y.ravel()).reshape(self.shape)

    def norm(self, iters: int = 500, tol: float = 1e-10) -> float:
        """Cached power-iteration estimate of the spectral norm."""
        if self._norm is None:
            self._norm = _power_norm(self, iters, tol)
        return self._norm


def _power_norm(op: XRayTransform, iters: int, tol: float) -> float:
    rng = np.random.default_rng(POWER_ITERATION_SEED)
    x = rng.uniform(0.5, 1.0, size=op.shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max(int(iters), 1)):
        y = op.adjoint(op.forward(x))
        rayleigh = float(np.vdot(x, y))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        new = np.sqrt(max(rayleigh, 0.0))
        if est > 0 and abs(new - est) <= tol * new:
            return new
        est = new
    return est


def forward_project(u: ImageGrid, geometry: ScanGeometry, energy_label=None) -> Sinogram:
    """Sinogram ``A u`` of an image."""
    op = XRayTransform(geometry, u.shape, u.pixel_size)
    return Sinogram(op.forward(u.values), geometry, energy_label)


def back_project(s: Sinogram, shape, pixel_size: float = 1.0) -> ImageGrid:
    """Adjoint ``A^T s`` onto a grid of the given shape and pixel size."""
    op = XRayTransform(s.geometry, shape, pixel_size)
    return ImageGrid(op.adjoint(s.values), pixel_size)


def estimate_operator_norm(geometry: ScanGeometry, shape, pixel_size: float = 1.0,
                           iters: int = 500, tol: float = 1e-10) -> float:
    """Estimate ``||A||`` by power iteration on ``A^T A``.

    The start vector is positive and drawn from a generator seeded with
    :data:`POWER_ITERATION_SEED`, so the estimate is reproducible.
    """
    return _power_norm(XRayTransform(geometry, shape, pixel_size), iters, tol)
