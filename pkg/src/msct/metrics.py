"""Image quality metrics: SSIM with a Gaussian window, and PSNR.

Both take the dynamic range from the reference image by default, since
reconstructions are in physical attenuation units rather than ``[0, 1]``.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from msct.errors import ConfigurationError

__all__ = ["ssim", "psnr", "data_range"]

K1, K2 = 0.01, 0.03
WINDOW_SIGMA = 1.5
WINDOW_SIZE = 11


def data_range(ref: np.ndarray) -> float:
    ref = np.asarray(ref, dtype=float)
    rng = float(ref.max() - ref.min())
    if rng <= 0:
        raise ConfigurationError("reference image is constant; its dynamic range is undefined")
    return rng


def _check(x, ref):
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ConfigurationError(f"shape mismatch {x.shape} vs {ref.shape}")
    return x, ref


def ssim(x: np.ndarray, ref: np.ndarray, range_=None) -> float:
    """Mean structural similarity of ``x`` against ``ref``.

    Local statistics use an 11x11 Gaussian window with standard deviation
    1.5; the mean is taken over pixels whose window lies fully inside the
    image. ``range_`` overrides ``max(ref) - min(ref)``.
    """
    x, ref = _check(x, ref)
    L = data_range(ref) if range_ is None else float(range_)
    c1 = (K1 * L) ** 2
    c2 = (K2 * L) ** 2
    radius = (WINDOW_SIZE - 1) // 2

    def filt(a):
        return gaussian_filter(a, WINDOW_SIGMA, mode="reflect", truncate=radius / WINDOW_SIGMA)

    mu_x, mu_y = filt(x), filt(ref)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(ref * ref) - mu_y * mu_y
    sxy = filt(x * ref) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    smap = num / den
    if min(smap.shape) > 2 * radius:
        smap = smap[radius:-radius, radius:-radius]
    return float(smap.mean())


def psnr(x: np.ndarray, ref: np.ndarray, range_=None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when ``x`` equals ``ref``."""
    x, ref = _check(x, ref)
    L = data_range(ref) if range_ is None else float(range_)
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(L * L / mse))
