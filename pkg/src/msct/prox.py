"""Proximal operators of (directional) TV plus a nonnegativity constraint.

``prox_g`` solves

    min_y  1/2 |y - z|^2 + lam * sum_j |P_j grad y_j| + indicator(y >= 0)

through its dual with the fast gradient projection scheme of Beck and
Teboulle. For a dual field ``p`` with ``|p_j| <= lam`` the primal point is
``y(p) = max(z + div(P p), 0)``; the dual ascent direction is ``P grad y(p)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from msct.diffops import DirectionalWeight, apply_weight, divergence, gradient, pointwise_norm
from msct.errors import ConfigurationError, NumericalError
from msct.regularizers import regularizer_value

__all__ = ["ProxProblem", "ProxConfig", "ProxResult", "prox_indicator_nonneg", "prox_g", "prox_objective"]


@dataclass
class ProxProblem:
    """Prox point ``z`` and weight ``sigma_alpha`` (step size times alpha)."""

    z: np.ndarray
    sigma_alpha: float
    weight: Optional[DirectionalWeight] = None
    nonneg: bool = True
    pixel_size: float = 1.0

    def __post_init__(self):
        if not self.sigma_alpha > 0:
            raise ConfigurationError(f"sigma_alpha must be positive, got {self.sigma_alpha}")


@dataclass
class ProxConfig:
    max_inner_iters: int = 100
    inner_tol: float = 1e-5
    warm_start_dual: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.max_inner_iters < 1:
            raise ConfigurationError("max_inner_iters must be at least 1")
        if not self.inner_tol > 0:
            raise ConfigurationError("inner_tol must be positive")


@dataclass
class ProxResult:
    y: np.ndarray
    dual: np.ndarray
    inner_iters: int


def prox_indicator_nonneg(z: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative orthant."""
    return np.maximum(z, 0.0)


def prox_objective(y, problem: ProxProblem) -> float:
    """Value of the prox objective at ``y`` (infinite if ``y`` is infeasible)."""
    if problem.nonneg and np.any(y < 0):
        return np.inf
    r = regularizer_value(y, problem.weight, problem.pixel_size)
    return 0.5 * float(np.sum((y - problem.z) ** 2)) + problem.sigma_alpha * r


def _project_ball(p, radius):
    scale = np.maximum(pointwise_norm(p) / radius, 1.0)
    return p / scale


def prox_g(problem: ProxProblem, cfg: ProxConfig = ProxConfig()) -> ProxResult:
    """Approximate ``prox`` of ``sigma_alpha * R + indicator`` at ``problem.z``.

    Iterates until the relative change of the primal estimate drops below
    ``cfg.inner_tol`` or ``cfg.max_inner_iters`` is reached. The returned
    dual field is feasible and may be passed back as ``warm_start_dual``.
    """
    z = np.ascontiguousarray(problem.z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericalError("prox input contains non-finite values")
    weight = problem.weight
    if weight is not None and weight.shape != z.shape:
        raise ConfigurationError(f"weight shape {weight.shape} does not match image {z.shape}")
    lam = float(problem.sigma_alpha)
    p = _initial_dual(cfg.warm_start_dual, z.shape, lam)
    xi = np.ascontiguousarray(weight.xi) if weight is not None else np.zeros((2, 1, 1))
    y, it = _fgp_kernel(z, xi, weight is not None, lam, float(problem.pixel_size), bool(problem.nonneg),
                        p, int(cfg.max_inner_iters), float(cfg.inner_tol))
    if not np.all(np.isfinite(y)):
        raise NumericalError("prox iteration produced non-finite values")
    return ProxResult(y, p, it)


def _initial_dual(warm, shape, lam):
    if warm is not None and warm.shape == (2,) + tuple(shape):
        return _project_ball(np.array(warm, dtype=float), lam)
    return np.zeros((2,) + tuple(shape))


def _fgp_reference(problem: ProxProblem, cfg: ProxConfig = ProxConfig()) -> ProxResult:
    """Vectorised numpy version of the kernel below; kept for cross-checking."""
    z = np.asarray(problem.z, dtype=float)
    lam = float(problem.sigma_alpha)
    h = problem.pixel_size
    weight = problem.weight
    clip = prox_indicator_nonneg if problem.nonneg else (lambda x: x)

    def K(y):
        g = gradient(y, h)
        return g if weight is None else apply_weight(weight, g)

    def KT_neg(p):
        return divergence(p if weight is None else apply_weight(weight, p), h)

    # |P grad|^2 <= |grad|^2 <= 8 / h^2 since every P_j is a contraction.
    step = h * h / 8.0
    p = _initial_dual(cfg.warm_start_dual, z.shape, lam)
    r = p.copy()
    t = 1.0
    y = clip(z + KT_neg(p))
    it = 0
    for it in range(1, cfg.max_inner_iters + 1):
        y_r = clip(z + KT_neg(r))
        p_new = _project_ball(r + step * K(y_r), lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        r = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
        y_new = clip(z + KT_neg(p))
        change = np.linalg.norm(y_new - y)
        scale = np.linalg.norm(y_new)
        y = y_new
        if change <= cfg.inner_tol * max(scale, np.finfo(float).tiny):
            break
    return ProxResult(y, p, it)


@njit(cache=True)
def _primal(z, xi, weighted, p, inv_h, nonneg, out):
    """out = clip(z + div(P p))."""
    n1, n2 = z.shape
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            if i < n1 - 1:
                a0, a1 = p[0, i, j], p[1, i, j]
                if weighted:
                    ip = xi[0, i, j] * a0 + xi[1, i, j] * a1
                    a0 -= ip * xi[0, i, j]
                acc += a0
            if i > 0:
                a0, a1 = p[0, i - 1, j], p[1, i - 1, j]
                if weighted:
                    ip = xi[0, i - 1, j] * a0 + xi[1, i - 1, j] * a1
                    a0 -= ip * xi[0, i - 1, j]
                acc -= a0
            if j < n2 - 1:
                a0, a1 = p[0, i, j], p[1, i, j]
                if weighted:
                    ip = xi[0, i, j] * a0 + xi[1, i, j] * a1
                    a1 -= ip * xi[1, i, j]
                acc += a1
            if j > 0:
                a0, a1 = p[0, i, j - 1], p[1, i, j - 1]
                if weighted:
                    ip = xi[0, i, j - 1] * a0 + xi[1, i, j - 1] * a1
                    a1 -= ip * xi[1, i, j - 1]
                acc -= a1
            v = z[i, j] + acc * inv_h
            if nonneg and v < 0.0:
                v = 0.0
            out[i, j] = v


@njit(cache=True)
def _fgp_kernel(z, xi, weighted, lam, h, nonneg, p, max_iter, tol):
    """Fast gradient projection on the dual; updates ``p`` in place."""
    n1, n2 = z.shape
    inv_h = 1.0 / h
    step = h * h / 8.0
    r = p.copy()
    y = np.empty_like(z)
    y_r = np.empty_like(z)
    _primal(z, xi, weighted, p, inv_h, nonneg, y)
    t = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        _primal(z, xi, weighted, r, inv_h, nonneg, y_r)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_new
        for i in range(n1):
            for j in range(n2):
                g0 = (y_r[i + 1, j] - y_r[i, j]) * inv_h if i < n1 - 1 else 0.0
                g1 = (y_r[i, j + 1] - y_r[i, j]) * inv_h if j < n2 - 1 else 0.0
                if weighted:
                    ip = xi[0, i, j] * g0 + xi[1, i, j] * g1
                    g0 -= ip * xi[0, i, j]
                    g1 -= ip * xi[1, i, j]
                a0 = r[0, i, j] + step * g0
                a1 = r[1, i, j] + step * g1
                s = np.sqrt(a0 * a0 + a1 * a1) / lam
                if s > 1.0:
                    a0 /= s
                    a1 /= s
                r[0, i, j] = a0 + mom * (a0 - p[0, i, j])
                r[1, i, j] = a1 + mom * (a1 - p[1, i, j])
                p[0, i, j] = a0
                p[1, i, j] = a1
        t = t_new
        _primal(z, xi, weighted, p, inv_h, nonneg, y_r)
        change = 0.0
        scale = 0.0
        for i in range(n1):
            for j in range(n2):
                d = y_r[i, j] - y[i, j]
                change += d * d
                scale += y_r[i, j] * y_r[i, j]
                y[i, j] = y_r[i, j]
        if np.sqrt(change) <= tol * max(np.sqrt(scale), 2.2250738585072014e-308):
            break
    return y, it
