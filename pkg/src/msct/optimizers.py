"""Forward-backward splitting and linearized Bregman iterations.

Both solvers minimise or regularise ``F(u) = 1/2 |A u - b|^2`` with
``G(u) = alpha * R(u) + indicator(u >= 0)``, where ``R`` is TV or dTV, and
share the same backtracking rule: a trial step ``sigma`` is accepted when

    F(u+) <= F(u) + <grad F(u), u+ - u> + |u+ - u|^2 / (2 sigma),

otherwise ``sigma`` is shrunk and the prox is recomputed. After each
accepted step ``sigma`` grows by ``rho_up``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from msct.diffops import DirectionalWeight
from msct.errors import ConfigurationError, NumericalError, StepSizeError
from msct.metrics import psnr, ssim
from msct.prox import ProxConfig, ProxProblem, ProxResult, prox_g, prox_indicator_nonneg
from msct.regularizers import regularizer_value
from msct.tomo import XRayTransform

__all__ = [
    "SmoothDataFit",
    "Regularizer",
    "BacktrackConfig",
    "TraceRecord",
    "SolverTrace",
    "BregmanState",
    "grad_f",
    "descent_gap",
    "fbs_solve",
    "bregman_solve",
    "bregman_distance",
]


class SmoothDataFit:
    """Least-squares data fit ``F(u) = 1/2 |A u - b|^2``."""

    def __init__(self, op: XRayTransform, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.shape != op.range_shape:
            raise ConfigurationError(f"data shape {data.shape} does not match operator range {op.range_shape}")
        self.op = op
        self.data = data

    def residual(self, u):
        return self.op.forward(u) - self.data

    def value(self, u) -> float:
        r = self.residual(u)
        return 0.5 * float(np.vdot(r, r))

    def gradient(self, u) -> np.ndarray:
        return self.op.adjoint(self.residual(u))


def grad_f(fit: SmoothDataFit, u: np.ndarray) -> np.ndarray:
    """``A^T (A u - b)``."""
    return fit.gradient(u)


@dataclass
class Regularizer:
    """``G = alpha * R + indicator(u >= 0)`` with ``R`` = TV (``weight=None``) or dTV."""

    alpha: float
    weight: Optional[DirectionalWeight] = None
    pixel_size: float = 1.0
    nonneg: bool = True
    prox_config: ProxConfig = field(default_factory=ProxConfig)

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")

    @property
    def name(self) -> str:
        return "tv" if self.weight is None else "dtv"

    def value(self, u) -> float:
        if self.nonneg and np.any(u < 0):
            return np.inf
        if self.alpha == 0:
            return 0.0
        return self.alpha * regularizer_value(u, self.weight, self.pixel_size)

    def prox(self, z, sigma, dual=None, effort: int = 0) -> ProxResult:
        """Prox of ``sigma * G`` at ``z``; each ``effort`` level allows 4x the
        inner iterations at a 100x smaller tolerance."""
        if self.alpha == 0:
            y = prox_indicator_nonneg(z) if self.nonneg else np.array(z, dtype=float)
            return ProxResult(y, dual, 0)
        problem = ProxProblem(z, sigma * self.alpha, self.weight, self.nonneg, self.pixel_size)
        cfg = ProxConfig(self.prox_config.max_inner_iters * 4 ** effort,
                         max(self.prox_config.inner_tol * 100.0 ** -effort, 1e-15), dual)
        return prox_g(problem, cfg)


@dataclass
class BacktrackConfig:
    """Step-size control. ``sigma0=None`` means ``1 / |A|^2``."""

    sigma0: Optional[float] = None
    rho_down: float = 0.5
    rho_up: float = 1.1
    max_backtracks: int = 50

    def __post_init__(self):
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ConfigurationError("sigma0 must be positive")
        if not 0 < self.rho_down < 1 < self.rho_up:
            raise ConfigurationError("need 0 < rho_down < 1 < rho_up")
        if self.max_backtracks < 0:
            raise ConfigurationError("max_backtracks must be nonnegative")

    def initial_sigma(self, op: XRayTransform) -> float:
        if self.sigma0 is not None:
            return float(self.sigma0)
        return 1.0 / op.norm() ** 2


@dataclass
class TraceRecord:
    iter: int
    sigma: float
    backtracks: int
    F: float
    G: float
    H: float
    ssim: float = float("nan")
    psnr: float = float("nan")
    wall_ms: float = 0.0
    # Right-hand side minus left-hand side of the descent inequality for the accepted step.
    descent_slack: float = 0.0


#: Relative increase of H tolerated between accepted FBS steps.
H_SLACK = 1e-10
#: Extra prox solves allowed per FBS step when H would increase.
MAX_PROX_REFINEMENTS = 4

CSV_COLUMNS = ("iter", "sigma", "backtracks", "F", "G", "H", "ssim", "psnr", "wall_ms")


@dataclass
class SolverTrace:
    """Per accepted iteration records plus optional image checkpoints."""

    records: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    method: str = ""
    regularizer: str = ""
    alpha: float = float("nan")

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def best(self, metric="ssim") -> Optional[TraceRecord]:
        """Record with the largest finite value of ``metric``."""
        vals = self.column(metric)
        if vals.size == 0 or not np.any(np.isfinite(vals)):
            return None
        return self.records[int(np.nanargmax(np.where(np.isfinite(vals), vals, -np.inf)))]

    def rows(self):
        for r in self.records:
            yield [getattr(r, c) for c in CSV_COLUMNS]


@dataclass
class BregmanState:
    u: np.ndarray
    q: np.ndarray
    t: int = 0

    @classmethod
    def zero(cls, shape) -> "BregmanState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def descent_gap(fit: SmoothDataFit, u, u_new, sigma, grad=None) -> float:
    """``F(u) + <grad F(u), d> + |d|^2/(2 sigma) - F(u_new)`` with ``d = u_new - u``.

    Nonnegative exactly when the descent inequality holds.
    """
    if grad is None:
        grad = fit.gradient(u)
    d = u_new - u
    return fit.value(u) + float(np.vdot(grad, d)) + float(np.vdot(d, d)) / (2 * sigma) - fit.value(u_new)


def _metrics(u, reference):
    if reference is None:
        return float("nan"), float("nan")
    return ssim(u, reference), psnr(u, reference)


def _backtracked_step(fit, reg, u, Au, grad, sigma, bt, dual, shift, trace, effort=0):
    """Find an accepted step from ``u``; return ``(u_new, Au_new, sigma, dual, n_backtracks, z)``.

    ``shift`` is added to the gradient step: zero for FBS, ``sigma * q`` for Bregman.
    The inequality is tested in the algebraically identical form
    ``sigma |A d|^2 <= |d|^2``, which is free of cancellation in ``F``.
    """
    for k in range(bt.max_backtracks + 1):
        z = u + sigma * (shift - grad)
        res = reg.prox(z, sigma, dual, effort)
        u_new = res.y
        if not np.all(np.isfinite(u_new)):
            raise NumericalError("solver iterate became non-finite")
        Au_new = fit.op.forward(u_new)
        dA = Au_new - Au
        d = u_new - u
        if sigma * float(np.vdot(dA, dA)) <= float(np.vdot(d, d)):
            return u_new, Au_new, sigma, res.dual, k, z
        sigma *= bt.rho_down
    raise StepSizeError(f"no step satisfied the descent inequality after {bt.max_backtracks} backtracks", trace)


def _scale_dual(dual, ratio):
    return None if dual is None else dual * ratio


def fbs_solve(
    fit: SmoothDataFit,
    reg: Regularizer,
    bt: BacktrackConfig = BacktrackConfig(),
    tol: float = 1e-6,
    max_iters: int = 1000,
    u0: Optional[np.ndarray] = None,
    reference: Optional[np.ndarray] = None,
    callback: Optional[Callable] = None,
):
    """Forward-backward splitting with backtracking.

    Iterates ``u+ = prox_{sigma G}(u - sigma grad F(u))`` and stops when the
    decrease ``H(u) - H(u+)`` falls to ``tol * H(u+)`` or below, or after
    ``max_iters`` accepted steps.

    Parameters
    ----------
    fit, reg, bt :
        Data fit, regularizer and step-size control.
    tol : float
        Relative objective-decrease tolerance; ``inf`` stops after one step.
    u0 : ndarray, optional
        Start image; defaults to all ones.
    reference : ndarray, optional
        Ground truth for SSIM/PSNR columns of the trace (never used by the update).
    callback : callable, optional
        Called as ``callback(t, u, record)`` after each accepted step.

    Returns
    -------
    u : ndarray
    trace : SolverTrace
    """
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    shape = fit.op.shape
    u = np.ones(shape) if u0 is None else np.array(u0, dtype=float)
    if u.shape != shape or not np.all(np.isfinite(u)):
        raise ConfigurationError("u0 must be a finite image of the operator's shape")
    sigma = bt.initial_sigma(fit.op)
    trace = SolverTrace(method="fbs", regularizer=reg.name, alpha=reg.alpha)
    Au = fit.op.forward(u)
    H = 0.5 * float(np.sum((Au - fit.data) ** 2)) + reg.value(u)
    dual = None
    start = time.perf_counter()
    for t in range(1, max_iters + 1):
        grad = fit.op.adjoint(Au - fit.data)
        F_old = 0.5 * float(np.sum((Au - fit.data) ** 2))
        nback = 0
        # An exact prox cannot increase H; an increase means the inner solve
        # was too coarse, so it is repeated at the same step with more effort.
        for effort in range(MAX_PROX_REFINEMENTS + 1):
            u_new, Au_new, sigma, dual, k, _ = _backtracked_step(
                fit, reg, u, Au, grad, sigma, bt, dual, 0.0, trace, effort)
            nback += k
            F = 0.5 * float(np.sum((Au_new - fit.data) ** 2))
            G = reg.value(u_new)
            H_new = F + G
            if H_new - H <= H_SLACK * abs(H) or reg.alpha == 0:
                break
        d = u_new - u
        slack = F_old + float(np.vdot(grad, d)) + float(np.vdot(d, d)) / (2 * sigma) - F
        s, p = _metrics(u_new, reference)
        rec = TraceRecord(t, sigma, nback, F, G, H_new, s, p, 1e3 * (time.perf_counter() - start), slack)
        trace.records.append(rec)
        if callback is not None:
            callback(t, u_new, rec)
        u, Au = u_new, Au_new
        stop = H - H_new <= tol * H_new
        H = H_new
        if stop:
            break
        sigma_next = sigma * bt.rho_up
        dual = _scale_dual(dual, sigma_next / sigma)
        sigma = sigma_next
    return u, trace


def bregman_solve(
    fit: SmoothDataFit,
    reg: Regularizer,
    bt: BacktrackConfig = BacktrackConfig(),
    max_iters: int = 1000,
    checkpoint_every: int = 0,
    checkpoints=(),
    reference: Optional[np.ndarray] = None,
    state: Optional[BregmanState] = None,
    callback: Optional[Callable] = None,
):
    """Linearized Bregman iterations with backtracking.

    Starting from ``u = q = 0`` (so that ``q`` is a subgradient of ``G`` at
    ``u``), each step computes

        u+ = prox_{sigma G}(u + sigma (q - grad F(u)))
        q+ = q - (u+ - u + sigma grad F(u)) / sigma

    for a fixed budget of ``max_iters`` accepted steps; the iteration count
    acts as the regularization parameter.

    Iterates are stored in ``trace.checkpoints`` at every multiple of
    ``checkpoint_every`` and at the iterations listed in ``checkpoints``.
    When ``reference`` is given, the iterate with the best SSIM is kept
    under the key ``"best_ssim"``. ``callback(t, state, record)`` is called
    after every step.

    Returns
    -------
    state : BregmanState
        Final ``(u, q, t)``.
    trace : SolverTrace
    """
    if max_iters < 1:
        raise ConfigurationError("max_iters must be at least 1")
    shape = fit.op.shape
    if state is None:
        state = BregmanState.zero(shape)
    u, q = np.array(state.u, dtype=float), np.array(state.q, dtype=float)
    sigma = bt.initial_sigma(fit.op)
    trace = SolverTrace(method="bregman", regularizer=reg.name, alpha=reg.alpha)
    wanted = set(int(c) for c in checkpoints)
    best_ssim = -np.inf
    Au = fit.op.forward(u)
    dual = None
    start = time.perf_counter()
    t0 = state.t
    for t in range(t0 + 1, t0 + max_iters + 1):
        grad = fit.op.adjoint(Au - fit.data)
        F_old = 0.5 * float(np.sum((Au - fit.data) ** 2))
        u_new, Au_new, sigma, dual, nback, z = _backtracked_step(
            fit, reg, u, Au, grad, sigma, bt, dual, q, trace)
        q = q - (u_new - u + sigma * grad) / sigma
        F = 0.5 * float(np.sum((Au_new - fit.data) ** 2))
        G = reg.value(u_new)
        d = u_new - u
        slack = F_old + float(np.vdot(grad, d)) + float(np.vdot(d, d)) / (2 * sigma) - F
        s, p = _metrics(u_new, reference)
        rec = TraceRecord(t, sigma, nback, F, G, F + G, s, p, 1e3 * (time.perf_counter() - start), slack)
        trace.records.append(rec)
        u, Au = u_new, Au_new
        if (checkpoint_every and t % checkpoint_every == 0) or t in wanted:
            trace.checkpoints[t] = u.copy()
        if reference is not None and s > best_ssim:
            best_ssim = s
            trace.checkpoints["best_ssim"] = u.copy()
        if callback is not None:
            callback(t, BregmanState(u, q, t), rec)
        sigma_next = sigma * bt.rho_up
        dual = _scale_dual(dual, sigma_next / sigma)
        sigma = sigma_next
    return BregmanState(u, q, t0 + max_iters), trace


def bregman_distance(reg: Regularizer, u, ut, qt) -> float:
    """``G(u) - G(ut) - <qt, u - ut>`` for a subgradient ``qt`` of ``G`` at ``ut``."""
    return reg.value(u) - reg.value(ut) - float(np.vdot(qt, np.asarray(u) - np.asarray(ut)))
