"""Total variation, directional total variation and the edge field.

The edge field of a side-information image ``v`` is

    xi_j = eta * grad v_j / sqrt(|grad v_j|^2 + epsilon^2)

with ``eta < 1`` capping the field magnitude. Gradients well above
``epsilon`` produce ``|xi_j|`` close to ``eta``; flat regions produce
``xi_j`` close to zero, where dTV behaves like TV.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from msct.diffops import DirectionalWeight, apply_weight, gradient, pointwise_norm
from msct.errors import ConfigurationError

__all__ = ["EdgeFieldParams", "tv_value", "dtv_value", "regularizer_value", "build_xi"]


@dataclass(frozen=True)
class EdgeFieldParams:
    """Parameters of :func:`build_xi`.

    Parameters
    ----------
    eta : float
        Magnitude cap of the edge field, ``0 <= eta < 1``.
    epsilon : float
        Smoothing scale. With ``rule="relative"`` it is a fraction of
        ``max_j |grad v_j|``; with ``rule="absolute"`` it is used as given.
    rule : {"relative", "absolute"}
    """

    eta: float = 0.9999
    epsilon: float = 0.01
    rule: str = "relative"

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ConfigurationError(f"eta must lie in [0, 1), got {self.eta}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.rule not in ("relative", "absolute"):
            raise ConfigurationError(f"unknown epsilon rule {self.rule!r}")


def tv_value(u: np.ndarray, pixel_size: float = 1.0) -> float:
    """Isotropic total variation ``sum_j |grad u_j|``."""
    return float(pointwise_norm(gradient(u, pixel_size)).sum())


def dtv_value(u: np.ndarray, weight: DirectionalWeight, pixel_size: float = 1.0) -> float:
    """Directional total variation ``sum_j |P_j grad u_j|``."""
    u = np.asarray(u, dtype=float)
    if u.shape != weight.shape:
        raise ConfigurationError(f"image shape {u.shape} does not match weight {weight.shape}")
    return float(pointwise_norm(apply_weight(weight, gradient(u, pixel_size))).sum())


def regularizer_value(u: np.ndarray, weight: Optional[DirectionalWeight] = None, pixel_size: float = 1.0) -> float:
    """TV when ``weight`` is None, dTV otherwise."""
    if weight is None:
        return tv_value(u, pixel_size)
    return dtv_value(u, weight, pixel_size)


def build_xi(v: np.ndarray, params: EdgeFieldParams = EdgeFieldParams(), pixel_size: float = 1.0) -> DirectionalWeight:
    """Edge field of the side-information image ``v``.

    A constant ``v`` has no gradient scale; epsilon is then forced to 1 and
    the field vanishes.
    """
    grad_v = gradient(v, pixel_size)
    mag = pointwise_norm(grad_v)
    if params.rule == "relative":
        eps = params.epsilon * float(mag.max())
        if eps == 0.0:
            eps = 1.0
    else:
        eps = params.epsilon
    xi = params.eta * grad_v / np.sqrt(mag**2 + eps**2)
    return DirectionalWeight(xi, params.eta, eps)
