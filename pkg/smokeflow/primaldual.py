"""
Dual ascent for the L1 data term and the closed-form auxiliary-flow update.

The dual variable d lives in [-1, 1] per pixel. One ascent step is

    d_temp = d + damping * [lam * rho - lam^2 * theta * |grad I|^2 * d]
    d      = clamp(d_temp, -1, 1)

with rho = It + grad(I).Z evaluated at the current (held constant) flow Z.
The auxiliary flow is then Zhat = Z - theta * lam * d * grad(I).
"""
from __future__ import annotations

import logging
from typing import Optional, Union

import numpy as np

from .fields import FlowField, GradientTriple
from .utils import require_finite

# --- Logging setup ---
logger = logging.getLogger(__name__)


def default_damping(g: GradientTriple, lam: float, theta: float) -> np.ndarray:
    """Per-pixel step 1 / (1 + lam^2 theta |grad I|^2)"""
    return 1.0 / (1.0 + lam ** 2 * theta * g.norm_sq)


def dual_ascent_step(
    d: np.ndarray,
    g: GradientTriple,
    z: FlowField,
    lam: float,
    theta: float,
    damping: Optional[Union[float, np.ndarray]] = None,
) -> np.ndarray:
    """
    One projected gradient ascent step on the dual variable

    Args:
        d: Current dual field, |d| <= 1
        g: Image derivatives
        z: Flow entering the residual
        lam: Data weight
        theta: Coupling
        damping: Step scale; scalar or per-pixel, default 1 / (1 + lam^2 theta |grad I|^2)

    Returns:
        np.ndarray: Updated dual field clamped to [-1, 1]

    Raises:
        NonFiniteInput: Any input holds NaN or infinity
    """
    require_finite('dual_ascent_step input', d, g.ix, g.iy, g.it, z.u, z.v)
    if damping is None:
        damping = default_damping(g, lam, theta)
    ascent = lam * g.residual(z) - lam ** 2 * theta * g.norm_sq * d
    return np.clip(d + damping * ascent, -1.0, 1.0)


def update_zhat(z: FlowField, d: np.ndarray, g: GradientTriple, lam: float, theta: float) -> FlowField:
    """
    Stationary point of the data subproblem in Zhat: Zhat = Z - theta * lam * d * grad(I)

    Raises:
        NonFiniteInput: Any input holds NaN or infinity
    """
    require_finite('update_zhat input', d, g.ix, g.iy, z.u, z.v)
    step = theta * lam * d
    return FlowField(z.u - step * g.ix, z.v - step * g.iy)


def data_surrogate(zhat: FlowField, z: FlowField, d: np.ndarray, g: GradientTriple,
                   lam: float, theta: float) -> np.ndarray:
    """
    Per-pixel value of the linear-quadratic surrogate minimised by update_zhat

    lam * d * (It + grad(I).Zhat) + |Zhat - Z|^2 / (2 theta)
    """
    return lam * d * g.residual(zhat) + ((zhat.u - z.u) ** 2 + (zhat.v - z.v) ** 2) / (2.0 * theta)


def solve_data_term(z: FlowField, d: np.ndarray, g: GradientTriple, lam: float, theta: float,
                    iterations: int = 5):
    """
    Run `iterations` dual steps with Z held constant, then update Zhat

    Returns:
        tuple: (Zhat, dual field)
    """
    damping = default_damping(g, lam, theta)
    for _ in range(iterations):
        d = dual_ascent_step(d, g, z, lam, theta, damping)
    return update_zhat(z, d, g, lam, theta), d
