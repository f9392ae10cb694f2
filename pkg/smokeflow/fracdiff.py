"""
Grünwald-Letnikov weights, the fractional neighbourhood operator and its
von Neumann stability certificate.

Stencils use the weight magnitudes |w_q| for the neighbour coupling and for the
normaliser R = 1 + 2*theta*sum|w_q|, so the flow update is a convex
combination and the amplification factor never exceeds one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .utils import OrderOutOfRange, PreconditionError

# --- Logging setup ---
logger = logging.getLogger(__name__)

STABILITY_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class GLWeights:
    """Truncated Grünwald-Letnikov coefficients w_0..w_W for order alpha"""
    alpha: float
    window: int
    w: np.ndarray

    @property
    def magnitudes(self) -> np.ndarray:
        """|w_1|..|w_W|"""
        return np.abs(self.w[1:])

    @property
    def tail(self) -> float:
        """Magnitude of the last kept coefficient, the truncation error scale"""
        return float(abs(self.w[-1]))

    @property
    def neighbor_sum(self) -> float:
        """Sum of |w_q| over the 4W neighbours of the axis cross"""
        return 4.0 * float(self.magnitudes.sum())


@dataclass(frozen=True)
class StabilityReport:
    sum_abs: float
    normalizer: float
    bound: float
    stable: bool
    amplification_max: float

    def to_record(self) -> dict:
        return {
            'sum_abs': self.sum_abs,
            'normalizer': self.normalizer,
            'bound': self.bound,
            'stable': self.stable,
            'amplification_max': self.amplification_max,
        }


def gl_weights(alpha: float, window: int = 3) -> GLWeights:
    """
    Coefficients by the recurrence w_q = (1 - (alpha + 1) / q) * w_{q-1}, w_0 = 1

    Raises:
        OrderOutOfRange: alpha outside (0, 1)
    """
    if not 0.0 < alpha < 1.0:
        raise OrderOutOfRange(f"fractional order must lie in (0, 1), got {alpha}")
    if window < 1:
        raise PreconditionError('window must be >= 1', key='window')
    w = np.empty(window + 1)
    w[0] = 1.0
    for q in range(1, window + 1):
        w[q] = (1.0 - (alpha + 1.0) / q) * w[q - 1]
    logger.debug("GL weights alpha=%s W=%d tail=%.3e", alpha, window, abs(w[-1]))
    return GLWeights(alpha=float(alpha), window=int(window), w=w)


def _shift(padded: np.ndarray, pad: int, dy: int, dx: int) -> np.ndarray:
    h = padded.shape[-2] - 2 * pad
    w = padded.shape[-1] - 2 * pad
    return padded[..., pad + dy:pad + dy + h, pad + dx:pad + dx + w]


def pad_edges(field: np.ndarray, pad: int) -> np.ndarray:
    """Replicate the last two axes by `pad` pixels"""
    widths = [(0, 0)] * (field.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(field, widths, mode='edge')


def neighborhood_sum(field: np.ndarray, weights: GLWeights):
    """
    Weighted sum over the axis cross of radius W

    weighted(r, s) = sum_q |w_q| * (f(r+q, s) + f(r-q, s) + f(r, s+q) + f(r, s-q)),
    borders replicated. Works on (..., height, width) stacks.

    Returns:
        tuple: (weighted field, sum of |w_q| over the 4W neighbours)
    """
    field = np.asarray(field, dtype=np.float64)
    window = weights.window
    padded = pad_edges(field, window)
    weighted = np.zeros_like(field)
    for q, wq in enumerate(weights.magnitudes, start=1):
        weighted += wq * (
            _shift(padded, window, 0, q) + _shift(padded, window, 0, -q)
            + _shift(padded, window, q, 0) + _shift(padded, window, -q, 0))
    return weighted, weights.neighbor_sum


def stability_check(weights: GLWeights, theta: float, grid: int = 32) -> StabilityReport:
    """
    Von Neumann certificate for the fractional flow update

    G(k, l) = (1 + 2 theta sum_q |w_q| (2 cos(kq) + 2 cos(lq))) / R evaluated on a
    grid x grid set of wavenumbers in [0, 2 pi).

    Args:
        weights: GL table
        theta: Coupling parameter (> 0)
        grid: Wavenumbers per axis
    """
    if theta <= 0:
        raise PreconditionError('theta must be > 0', key='theta')
    sum_abs = weights.neighbor_sum
    normalizer = 1.0 + 2.0 * theta * sum_abs
    bound = (normalizer - 1.0) / (2.0 * theta)

    k = 2.0 * np.pi * np.arange(grid) / grid
    kk, ll = np.meshgrid(k, k, indexing='ij')
    response = np.zeros_like(kk, dtype=np.complex128)
    for q, wq in enumerate(weights.magnitudes, start=1):
        response += wq * (np.exp(1j * kk * q) + np.exp(-1j * kk * q)
                          + np.exp(1j * ll * q) + np.exp(-1j * ll * q))
    gain = np.abs((1.0 + 2.0 * theta * response) / normalizer)

    report = StabilityReport(
        sum_abs=sum_abs,
        normalizer=normalizer,
        bound=bound,
        stable=bool(sum_abs <= bound + STABILITY_SLACK),
        amplification_max=float(gain.max()),
    )
    logger.info("Stability: sum|w|=%.6f bound=%.6f max|G|=%.12f stable=%s",
                report.sum_abs, report.bound, report.amplification_max, report.stable)
    return report


def fractional_difference(field: np.ndarray, weights: GLWeights, axis: int, h: float = 1.0) -> np.ndarray:
    """
    Backward GL difference h^-alpha * sum_q |w_q| (f(r) - f(r - q)) along `axis`

    Vanishes on constant fields; borders replicated.
    """
    field = np.asarray(field, dtype=np.float64)
    window = weights.window
    padded = pad_edges(field, window)
    out = np.zeros_like(field)
    for q, wq in enumerate(weights.magnitudes, start=1):
        back = _shift(padded, window, -q, 0) if axis == 0 else _shift(padded, window, 0, -q)
        out += wq * (field - back)
    return out * h ** (-weights.alpha)
