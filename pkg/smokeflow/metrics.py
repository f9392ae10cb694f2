"""
Flow accuracy metrics (AAE, AEPE, AENG) and single-scale SSIM.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .fields import FlowField, GradientTriple, gaussian_kernel
from .imgio import ImageFrame
from .utils import EmptyMask, NoValidGradients, SizeMismatch, TooSmall

# --- Logging setup ---
logger = logging.getLogger(__name__)

UNKNOWN_FLOW = 1e9
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class MetricsReport:
    aae: float
    aepe: float
    aeng: float
    valid_fraction: float

    def to_record(self) -> dict:
        return {
            'aae': self.aae,
            'aepe': self.aepe,
            'aeng': self.aeng,
            'valid_fraction': self.valid_fraction,
        }


def valid_mask(pred: FlowField, gt: FlowField, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Pixels entering the flow metrics: known ground truth, inside the optional mask

    Raises:
        SizeMismatch: Shapes differ
        EmptyMask: Nothing left to evaluate
    """
    if pred.shape != gt.shape:
        raise SizeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = (np.abs(gt.u) <= UNKNOWN_FLOW) & (np.abs(gt.v) <= UNKNOWN_FLOW) & np.isfinite(gt.u) & np.isfinite(gt.v)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != gt.shape:
            raise SizeMismatch(f"mask {mask.shape} vs flow {gt.shape}")
        valid &= mask > 0
    if not valid.any():
        raise EmptyMask('no valid pixels to evaluate')
    return valid


def aae(pred: FlowField, gt: FlowField, mask: Optional[np.ndarray] = None) -> float:
    """Average angular error (radians) of the homogeneous vectors (u, v, 1)"""
    valid = valid_mask(pred, gt, mask)
    u, v, ug, vg = pred.u[valid], pred.v[valid], gt.u[valid], gt.v[valid]
    cos = (u * ug + v * vg + 1.0) / np.sqrt((u ** 2 + v ** 2 + 1.0) * (ug ** 2 + vg ** 2 + 1.0))
    return float(np.mean(np.arccos(np.clip(cos, -1.0, 1.0))))


def aepe(pred: FlowField, gt: FlowField, mask: Optional[np.ndarray] = None) -> float:
    """Average endpoint error in pixels"""
    valid = valid_mask(pred, gt, mask)
    return float(np.mean(np.hypot(pred.u[valid] - gt.u[valid], pred.v[valid] - gt.v[valid])))


def aeng(pred: FlowField, gt: FlowField, g: GradientTriple, grad_floor: float = 1.0,
         mask: Optional[np.ndarray] = None) -> float:
    """
    Average error normal to the image gradient

    Mean of |e . (-Iy, Ix) / |grad I||, e = pred - gt, over pixels with
    |grad I| >= grad_floor.

    Raises:
        NoValidGradients: No pixel passes the gradient floor
    """
    if g.shape != gt.shape:
        raise SizeMismatch(f"gradients {g.shape} vs flow {gt.shape}")
    valid = valid_mask(pred, gt, mask)
    norm = np.sqrt(g.norm_sq)
    valid &= norm >= grad_floor
    if not valid.any():
        raise NoValidGradients(f"no pixel with |grad I| >= {grad_floor}")
    eu = pred.u[valid] - gt.u[valid]
    ev = pred.v[valid] - gt.v[valid]
    n = norm[valid]
    return float(np.mean(np.abs(-eu * g.iy[valid] + ev * g.ix[valid]) / n))


def evaluate(pred: FlowField, gt: FlowField, g: GradientTriple, mask: Optional[np.ndarray] = None,
             grad_floor: float = 1.0) -> MetricsReport:
    """All three flow metrics; AENG is NaN when no gradient passes the floor"""
    valid = valid_mask(pred, gt, mask)
    try:
        normal = aeng(pred, gt, g, grad_floor, mask)
    except NoValidGradients:
        logger.warning("AENG undefined: no gradient above %.3f", grad_floor)
        normal = float('nan')
    return MetricsReport(
        aae=aae(pred, gt, mask),
        aepe=aepe(pred, gt, mask),
        aeng=normal,
        valid_fraction=float(valid.mean()),
    )


# =============================================================================
# SSIM
# =============================================================================

def _filter_valid(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    radius = len(kernel) // 2
    out = ndimage.correlate1d(field, kernel, axis=0, mode='constant')
    out = ndimage.correlate1d(out, kernel, axis=1, mode='constant')
    return out[radius:-radius, radius:-radius]


def _ssim_channel(a: np.ndarray, b: np.ndarray, kernel: np.ndarray) -> float:
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    var_a = _filter_valid(a * a, kernel) - mu_a ** 2
    var_b = _filter_valid(b * b, kernel) - mu_b ** 2
    cov = _filter_valid(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim_kernel() -> np.ndarray:
    """11-tap Gaussian, sigma 1.5 (radius ceil(3 sigma) = 5), normalised"""
    return gaussian_kernel(SSIM_SIGMA)


def ssim(a: ImageFrame, b: ImageFrame) -> float:
    """
    Single-scale SSIM over the window-valid region, channels averaged

    Raises:
        SizeMismatch: Frames differ in size or channel count
        TooSmall: Either side shorter than the 11-pixel window
    """
    if a.data.shape != b.data.shape:
        raise SizeMismatch(f"images differ: {a.data.shape} vs {b.data.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.width}x{a.height}")
    kernel = ssim_kernel()
    da = a.data.astype(np.float64)
    db = b.data.astype(np.float64)
    return float(np.mean([_ssim_channel(da[:, :, c], db[:, :, c], kernel) for c in range(a.channels)]))
