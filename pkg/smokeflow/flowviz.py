"""
Flow colour maps on the Middlebury 55-entry wheel.

Hue follows atan2(-v, -u) around the wheel, so upward image motion (v < 0)
lands in the blue/magenta arc. Saturation is min(|Z| / max_mag, 1) and zero
motion is white. Out-of-range vectors are clamped, not darkened.
"""
from __future__ import annotations

import logging
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .fields import FlowField
from .imgio import ImageFrame
from .utils import NotColor, PreconditionError, SizeMismatch, require_finite

# --- Logging setup ---
logger = logging.getLogger(__name__)

# Arc lengths: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
AUTO_PERCENTILE = 99.0
MIN_MAX_MAG = 1e-3
DECODE_STEPS = 64


def make_colorwheel() -> np.ndarray:
    """
    Returns:
        np.ndarray: (55, 3) wheel in [0,1]
    """
    ncols = RY + YG + GC + CB + BM + MR
    wheel = np.zeros((ncols, 3))
    col = 0

    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY

    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG

    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC

    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB

    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM

    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel / 255.0


COLORWHEEL = make_colorwheel()
NCOLS = COLORWHEEL.shape[0]


def _wheel_color(fk: np.ndarray) -> np.ndarray:
    """Linear interpolation on the wheel at fractional index fk in [0, NCOLS-1]"""
    k0 = np.floor(fk).astype(np.int64)
    k1 = k0 + 1
    k1[k1 == NCOLS] = 0
    f = (fk - k0)[..., None]
    return (1.0 - f) * COLORWHEEL[k0] + f * COLORWHEEL[k1]


def auto_max_mag(flow: FlowField) -> float:
    """99th percentile of the magnitudes, floored at 1e-3"""
    return max(float(np.percentile(flow.magnitude, AUTO_PERCENTILE)), MIN_MAX_MAG)


def flow_to_color(flow: FlowField, max_mag: Optional[float] = None) -> ImageFrame:
    """
    Encode a flow field as an RGB colour map

    Args:
        flow: Finite flow
        max_mag: Magnitude at full saturation; None for auto

    Returns:
        ImageFrame: 3-channel colour map
    """
    require_finite('flow', flow.u, flow.v)
    if max_mag is None:
        max_mag = auto_max_mag(flow)
    if max_mag <= 0:
        raise PreconditionError(f"must be > 0, got {max_mag}", key='max_mag')

    u = flow.u / max_mag
    v = flow.v / max_mag
    sat = np.minimum(np.hypot(u, v), 1.0)[..., None]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1.0) / 2.0 * (NCOLS - 1)
    color = 1.0 - sat * (1.0 - _wheel_color(fk))
    return ImageFrame(np.clip(color, 0.0, 1.0))


def quantize_colormap(colormap: ImageFrame) -> ImageFrame:
    """Round to the 8-bit grid the PNG writer stores"""
    return ImageFrame(np.rint(colormap.data.astype(np.float64) * 255.0) / 255.0)


class _WheelDecoder:
    """Nearest-neighbour lookup over the densely sampled wheel"""

    def __init__(self, steps: int = DECODE_STEPS):
        self.fk = np.arange((NCOLS - 1) * steps + 1) / steps
        self.tree = cKDTree(_wheel_color(self.fk))

    def angle(self, colors: np.ndarray) -> np.ndarray:
        _, idx = self.tree.query(colors)
        a = self.fk[idx] / (NCOLS - 1) * 2.0 - 1.0
        return a * np.pi


@lru_cache(maxsize=1)
def _wheel_decoder() -> _WheelDecoder:
    return _WheelDecoder()


def color_to_flow(colormap: ImageFrame, max_mag: float) -> FlowField:
    """
    Approximate inverse of flow_to_color for a known max_mag

    Saturation is 1 - min(rgb) since every wheel colour has a zero channel;
    the hue is then found on the wheel. White decodes to zero flow.

    Raises:
        NotColor: Single-channel input
    """
    if colormap.channels != 3:
        raise NotColor('colour map must have 3 channels')

    rgb = colormap.data.astype(np.float64)
    sat = 1.0 - rgb.min(axis=2)
    safe = np.where(sat > 0, sat, 1.0)[..., None]
    wheel = 1.0 - (1.0 - rgb) / safe

    angle = _wheel_decoder().angle(wheel.reshape(-1, 3)).reshape(sat.shape)
    mag = sat * max_mag
    u = np.where(sat > 0, -mag * np.cos(angle), 0.0)
    v = np.where(sat > 0, -mag * np.sin(angle), 0.0)
    return FlowField(u, v)


# =============================================================================
# CHANNELS
# =============================================================================

def channel_split(colormap: ImageFrame) -> Tuple[ImageFrame, ImageFrame, ImageFrame]:
    """
    Raises:
        NotColor: Single-channel input
    """
    if colormap.channels != 3:
        raise NotColor('channel_split needs a 3-channel image')
    return tuple(ImageFrame(colormap.data[:, :, c].copy()) for c in range(3))


def merge_channels(r: ImageFrame, g: ImageFrame, b: ImageFrame) -> ImageFrame:
    """Inverse of channel_split"""
    if not r.shape == g.shape == b.shape:
        raise SizeMismatch(f"channels differ: {r.shape}, {g.shape}, {b.shape}")
    if any(c.channels != 1 for c in (r, g, b)):
        raise NotColor('merge_channels takes single-channel frames')
    return ImageFrame(np.concatenate([r.data, g.data, b.data], axis=2))


def channel_dominance(colormap: ImageFrame) -> Tuple[float, float, float]:
    """
    Fraction of all pixels whose strictly largest channel is R, G and B

    Pixels with a tied maximum (white, grey) count for no channel.
    """
    if colormap.channels != 3:
        raise NotColor('channel_dominance needs a 3-channel image')
    data = colormap.data
    top = data.max(axis=2)
    strict = (data == top[..., None]).sum(axis=2) == 1
    winner = data.argmax(axis=2)
    total = winner.size
    return tuple(float(np.sum(strict & (winner == c)) / total) for c in range(3))
