"""
Scalar and vector field arithmetic on the pixel grid.

Fields are plain (height, width) float64 arrays; FlowField pairs two of them.
Borders are replicated everywhere (scipy mode 'nearest').
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from .imgio import ImageFrame
from .utils import (
    INTENSITY_SCALE,
    MIN_SIZE,
    DegenerateSize,
    PreconditionError,
    SizeMismatch,
)

# --- Logging setup ---
logger = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
NOISE_KINDS = ('gaussian', 'salt_pepper', 'poisson')
POISSON_PEAK = 255.0


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement in pixels/frame: u rightward, v downward"""
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape != v.shape or u.ndim != 2:
            raise SizeMismatch(f"flow components differ: {u.shape} vs {v.shape}")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'v', v)

    @property
    def shape(self) -> tuple:
        return self.u.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def stacked(self) -> np.ndarray:
        """(2, height, width) view-friendly copy"""
        return np.stack([self.u, self.v])

    @classmethod
    def zeros(cls, shape: tuple) -> 'FlowField':
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_stacked(cls, array: np.ndarray) -> 'FlowField':
        return cls(array[0], array[1])


@dataclass(frozen=True, eq=False)
class GradientTriple:
    """Spatial derivatives (intensity/pixel) and temporal difference (intensity/frame)"""
    ix: np.ndarray
    iy: np.ndarray
    it: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.ix.shape

    @property
    def norm_sq(self) -> np.ndarray:
        return self.ix ** 2 + self.iy ** 2

    def residual(self, flow: FlowField) -> np.ndarray:
        """Linearised brightness-constancy residual It + grad(I).Z"""
        return self.it + self.ix * flow.u + self.iy * flow.v


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = 'gaussian'
    mean: float = 0.0
    sigma: float = 0.01
    density: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise PreconditionError(f"noise kind must be one of {NOISE_KINDS}", key='kind')
        if self.sigma < 0:
            raise PreconditionError('sigma must be >= 0', key='sigma')
        if not 0.0 <= self.density <= 1.0:
            raise PreconditionError('density must lie in [0,1]', key='density')


# =============================================================================
# SMOOTHING AND DERIVATIVES
# =============================================================================

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian of radius ceil(3 sigma)"""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    """
    Separable Gaussian smoothing over the last two axes with replicated borders

    Args:
        field: (..., height, width) array
        sigma: Standard deviation in pixels; 0 returns the input unchanged
    """
    if sigma < 0:
        raise PreconditionError('sigma must be >= 0', key='sigma')
    field = np.asarray(field, dtype=np.float64)
    if sigma == 0:
        return field.copy()
    kernel = gaussian_kernel(sigma)
    out = ndimage.correlate1d(field, kernel, axis=-1, mode='nearest')
    return ndimage.correlate1d(out, kernel, axis=-2, mode='nearest')


def central_diff(field: np.ndarray, axis: int) -> np.ndarray:
    """(f[i+1] - f[i-1]) / 2 along `axis` with replicated borders"""
    return ndimage.correlate1d(field, [-0.5, 0.0, 0.5], axis=axis, mode='nearest')


def to_luma(frame: ImageFrame) -> np.ndarray:
    """Single channel intensity in [0,1]"""
    data = frame.data.astype(np.float64)
    if frame.channels == 1:
        return data[:, :, 0]
    return data @ LUMA


def gradients(frame1: ImageFrame, frame2: ImageFrame, presmooth_sigma: float = 1.0) -> GradientTriple:
    """
    Spatiotemporal derivatives on the 255 intensity scale

    Both frames are converted to luma, smoothed and rescaled; ix and iy are
    central differences averaged over the two frames, it = frame2 - frame1.

    Raises:
        SizeMismatch: Frames differ in size
    """
    if frame1.shape != frame2.shape:
        raise SizeMismatch(f"frames differ: {frame1.shape} vs {frame2.shape}")
    i1 = gaussian_smooth(to_luma(frame1), presmooth_sigma) * INTENSITY_SCALE
    i2 = gaussian_smooth(to_luma(frame2), presmooth_sigma) * INTENSITY_SCALE
    ix = 0.5 * (central_diff(i1, axis=1) + central_diff(i2, axis=1))
    iy = 0.5 * (central_diff(i1, axis=0) + central_diff(i2, axis=0))
    return GradientTriple(ix=ix, iy=iy, it=i2 - i1)


# =============================================================================
# NOISE
# =============================================================================

def add_noise(frame: ImageFrame, spec: NoiseSpec) -> ImageFrame:
    """
    Corrupt a frame; deterministic for a given seed

    gaussian: i.i.d. N(mean, sigma^2) then clamp.
    salt_pepper: a `density` fraction of pixels set to 0 or 1 (all channels).
    poisson: Poisson(pixel * 255) / 255.
    """
    rng = np.random.default_rng(spec.seed)
    data = frame.data.astype(np.float64)

    if spec.kind == 'gaussian':
        out = data + rng.normal(spec.mean, spec.sigma, size=data.shape)
    elif spec.kind == 'salt_pepper':
        hit = rng.random(data.shape[:2]) < spec.density
        salt = rng.random(data.shape[:2]) < 0.5
        out = data.copy()
        out[hit] = np.where(salt[hit], 1.0, 0.0)[:, None]
    else:
        out = rng.poisson(data * POISSON_PEAK) / POISSON_PEAK

    return ImageFrame(np.clip(out, 0.0, 1.0))


# =============================================================================
# WARPING AND RESAMPLING
# =============================================================================

def warp(frame: ImageFrame, flow: FlowField) -> ImageFrame:
    """
    Bilinear backward warp: out(x, y) = frame(x + u, y + v), coordinates clamped to the border
    """
    if frame.shape != flow.shape:
        raise SizeMismatch(f"frame {frame.shape} vs flow {flow.shape}")
    rows, cols = np.indices(frame.shape, dtype=np.float64)
    coords = np.stack([rows + flow.v, cols + flow.u])
    out = np.empty_like(frame.data)
    for c in range(frame.channels):
        out[:, :, c] = ndimage.map_coordinates(
            frame.data[:, :, c].astype(np.float64), coords, order=1, mode='nearest')
    return ImageFrame(np.clip(out, 0.0, 1.0))


def median_flow(flow: FlowField, size: int) -> FlowField:
    """Per-component size x size median; sizes below 2 return the flow unchanged"""
    if size < 2:
        return flow
    return FlowField(ndimage.median_filter(flow.u, size=size, mode='nearest'),
                     ndimage.median_filter(flow.v, size=size, mode='nearest'))


def resample(field: np.ndarray, shape: tuple) -> np.ndarray:
    """Bilinear resize of a (height, width) array to `shape` (pixel-centre aligned)"""
    field = np.asarray(field, dtype=np.float64)
    sy = field.shape[0] / shape[0]
    sx = field.shape[1] / shape[1]
    rows = (np.arange(shape[0]) + 0.5) * sy - 0.5
    cols = (np.arange(shape[1]) + 0.5) * sx - 0.5
    grid = np.meshgrid(rows, cols, indexing='ij')
    return ndimage.map_coordinates(field, grid, order=1, mode='nearest')


def resample_flow(flow: FlowField, shape: tuple) -> FlowField:
    """Resize a flow and rescale its vectors to the new grid"""
    sy = shape[0] / flow.shape[0]
    sx = shape[1] / flow.shape[1]
    return FlowField(resample(flow.u, shape) * sx, resample(flow.v, shape) * sy)


def level_shape(shape: tuple, factor: float, level: int) -> tuple:
    return tuple(int(round(n * factor ** level)) for n in shape)


def build_pyramid(frame: ImageFrame, levels: int, factor: float) -> List[ImageFrame]:
    """
    Gaussian pyramid, finest level first

    Args:
        frame: Level-0 frame
        levels: Number of levels (>= 1)
        factor: Per-level scale in (0, 1)

    Raises:
        DegenerateSize: A level would fall below 8x8
    """
    if levels < 1:
        raise PreconditionError('levels must be >= 1', key='pyramid_levels')
    if not 0.0 < factor < 1.0:
        raise PreconditionError('factor must lie in (0, 1)', key='pyramid_factor')
    for level in range(levels):
        h, w = level_shape(frame.shape, factor, level)
        if h < MIN_SIZE or w < MIN_SIZE:
            raise DegenerateSize(f"pyramid level {level} would be {w}x{h}")

    pyramid = [frame]
    sigma = 0.8 / factor
    for level in range(1, levels):
        prev = pyramid[-1]
        shape = level_shape(frame.shape, factor, level)
        data = np.stack([
            resample(gaussian_smooth(prev.data[:, :, c], sigma), shape)
            for c in range(prev.channels)
        ], axis=-1)
        pyramid.append(ImageFrame.from_array(data))
        logger.debug("Pyramid level %d: %dx%d", level, shape[1], shape[0])
    return pyramid
