"""
Synthetic inputs and experiment drivers.

Drivers return pandas DataFrames with one row per case so the CLI can print
them as JSON records or store them as CSV.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .fields import FlowField, NoiseSpec, add_noise, gaussian_smooth, gradients
from .flowviz import auto_max_mag, channel_dominance, flow_to_color
from .imgio import ImageFrame
from .metrics import aepe, evaluate, ssim
from .solver import SolverParams, estimate_flow
from .utils import MIN_SIZE, DegenerateSize, PreconditionError

# --- Logging setup ---
logger = logging.getLogger(__name__)

CHANNELS = ('R', 'G', 'B')

DEFAULT_CASES = (
    ('right', (1, 0)),
    ('down', (0, 1)),
    ('diagonal', (1, 1)),
    ('static', (0, 0)),
)

DEFAULT_NOISE = (
    NoiseSpec(kind='gaussian', sigma=0.01, seed=1),
    NoiseSpec(kind='poisson', seed=1),
    NoiseSpec(kind='salt_pepper', density=0.01, seed=1),
)


def _texture(rng: np.random.Generator, size: int, smooth: float, lo: float, hi: float) -> np.ndarray:
    """Smoothed uniform noise stretched to [lo, hi]"""
    tex = gaussian_smooth(rng.random((size, size)), smooth)
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    return lo + (hi - lo) * tex


def _check_size(size: int) -> None:
    if size < MIN_SIZE:
        raise DegenerateSize(f"synthetic frames need at least {MIN_SIZE} pixels, got {size}")


def textured_pair(size: int = 64, shift: Tuple[int, int] = (1, 0), seed: int = 0,
                  smooth: float = 1.5) -> Tuple[ImageFrame, ImageFrame, FlowField]:
    """
    Random texture and its copy translated by an integer (dx, dy)

    Both frames are cropped from a larger wrapped texture, so the seam of the
    wrap stays outside the visible window.

    Returns:
        tuple: (frame1, frame2, ground-truth flow)
    """
    _check_size(size)
    dx, dy = shift
    margin = max(abs(dx), abs(dy)) + 8
    rng = np.random.default_rng(seed)
    tex = _texture(rng, size + 2 * margin, smooth, 0.05, 0.95)
    moved = np.roll(tex, (dy, dx), axis=(0, 1))
    window = (slice(margin, margin + size), slice(margin, margin + size))
    gt = FlowField(np.full((size, size), float(dx)), np.full((size, size), float(dy)))
    return ImageFrame(tex[window]), ImageFrame(moved[window]), gt


def smoke_sequence(size: int = 64, seed: int = 0, drift: int = 2) -> Tuple[ImageFrame, ImageFrame, np.ndarray]:
    """
    A textured plume rising `drift` pixels over a static textured background

    Returns:
        tuple: (frame1, frame2, plume support in frame1 as a uint8 mask)
    """
    _check_size(size)
    if drift < 0:
        raise PreconditionError('must be >= 0', key='drift')
    rng = np.random.default_rng(seed)
    background = _texture(rng, size, 1.5, 0.05, 0.95)
    plume = _texture(rng, size, 1.5, 0.2, 0.95)

    y, x = np.indices((size, size))
    radius = size / 5.0
    support = (x - size / 2.0) ** 2 + (y - size * 0.6) ** 2 <= radius ** 2

    moved_support = np.roll(support, -drift, axis=0)
    moved_plume = np.roll(plume, -drift, axis=0)
    frame1 = np.where(support, plume, background)
    frame2 = np.where(moved_support, moved_plume, background)
    return ImageFrame(frame1), ImageFrame(frame2), support.astype(np.uint8)


# =============================================================================
# DRIVERS
# =============================================================================

def flow_benchmark(params: Optional[SolverParams] = None,
                   cases: Sequence[Tuple[str, Tuple[int, int]]] = DEFAULT_CASES,
                   size: int = 64) -> pd.DataFrame:
    """AAE / AEPE / AENG of the solver on translated textures"""
    params = params or SolverParams()
    rows = []
    for name, shift in cases:
        frame1, frame2, gt = textured_pair(size, shift, seed=params.seed)
        result = estimate_flow(frame1, frame2, params)
        g = gradients(frame1, frame2, params.presmooth_sigma)
        report = evaluate(result.flow, gt, g)
        rows.append({'case': name, 'dx': shift[0], 'dy': shift[1], **report.to_record()})
        logger.info("benchmark %s: AEPE %.4f AAE %.4f", name, report.aepe, report.aae)
    return pd.DataFrame(rows)


def _noisy(frame: ImageFrame, spec: NoiseSpec, offset: int) -> ImageFrame:
    return add_noise(frame, dataclasses.replace(spec, seed=spec.seed + offset))


def noise_robustness(frame1: ImageFrame, frame2: ImageFrame, params: Optional[SolverParams] = None,
                     specs: Iterable[NoiseSpec] = DEFAULT_NOISE) -> pd.DataFrame:
    """
    SSIM between the clean colour map and the colour map of noised inputs

    Both frames get independent noise draws; every map uses the clean run's max_mag.
    """
    params = params or SolverParams()
    clean = estimate_flow(frame1, frame2, params).flow
    max_mag = auto_max_mag(clean)
    clean_map = flow_to_color(clean, max_mag)

    rows = []
    for spec in specs:
        noisy = estimate_flow(_noisy(frame1, spec, 0), _noisy(frame2, spec, 1), params).flow
        score = ssim(clean_map, flow_to_color(noisy, max_mag))
        rows.append({
            'kind': spec.kind,
            'sigma': spec.sigma,
            'density': spec.density,
            'ssim': score,
            'aepe_vs_clean': aepe(noisy, clean),
        })
        logger.info("noise %s: SSIM %.4f", spec.kind, score)
    return pd.DataFrame(rows)


def channel_analysis(colormap: ImageFrame) -> pd.DataFrame:
    """Per channel: mean value, mean deficit from full intensity, dominance share"""
    dominance = channel_dominance(colormap)
    data = colormap.data.astype(np.float64)
    return pd.DataFrame([
        {
            'channel': name,
            'mean': float(data[:, :, c].mean()),
            'deficit': float((1.0 - data[:, :, c]).mean()),
            'dominance': dominance[c],
        }
        for c, name in enumerate(CHANNELS)
    ])
