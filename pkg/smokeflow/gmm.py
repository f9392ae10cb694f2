"""
Gaussian mixture segmentation of flow colour maps.

Pixels are clustered by colour with a diagonal-covariance mixture fitted by EM.
Zero motion encodes as white, so the component farthest from white is the
moving (smoke) mode. The mask multiplies the colour map to give the fused map.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from .imgio import ImageFrame
from .utils import (
    CorruptHeader,
    DegenerateMixture,
    NotColor,
    PreconditionError,
    SizeMismatch,
    TooFewPixels,
    atomic_write,
    require_file,
)

# --- Logging setup ---
logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
PRIOR_FLOOR = 1e-6
MIN_PIXELS_PER_COMPONENT = 10
WHITE = np.ones(3)


@dataclass
class GmmConfig:
    K: int = 2
    seed: int = 0
    tol: float = 1e-6
    max_iter: int = 100
    white_tol: float = 0.05
    min_component_px: int = 0
    closing_radius: int = 0
    max_mag: Optional[float] = None

    def validate(self) -> 'GmmConfig':
        """K is checked by fit_gmm, which raises DegenerateMixture for K < 2"""
        if self.tol <= 0:
            raise PreconditionError('must be > 0', key='gmm_tol')
        if self.max_iter < 1:
            raise PreconditionError('must be >= 1', key='gmm_max_iter')
        if self.white_tol < 0:
            raise PreconditionError('must be >= 0', key='white_tol')
        if self.min_component_px < 0:
            raise PreconditionError('must be >= 0', key='min_component_px')
        if self.closing_radius < 0:
            raise PreconditionError('must be >= 0', key='closing_radius')
        if self.max_mag is not None and self.max_mag <= 0:
            raise PreconditionError('must be > 0', key='max_mag')
        return self


@dataclass(eq=False)
class GmmModel:
    priors: np.ndarray
    means: np.ndarray
    covars: np.ndarray
    loglik_trace: List[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.priors)

    def to_record(self) -> dict:
        return {
            'K': self.K,
            'priors': self.priors.tolist(),
            'means': self.means.tolist(),
            'covars': self.covars.tolist(),
            'loglik_trace': list(self.loglik_trace),
        }

    @classmethod
    def from_record(cls, record: dict) -> 'GmmModel':
        model = cls(
            priors=np.asarray(record['priors'], dtype=np.float64),
            means=np.asarray(record['means'], dtype=np.float64),
            covars=np.asarray(record['covars'], dtype=np.float64),
            loglik_trace=[float(x) for x in record.get('loglik_trace', [])],
        )
        if model.means.shape != (model.K, 3) or model.covars.shape != (model.K, 3):
            raise ValueError(f"inconsistent shapes for K={model.K}")
        return model


# =============================================================================
# EM
# =============================================================================

def kmeans_pp(pixels: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """
    k-means++ seeding: first centre uniform, then proportional to squared distance
    to the nearest chosen centre (uniform again when every distance is zero)
    """
    n = len(pixels)
    centers = [pixels[rng.integers(n)]]
    for _ in range(1, K):
        d2 = np.min([np.sum((pixels - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(pixels[idx])
    return np.array(centers, dtype=np.float64)


def component_log_density(pixels: np.ndarray, means: np.ndarray, covars: np.ndarray) -> np.ndarray:
    """(N, K) log N(x | mean_k, diag(covar_k))"""
    diff = pixels[:, None, :] - means[None, :, :]
    return -0.5 * (np.sum(np.log(2.0 * np.pi * covars), axis=1)[None, :]
                   + np.sum(diff ** 2 / covars[None, :, :], axis=2))


def fit_gmm(pixels: np.ndarray, K: int = 2, seed: int = 0, tol: float = 1e-6,
            max_iter: int = 100) -> GmmModel:
    """
    Fit a diagonal-covariance Gaussian mixture by EM

    Args:
        pixels: (N, 3) colours
        K: Component count (>= 2)
        seed: Seed for the k-means++ initialisation
        tol: Stop when |delta loglik| <= tol * |loglik|
        max_iter: Iteration cap

    Returns:
        GmmModel: Fitted model; loglik_trace holds one entry per E-step

    Raises:
        DegenerateMixture: K < 2 or a prior collapses below 1e-6
        TooFewPixels: Fewer than 10 K pixels
    """
    if K < 2:
        raise DegenerateMixture(f"need at least 2 components, got K={K}")
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    n = len(pixels)
    if n < MIN_PIXELS_PER_COMPONENT * K:
        raise TooFewPixels(f"{n} pixels for K={K}; need at least {MIN_PIXELS_PER_COMPONENT * K}")

    rng = np.random.default_rng(seed)
    means = kmeans_pp(pixels, K, rng)
    covars = np.tile(np.maximum(pixels.var(axis=0), VARIANCE_FLOOR), (K, 1))
    priors = np.full(K, 1.0 / K)
    trace: List[float] = []

    for iteration in range(max_iter):
        # E-step
        log_joint = component_log_density(pixels, means, covars) + np.log(priors)[None, :]
        log_norm = logsumexp(log_joint, axis=1)
        loglik = float(log_norm.sum())
        trace.append(loglik)
        if len(trace) > 1 and abs(loglik - trace[-2]) <= tol * abs(loglik):
            break
        resp = np.exp(log_joint - log_norm[:, None])

        # M-step
        nk = resp.sum(axis=0)
        priors = nk / n
        if priors.min() < PRIOR_FLOOR:
            raise DegenerateMixture(f"component prior collapsed to {priors.min():.3e} at iteration {iteration}")
        means = (resp.T @ pixels) / nk[:, None]
        covars = np.array([
            resp[:, k] @ (pixels - means[k]) ** 2 / nk[k] for k in range(K)
        ])
        covars = np.maximum(covars, VARIANCE_FLOOR)

    logger.info("GMM K=%d converged after %d iterations, loglik %.4f", K, len(trace), trace[-1])
    return GmmModel(priors=priors, means=means, covars=covars, loglik_trace=trace)


# =============================================================================
# MASKS
# =============================================================================

def smoke_component(model: GmmModel, white_tol: float = 0.05) -> Optional[int]:
    """
    Index of the component whose mean is farthest from white, or None if no
    mean is more than `white_tol` away; ties go to the smaller index
    """
    dist = np.linalg.norm(model.means - WHITE[None, :], axis=1)
    best = int(np.argmax(dist))
    return best if dist[best] > white_tol else None


def classify(model: GmmModel, colormap: ImageFrame, white_tol: float = 0.05) -> np.ndarray:
    """
    Per-pixel posterior argmax; pixels of the smoke component get label 1

    Returns:
        np.ndarray: uint8 (height, width) labels in {0, 1}

    Raises:
        NotColor: Single-channel colour map
    """
    if colormap.channels != 3:
        raise NotColor('classify needs a 3-channel colour map')
    smoke = smoke_component(model, white_tol)
    if smoke is None:
        return np.zeros(colormap.shape, dtype=np.uint8)

    pixels = colormap.data.reshape(-1, 3).astype(np.float64)
    log_joint = component_log_density(pixels, model.means, model.covars) + np.log(model.priors)[None, :]
    labels = np.argmax(log_joint, axis=1).reshape(colormap.shape)
    return (labels == smoke).astype(np.uint8)


def fuse(colormap: ImageFrame, mask: np.ndarray) -> ImageFrame:
    """
    Colour map where the mask is set, black elsewhere

    Raises:
        SizeMismatch: Mask and colour map differ in size
    """
    mask = np.asarray(mask)
    if mask.shape != colormap.shape:
        raise SizeMismatch(f"mask {mask.shape} vs colour map {colormap.shape}")
    return ImageFrame(colormap.data * (mask > 0)[..., None].astype(colormap.data.dtype))


def disc(radius: int) -> np.ndarray:
    """Digital disc x^2 + y^2 <= r (r + 1)"""
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return x ** 2 + y ** 2 <= radius * (radius + 1)


def postprocess(mask: np.ndarray, min_component_px: int = 0, closing_radius: int = 0) -> np.ndarray:
    """
    Morphological closing with a disc, then removal of 8-connected components
    smaller than `min_component_px`
    """
    if min_component_px < 0 or closing_radius < 0:
        raise PreconditionError('postprocess parameters must be >= 0')
    out = np.asarray(mask) > 0

    if closing_radius > 0:
        pad = closing_radius + 1
        padded = np.pad(out, pad)
        closed = ndimage.binary_closing(padded, structure=disc(closing_radius))
        out = closed[pad:-pad, pad:-pad]

    if min_component_px > 0:
        labels, count = ndimage.label(out, structure=np.ones((3, 3), dtype=bool))
        if count:
            sizes = np.bincount(labels.ravel())
            keep = sizes >= min_component_px
            keep[0] = False
            out = keep[labels]

    return out.astype(np.uint8)


def segment_colormap(colormap: ImageFrame, cfg: Optional[GmmConfig] = None):
    """
    Fit, classify, clean up and fuse in one go

    Returns:
        tuple: (GmmModel, mask, fused colour map)

    Raises:
        NotColor: Single-channel colour map
    """
    cfg = (cfg or GmmConfig()).validate()
    if colormap.channels != 3:
        raise NotColor('segmentation needs a 3-channel colour map')
    model = fit_gmm(colormap.data.reshape(-1, 3), cfg.K, seed=cfg.seed, tol=cfg.tol, max_iter=cfg.max_iter)
    mask = classify(model, colormap, white_tol=cfg.white_tol)
    mask = postprocess(mask, cfg.min_component_px, cfg.closing_radius)
    return model, mask, fuse(colormap, mask)


# =============================================================================
# PERSISTENCE
# =============================================================================

def save_model(model: GmmModel, path: str) -> None:
    with atomic_write(path) as tmp:
        with open(tmp, 'w') as f:
            json.dump(model.to_record(), f, indent=2)


def load_model(path: str) -> GmmModel:
    """
    Raises:
        MissingFile, CorruptHeader
    """
    require_file(path)
    try:
        with open(path) as f:
            return GmmModel.from_record(json.load(f))
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptHeader(f"Unreadable GMM model: {e}", path=path) from e
