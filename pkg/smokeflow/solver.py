"""
Fractional-order dual-phase level-set flow solver.

estimate_flow alternates, per outer iteration,

    dual ascent (data term) -> Zhat -> phase flows -> level sets -> composed Z

and records the energy terms and the max-norm flow change. run_pipeline chains
the solver with the colour encoding and the GMM motion mask.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional, TextIO

import numpy as np
import pandas as pd

from .fields import (
    FlowField,
    GradientTriple,
    build_pyramid,
    gradients,
    median_flow,
    resample,
    resample_flow,
    warp,
)
from .flowviz import auto_max_mag, flow_to_color, quantize_colormap
from .fracdiff import GLWeights, StabilityReport, fractional_difference, gl_weights, stability_check
from .gmm import GmmConfig, GmmModel, segment_colormap
from .imgio import ImageFrame, write_flo, write_image, write_mask
from .levelset import (
    INIT_SCHEMES,
    LevelSetParams,
    LevelSetQuad,
    PhaseFlows,
    compose_flow,
    evolve_levelsets,
    heaviside_dirac,
    init_levelsets,
    region_weights,
    update_phase_flows,
)
from .primaldual import solve_data_term
from .utils import MIN_SIZE, DegenerateMixture, DegenerateSize, NonFiniteDivergence, PreconditionError, SizeMismatch

# --- Logging setup ---
logger = logging.getLogger(__name__)


@dataclass
class SolverParams:
    """All scalar knobs of the solver; defaults are the published operating point"""
    alpha: float = 0.5
    lam: float = 225.0
    theta: float = 0.001
    nu: float = 1000.0
    outer_iters: int = 100
    dual_iters: int = 5
    flow_iters: int = 30
    flow_tol: float = 1e-4
    window: int = 3
    eps: float = 1.0
    dtau: float = 0.1
    h: float = 1.0
    eta: float = 1e-6
    pyramid_levels: int = 1
    pyramid_factor: float = 0.5
    presmooth_sigma: float = 1.0
    init_scheme: str = 'checkerboard'
    share_levelsets: bool = False
    region_coupling: bool = False
    median_size: int = 5
    seed: int = 0

    def validate(self) -> 'SolverParams':
        """
        Raises:
            PreconditionError: naming the first offending key
        """
        if not 0.0 < self.alpha < 1.0:
            raise PreconditionError('must lie in (0, 1)', key='alpha')
        for key in ('lam', 'theta', 'eps', 'dtau', 'h', 'eta', 'flow_tol'):
            if not getattr(self, key) > 0:
                raise PreconditionError('must be > 0', key=key)
        if self.nu < 0:
            raise PreconditionError('must be >= 0', key='nu')
        for key in ('outer_iters', 'dual_iters', 'flow_iters', 'window', 'pyramid_levels'):
            if int(getattr(self, key)) < 1:
                raise PreconditionError('must be >= 1', key=key)
        if not 0.0 < self.pyramid_factor < 1.0:
            raise PreconditionError('must lie in (0, 1)', key='pyramid_factor')
        if self.presmooth_sigma < 0:
            raise PreconditionError('must be >= 0', key='presmooth_sigma')
        if self.median_size < 0:
            raise PreconditionError('must be >= 0', key='median_size')
        if self.init_scheme not in INIT_SCHEMES:
            raise PreconditionError(f"must be one of {INIT_SCHEMES}", key='init_scheme')
        return self

    @property
    def levelset_params(self) -> LevelSetParams:
        return LevelSetParams(eps=self.eps, dtau=self.dtau, h=self.h, nu=self.nu, eta=self.eta)

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyBreakdown:
    iteration: int
    data_term: float
    frac_term: float
    contour_term: float
    level: int = 0

    @property
    def total(self) -> float:
        return self.data_term + self.frac_term + self.contour_term

    def to_record(self) -> dict:
        return {
            'level': self.level,
            'iteration': self.iteration,
            'data_term': self.data_term,
            'frac_term': self.frac_term,
            'contour_term': self.contour_term,
            'total': self.total,
        }


@dataclass
class FlowResult:
    """
    Solver output. Traces hold one entry per outer iteration of the finest
    level; the diagnostics stream carries every level.
    """
    flow: FlowField
    levelsets: LevelSetQuad
    phases: Optional[PhaseFlows]
    stability: StabilityReport
    params: SolverParams
    energy_trace: List[EnergyBreakdown] = field(default_factory=list)
    residual_trace: List[float] = field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        """One row per outer iteration with the energy terms and the flow change"""
        df = pd.DataFrame([e.to_record() for e in self.energy_trace])
        if df.empty:
            return pd.DataFrame(columns=['level', 'iteration', 'data_term', 'frac_term',
                                         'contour_term', 'total', 'residual'])
        df['residual'] = self.residual_trace
        return df


# =============================================================================
# ENERGY
# =============================================================================

def energy(g: GradientTriple, flow: FlowField, q: LevelSetQuad, w: GLWeights,
           params: SolverParams, iteration: int = 0, level: int = 0) -> EnergyBreakdown:
    """
    Discrete value of the fractional dual-phase energy

    data: lam * sum |It + grad(I).Z|
    frac: sum over pixels of sqrt(Dx u^2 + Dy u^2 + Dx v^2 + Dy v^2)
    contour: nu * sum over surfaces of delta(kappa) |grad kappa|
    """
    data_term = params.lam * float(np.sum(np.abs(g.residual(flow))))

    diffs = [fractional_difference(c, w, axis=a, h=params.h) for c in (flow.u, flow.v) for a in (0, 1)]
    frac_term = float(np.sum(np.sqrt(sum(d ** 2 for d in diffs))))

    contour = 0.0
    for _, kappa in q.surfaces():
        _, delta = heaviside_dirac(kappa, params.eps)
        gy, gx = np.gradient(kappa, params.h)
        contour += float(np.sum(delta * np.hypot(gx, gy)))

    return EnergyBreakdown(
        iteration=iteration,
        data_term=data_term,
        frac_term=frac_term,
        contour_term=params.nu * contour,
        level=level,
    )


# =============================================================================
# SOLVER
# =============================================================================

def _check_finite(iteration: int, flow: FlowField, d: np.ndarray, q: LevelSetQuad) -> None:
    arrays = [flow.u, flow.v, d] + [kappa for _, kappa in q.surfaces()]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise NonFiniteDivergence('solver fields became non-finite', iteration=iteration)


def _solve_level(g: GradientTriple, z: FlowField, q: LevelSetQuad, w: GLWeights,
                 params: SolverParams, level: int, result: FlowResult,
                 diagnostics: Optional[TextIO]):
    sp = params.levelset_params
    p = PhaseFlows.uniform(z)
    d = np.zeros(g.shape)

    for n in range(params.outer_iters):
        zhat, d = solve_data_term(z, d, g, params.lam, params.theta, params.dual_iters)
        region = region_weights(q, params.eps) if params.region_coupling else None
        p = update_phase_flows(p, zhat, w, params.theta, tol=params.flow_tol,
                               max_sweeps=params.flow_iters, region=region)
        q = evolve_levelsets(q, p, zhat, w, sp, params.theta, share=params.share_levelsets)
        z_new = compose_flow(p, q, params.eps)
        _check_finite(n, z_new, d, q)
        z_new = median_flow(z_new, params.median_size)

        residual = float(np.max(np.abs(z_new.stacked() - z.stacked())))
        e = energy(g, z_new, q, w, params, iteration=n, level=level)
        result.energy_trace.append(e)
        result.residual_trace.append(residual)
        if diagnostics is not None:
            diagnostics.write(json.dumps({**e.to_record(), 'residual': residual}) + '\n')
        logger.debug("level %d iter %d: total=%.4e residual=%.3e", level, n, e.total, residual)
        z = z_new

    return z, q, p


def _resample_levelsets(q: LevelSetQuad, shape: tuple) -> LevelSetQuad:
    return LevelSetQuad.from_stacked(np.array([[resample(k, shape) for k in pair] for pair in q.stacked()]))


def estimate_flow(frame1: ImageFrame, frame2: ImageFrame, params: Optional[SolverParams] = None,
                  diagnostics: Optional[TextIO] = None) -> FlowResult:
    """
    Estimate the flow carrying frame1 onto frame2

    Args:
        frame1: First frame
        frame2: Second frame, same size
        params: Solver parameters (defaults if omitted)
        diagnostics: Optional text stream receiving one JSON record per iteration

    Returns:
        FlowResult: Final flow, level sets, traces and the stability certificate

    Raises:
        SizeMismatch: Frames differ in size
        DegenerateSize: Frames smaller than 8x8
        PreconditionError: Invalid parameters
        NonFiniteDivergence: A field stopped being finite
    """
    params = (params or SolverParams()).validate()
    if frame1.shape != frame2.shape:
        raise SizeMismatch(f"frames differ: {frame1.shape} vs {frame2.shape}")
    height, width = frame1.shape
    if height < MIN_SIZE or width < MIN_SIZE:
        raise DegenerateSize(f"frames must be at least {MIN_SIZE}x{MIN_SIZE}, got {width}x{height}")

    w = gl_weights(params.alpha, params.window)
    stability = stability_check(w, params.theta)
    if not stability.stable:
        logger.warning("Stability certificate failed: sum|w|=%.6f bound=%.6f",
                       stability.sum_abs, stability.bound)

    pyramid1 = build_pyramid(frame1, params.pyramid_levels, params.pyramid_factor)
    pyramid2 = build_pyramid(frame2, params.pyramid_levels, params.pyramid_factor)

    coarse = pyramid1[-1]
    z = FlowField.zeros(coarse.shape)
    q = init_levelsets(coarse.width, coarse.height, params.init_scheme)
    result = FlowResult(flow=z, levelsets=q, phases=None, stability=stability, params=params)

    logger.info("Estimating flow %dx%d: alpha=%s lam=%s theta=%s nu=%s iters=%d levels=%d median=%d region=%s",
                width, height, params.alpha, params.lam, params.theta, params.nu,
                params.outer_iters, params.pyramid_levels, params.median_size, params.region_coupling)

    for level in range(params.pyramid_levels - 1, -1, -1):
        f1, f2 = pyramid1[level], pyramid2[level]
        if z.shape != f1.shape:
            z = resample_flow(z, f1.shape)
            q = _resample_levelsets(q, f1.shape)

        if level == params.pyramid_levels - 1:
            g = gradients(f1, f2, params.presmooth_sigma)
        else:
            # linearise around the upsampled flow: frame2 warped back, It shifted to match
            gw = gradients(f1, warp(f2, z), params.presmooth_sigma)
            g = GradientTriple(ix=gw.ix, iy=gw.iy, it=gw.it - gw.ix * z.u - gw.iy * z.v)

        result.energy_trace.clear()
        result.residual_trace.clear()
        z, q, p = _solve_level(g, z, q, w, params, level, result, diagnostics)

    result.flow = z
    result.levelsets = q
    result.phases = p
    final = result.energy_trace[-1]
    logger.info("Flow done: total energy %.4e, last residual %.3e", final.total, result.residual_trace[-1])
    return result


# =============================================================================
# PIPELINE
# =============================================================================

@dataclass
class PipelineOutput:
    flow: FlowField
    colormap: ImageFrame
    mask: np.ndarray
    fused: ImageFrame
    result: FlowResult
    model: GmmModel
    max_mag: float

    def paths(self, out_dir: str, stem: str) -> dict:
        return {
            'flo': os.path.join(out_dir, f"{stem}.flo"),
            'color': os.path.join(out_dir, f"{stem}_color.png"),
            'mask': os.path.join(out_dir, f"{stem}_mask.png"),
            'fused': os.path.join(out_dir, f"{stem}_fused.png"),
        }

    def write(self, out_dir: str, stem: str = 'pair') -> dict:
        """Write the four artifacts; returns their paths"""
        os.makedirs(out_dir, exist_ok=True)
        paths = self.paths(out_dir, stem)
        write_flo(self.flow, paths['flo'])
        write_image(self.colormap, paths['color'])
        write_mask(self.mask, paths['mask'])
        write_image(self.fused, paths['fused'])
        logger.info("Wrote pipeline outputs for %s to %s", stem, out_dir)
        return paths


def run_pipeline(frame1: ImageFrame, frame2: ImageFrame, params: Optional[SolverParams] = None,
                 gmm_cfg: Optional[GmmConfig] = None, out_dir: Optional[str] = None,
                 stem: str = 'pair', diagnostics: Optional[TextIO] = None) -> PipelineOutput:
    """
    Flow -> colour map -> GMM mask -> fused map

    The flow is rounded to .flo precision and the colour map to 8 bits before
    segmentation, so every stage reproduces from the written files alone.

    Raises:
        DegenerateMixture: gmm_cfg.K < 2 or a collapsed component
        plus everything estimate_flow raises
    """
    gmm_cfg = (gmm_cfg or GmmConfig()).validate()
    if gmm_cfg.K < 2:
        raise DegenerateMixture(f"need at least 2 components, got K={gmm_cfg.K}")
    result = estimate_flow(frame1, frame2, params, diagnostics)

    flow = FlowField(result.flow.u.astype(np.float32), result.flow.v.astype(np.float32))
    max_mag = gmm_cfg.max_mag if gmm_cfg.max_mag is not None else auto_max_mag(flow)
    colormap = quantize_colormap(flow_to_color(flow, max_mag))

    model, mask, fused = segment_colormap(colormap, gmm_cfg)
    logger.info("Pipeline: max_mag=%.4f, smoke fraction %.3f", max_mag, float(mask.mean()))

    out = PipelineOutput(flow=flow, colormap=colormap, mask=mask, fused=fused,
                         result=result, model=model, max_mag=float(max_mag))
    if out_dir is not None:
        out.write(out_dir, stem)
    return out
