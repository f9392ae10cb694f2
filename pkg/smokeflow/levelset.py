"""
Four-phase level-set machinery for the flow regulariser.

Two level surfaces per flow component split the grid into the regions
++, +-, -+ and --. Each region carries its own flow; the composed flow blends
them with regularised Heaviside products. Level surfaces evolve by the
semi-implicit four-phase gradient flow (region competition plus curvature).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .fields import FlowField
from .fracdiff import GLWeights, fractional_difference, neighborhood_sum
from .utils import MIN_SIZE, DegenerateSize, PreconditionError

# --- Logging setup ---
logger = logging.getLogger(__name__)

PHASES = ('pp', 'pm', 'mp', 'mm')
INIT_SCHEMES = ('checkerboard', 'circles')
CHECKER_PERIOD = 5.0


@dataclass(frozen=True, eq=False)
class LevelSetQuad:
    """Two level surfaces for u (ku1, ku2) and two for v (kv1, kv2)"""
    ku1: np.ndarray
    ku2: np.ndarray
    kv1: np.ndarray
    kv2: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.ku1.shape

    def stacked(self) -> np.ndarray:
        """(component, surface, height, width)"""
        return np.array([[self.ku1, self.ku2], [self.kv1, self.kv2]], dtype=np.float64)

    @classmethod
    def from_stacked(cls, array: np.ndarray) -> 'LevelSetQuad':
        return cls(ku1=array[0, 0], ku2=array[0, 1], kv1=array[1, 0], kv2=array[1, 1])

    def surfaces(self):
        return [('ku1', self.ku1), ('ku2', self.ku2), ('kv1', self.kv1), ('kv2', self.kv2)]


@dataclass(frozen=True, eq=False)
class PhaseFlows:
    """Region-restricted flows Z^{++}, Z^{+-}, Z^{-+}, Z^{--}"""
    zpp: FlowField
    zpm: FlowField
    zmp: FlowField
    zmm: FlowField

    def stacked(self) -> np.ndarray:
        """(phase, component, height, width) in PHASES order"""
        return np.array([f.stacked() for f in (self.zpp, self.zpm, self.zmp, self.zmm)])

    @classmethod
    def from_stacked(cls, array: np.ndarray) -> 'PhaseFlows':
        return cls(*(FlowField.from_stacked(array[i]) for i in range(4)))

    @classmethod
    def uniform(cls, flow: FlowField) -> 'PhaseFlows':
        return cls(flow, flow, flow, flow)


@dataclass(frozen=True)
class LevelSetParams:
    eps: float = 1.0
    dtau: float = 0.1
    h: float = 1.0
    nu: float = 1000.0
    eta: float = 1e-6

    def __post_init__(self) -> None:
        for key in ('eps', 'dtau', 'h', 'eta'):
            if getattr(self, key) <= 0:
                raise PreconditionError('must be > 0', key=key)
        if self.nu < 0:
            raise PreconditionError('must be >= 0', key='nu')


# =============================================================================
# REGULARISED STEP FUNCTIONS
# =============================================================================

def heaviside_dirac(kappa: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    H = (1 + (2/pi) arctan(kappa/eps)) / 2 and delta = eps / (pi (eps^2 + kappa^2))
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    heaviside = 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(kappa / eps))
    delta = (eps / np.pi) / (eps ** 2 + kappa ** 2)
    return heaviside, delta


def phase_weights(k1: np.ndarray, k2: np.ndarray, eps: float) -> np.ndarray:
    """(4, height, width) Heaviside products in PHASES order; they sum to one"""
    h1, _ = heaviside_dirac(k1, eps)
    h2, _ = heaviside_dirac(k2, eps)
    return np.array([h1 * h2, h1 * (1.0 - h2), (1.0 - h1) * h2, (1.0 - h1) * (1.0 - h2)])


# =============================================================================
# CURVATURE
# =============================================================================

def extend_linear(kappa: np.ndarray) -> np.ndarray:
    """Pad one pixel on every side by linear extrapolation (planes extend exactly)"""
    return np.pad(np.asarray(kappa, dtype=np.float64), 1, mode='reflect', reflect_type='odd')


def curvature_coeffs(kappa: np.ndarray, h: float = 1.0, eta: float = 1e-6):
    """
    One-sided/central difference coefficients C1..C4 of the divergence term

    C1 pairs with the east neighbour (x+1), C2 west, C3 south (y+1), C4 north.
    Each is 1 / max(|grad kappa|, eta) on its half-edge stencil.
    """
    padded = extend_linear(kappa)
    rows, cols = np.shape(kappa)

    def at(dx: int, dy: int) -> np.ndarray:
        return padded[1 + dy:1 + dy + rows, 1 + dx:1 + dx + cols]

    centre = at(0, 0)
    c1 = np.hypot((at(1, 0) - centre) / h, (at(0, 1) - at(0, -1)) / (2 * h))
    c2 = np.hypot((centre - at(-1, 0)) / h, (at(-1, 1) - at(-1, -1)) / (2 * h))
    c3 = np.hypot((at(1, 0) - at(-1, 0)) / (2 * h), (at(0, 1) - centre) / h)
    c4 = np.hypot((at(1, -1) - at(-1, -1)) / (2 * h), (centre - at(0, -1)) / h)
    return tuple(1.0 / np.maximum(c, eta) for c in (c1, c2, c3, c4))


def semi_implicit_step(kappa: np.ndarray, forcing: np.ndarray, sp: LevelSetParams) -> np.ndarray:
    """
    kappa' = [kappa + g (C1 kE + C2 kW + C3 kS + C4 kN) - dtau delta F] / (1 + g sum C)

    with g = (dtau / h^2) nu delta(kappa); coefficients frozen at the current iterate.
    """
    _, delta = heaviside_dirac(kappa, sp.eps)
    c1, c2, c3, c4 = curvature_coeffs(kappa, sp.h, sp.eta)
    padded = extend_linear(kappa)
    rows, cols = kappa.shape
    east = padded[1:1 + rows, 2:2 + cols]
    west = padded[1:1 + rows, 0:cols]
    south = padded[2:2 + rows, 1:1 + cols]
    north = padded[0:rows, 1:1 + cols]

    gamma = (sp.dtau / sp.h ** 2) * sp.nu * delta
    numerator = kappa + gamma * (c1 * east + c2 * west + c3 * south + c4 * north) - sp.dtau * delta * forcing
    return numerator / (1.0 + gamma * (c1 + c2 + c3 + c4))


# =============================================================================
# FLOW UPDATES
# =============================================================================

def region_weights(q: LevelSetQuad, eps: float) -> np.ndarray:
    """(phase, component, height, width) Heaviside products of each component's surface pair"""
    kappa = q.stacked()
    return np.stack([phase_weights(kappa[c, 0], kappa[c, 1], eps) for c in range(2)], axis=1)


def update_phase_flows(p: PhaseFlows, zhat: FlowField, w: GLWeights, theta: float,
                       tol: float = 1e-4, max_sweeps: int = 30,
                       region: Optional[np.ndarray] = None) -> PhaseFlows:
    """
    Fixed-point sweeps of Z^{ij} = [chi Zhat + 2 theta sum_q |w_q| Z^{ij}_neighbours] / (chi + 2 theta sum |w|)

    chi is 1 everywhere unless `region` (see region_weights) restricts each
    phase's data coupling to its own region. Runs until the largest change drops
    below `tol` or `max_sweeps` is reached.
    """
    target = zhat.stacked()[None]
    chi = 1.0 if region is None else region
    z = p.stacked()
    for sweep in range(1, max_sweeps + 1):
        weighted, total = neighborhood_sum(z, w)
        new = (chi * target + 2.0 * theta * weighted) / (chi + 2.0 * theta * total)
        change = float(np.max(np.abs(new - z)))
        z = new
        if change < tol:
            break
    logger.debug("Phase flows: %d sweeps, last change %.3e", sweep, change)
    return PhaseFlows.from_stacked(z)


def phase_energy_density(z: np.ndarray, w: GLWeights, h: float) -> np.ndarray:
    """Squared fractional differences (x and y) of a scalar field"""
    dx = fractional_difference(z, w, axis=1, h=h)
    dy = fractional_difference(z, w, axis=0, h=h)
    return dx ** 2 + dy ** 2


def competition_forcing(zhat_c: np.ndarray, phases_c: np.ndarray, k1: np.ndarray, k2: np.ndarray,
                        w: GLWeights, sp: LevelSetParams, theta: float):
    """
    Four-phase region competition for one flow component

    Returns:
        tuple: (F1, F2) forcing for the first and second surface
    """
    e = np.array([(zhat_c - phases_c[i]) ** 2 + phase_energy_density(phases_c[i], w, sp.h)
                  for i in range(4)])
    e_pp, e_pm, e_mp, e_mm = e
    h1, _ = heaviside_dirac(k1, sp.eps)
    h2, _ = heaviside_dirac(k2, sp.eps)
    scale = 1.0 / (2.0 * theta)
    f1 = scale * ((e_pp - e_mp) * h2 + (e_pm - e_mm) * (1.0 - h2))
    f2 = scale * ((e_pp - e_pm) * h1 + (e_mp - e_mm) * (1.0 - h1))
    return f1, f2


def evolve_levelsets(q: LevelSetQuad, p: PhaseFlows, zhat: FlowField, w: GLWeights,
                     sp: LevelSetParams, theta: float, share: bool = False) -> LevelSetQuad:
    """
    One semi-implicit step for every level surface

    Args:
        q: Current surfaces
        p: Phase flows
        zhat: Auxiliary flow
        w: GL table
        sp: Level-set parameters
        theta: Coupling
        share: Use the u pair for both components, driven by the summed forcing
    """
    kappa = q.stacked()
    phases = p.stacked()
    zhat_stack = zhat.stacked()

    forcing = np.zeros_like(kappa)
    for c in range(2):
        pair = 0 if share else c
        forcing[c] = competition_forcing(zhat_stack[c], phases[:, c], kappa[pair, 0], kappa[pair, 1], w, sp, theta)

    if share:
        total = forcing.sum(axis=0)
        pair = np.array([semi_implicit_step(kappa[0, a], total[a], sp) for a in range(2)])
        return LevelSetQuad.from_stacked(np.array([pair, pair.copy()]))

    out = np.empty_like(kappa)
    for c in range(2):
        for a in range(2):
            out[c, a] = semi_implicit_step(kappa[c, a], forcing[c, a], sp)
    return LevelSetQuad.from_stacked(out)


def compose_flow(p: PhaseFlows, q: LevelSetQuad, eps: float) -> FlowField:
    """Per component, blend the four phases with their Heaviside products"""
    phases = p.stacked()
    kappa = q.stacked()
    out = []
    for c in range(2):
        weights = phase_weights(kappa[c, 0], kappa[c, 1], eps)
        out.append(np.sum(weights * phases[:, c], axis=0))
    return FlowField(out[0], out[1])


# =============================================================================
# INITIALISATION
# =============================================================================

def init_levelsets(width: int, height: int, scheme: str = 'checkerboard') -> LevelSetQuad:
    """
    Initial surfaces, identical for u and v

    checkerboard: sin(pi x / 5) sin(pi y / 5); the second surface shifted by 2.5 px.
    circles: signed distance (positive inside) to two horizontally offset circles
    of radius min(width, height) / 4.

    Raises:
        DegenerateSize: Smaller than 8x8
    """
    if width < MIN_SIZE or height < MIN_SIZE:
        raise DegenerateSize(f"level sets need at least {MIN_SIZE}x{MIN_SIZE}, got {width}x{height}")
    if scheme not in INIT_SCHEMES:
        raise PreconditionError(f"scheme must be one of {INIT_SCHEMES}", key='init_scheme')

    y, x = np.indices((height, width), dtype=np.float64)
    if scheme == 'checkerboard':
        k1 = np.sin(np.pi * x / CHECKER_PERIOD) * np.sin(np.pi * y / CHECKER_PERIOD)
        shift = CHECKER_PERIOD / 2.0
        k2 = np.sin(np.pi * (x + shift) / CHECKER_PERIOD) * np.sin(np.pi * (y + shift) / CHECKER_PERIOD)
    else:
        radius = min(width, height) / 4.0
        cx, cy = width / 2.0, height / 2.0
        k1 = radius - np.hypot(x - (cx - radius / 2.0), y - cy)
        k2 = radius - np.hypot(x - (cx + radius / 2.0), y - cy)

    return LevelSetQuad(ku1=k1, ku2=k2, kv1=k1.copy(), kv2=k2.copy())
