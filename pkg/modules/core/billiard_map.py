"""Billiard Map - Collision map F on the phase cylinder (s, φ) of a lemon table.

Same-arc flights are resolved in closed form (a chord of a circle keeps φ and
advances the polar angle by π − 2φ). Flights between arcs are ray-traced
against the other circle with a cancellation-free quadratic root.
"""

import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.core.config_manager import config
from modules.core.geometry import ArcId, LemonTable, arc_point

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi


class PhasePoint(NamedTuple):
    """Post-reflection state: arc, arclength and angle from the inward normal."""
    arc_id: ArcId
    s: float
    phi: float


class CollisionEvent(NamedTuple):
    """Data of one collision at `point` and the flight leaving it."""
    point: PhasePoint
    tau: float
    d: float
    refl: float
    near_singular: bool = False


class StepError(RuntimeError):
    """Raised when the map is undefined: the flight ends at a corner or the state is tangential."""

    def __init__(self, kind: str, distance: float, point: Optional[PhasePoint] = None):
        self.kind = kind
        self.distance = distance
        self.point = point
        super().__init__(f"{kind} (distance {distance:.3e}) at {point}")


class Tolerances(NamedTuple):
    corner: float
    tangential: float
    warn: float


def tolerances() -> Tolerances:
    """Current billiard tolerances from settings."""
    return Tolerances(
        config.get('billiard', 'corner_tol', 1e-9),
        config.get('billiard', 'tangential_tol', 1e-9),
        config.get('billiard', 'near_corner_warn', 1e-7),
    )


def _wrap(angle: float) -> float:
    """Wrap an angle into (−π, π]."""
    a = math.fmod(angle + math.pi, TWO_PI)
    if a <= 0:
        a += TWO_PI
    return a - math.pi


def phase_point(table: LemonTable, s: float, phi: float) -> PhasePoint:
    """PhasePoint at arclength s (mod |Γ|) with the arc resolved from s."""
    s = math.fmod(s, table.len_gamma)
    if s < 0:
        s += table.len_gamma
    arc = ArcId.UNIT if s < table.len_gamma1 else ArcId.BIG
    return PhasePoint(arc, s, phi)


def radius(table: LemonTable, arc_id: ArcId) -> float:
    return 1.0 if arc_id == ArcId.UNIT else table.R


def half_chord(table: LemonTable, x: PhasePoint) -> float:
    """d(x) = ρ·cos φ."""
    return radius(table, x.arc_id) * math.cos(x.phi)


def _polar(table: LemonTable, x: PhasePoint) -> float:
    """Polar angle of the reflection point about its own circle's center, shifted so the arc is [−half, half]."""
    if x.arc_id == ArcId.UNIT:
        return x.s - table.half_angle_small
    return (x.s - table.len_gamma1) / table.R - table.half_angle_big


def _same_arc_target(table: LemonTable, x: PhasePoint) -> Tuple[float, float]:
    """Shifted polar angle of the next hit on x's own circle, and its arclength distance to the nearest corner."""
    if x.arc_id == ArcId.UNIT:
        half, rho = table.half_angle_small, 1.0
    else:
        half, rho = table.half_angle_big, table.R
    # a chord advances the polar angle by π − 2φ on either circle
    target = _wrap(_polar(table, x) + math.pi - 2.0 * x.phi)
    return target, rho * (half - abs(target))


def _arc_s(table: LemonTable, arc_id: ArcId, shifted: float) -> float:
    if arc_id == ArcId.UNIT:
        return shifted + table.half_angle_small
    return table.len_gamma1 + table.R * (shifted + table.half_angle_big)


def billiard_step(table: LemonTable, x: PhasePoint,
                  tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, CollisionEvent]:
    """Advance one collision.

    Args:
        table: Lemon table
        x: Post-reflection state
        tol: Tolerances (defaults to the billiard settings)

    Returns:
        Tuple (x', event) with event describing the flight from x to x'

    Raises:
        StepError: kind 'tangential' for |φ| > π/2 − tangential_tol,
            kind 'corner_hit' when the flight ends within corner_tol of A or B
    """
    if tol is None:
        tol = tolerances()

    if HALF_PI - abs(x.phi) < tol.tangential:
        raise StepError("tangential", HALF_PI - abs(x.phi), x)

    rho = radius(table, x.arc_id)
    d = rho * math.cos(x.phi)

    target, dist = _same_arc_target(table, x)
    if abs(dist) < tol.corner:
        raise StepError("corner_hit", abs(dist), x)
    if dist > 0:
        near = dist < tol.warn
        if near:
            logger.warning("Near-singular flight: %.3e from a corner at %s", dist, x)
        x_next = PhasePoint(x.arc_id, _arc_s(table, x.arc_id, target), x.phi)
        return x_next, CollisionEvent(x, 2.0 * d, d, -2.0 / d, near)

    return _cross_step(table, x, d, tol)


def _cross_step(table: LemonTable, x: PhasePoint, d: float,
                tol: Tolerances) -> Tuple[PhasePoint, CollisionEvent]:
    """Flight from one arc to the other."""
    frame = arc_point(table, x.s)
    px, py = frame.position
    nx, ny = frame.inward_normal
    tx, ty = frame.tangent
    c_phi, s_phi = math.cos(x.phi), math.sin(x.phi)
    vx, vy = c_phi * nx + s_phi * tx, c_phi * ny + s_phi * ty

    if x.arc_id == ArcId.UNIT:
        # |p − C|² − R² = −2b(cos θ − cos α), written as a product
        theta = _polar(table, x)
        alpha = table.half_angle_small
        c = 4.0 * table.b * math.sin(0.5 * (theta + alpha)) * math.sin(0.5 * (theta - alpha))
        cx, cy = table.center_big
        target_arc = ArcId.BIG
    else:
        # |p|² − 1 = 2bR(cos ψ − cos ψ_A) with ψ = π + δ
        delta = _polar(table, x)
        beta = table.half_angle_big
        c = -4.0 * table.b * table.R * math.sin(0.5 * (beta + delta)) * math.sin(0.5 * (beta - delta))
        cx, cy = table.center_small
        target_arc = ArcId.UNIT
    c = min(c, 0.0)

    h = (px - cx) * vx + (py - cy) * vy
    root = math.sqrt(h * h - c)
    if h <= 0:
        t = root - h
    else:
        t = -c / (h + root) if root + h > 0 else 0.0

    if not t > 0:
        raise StepError("corner_hit", 0.0, x)

    qx, qy = px + t * vx, py + t * vy
    if target_arc == ArcId.UNIT:
        shifted = math.atan2(qy, qx)
        dist = table.half_angle_small - abs(shifted)
        n2x, n2y = -qx, -qy
        norm = math.hypot(n2x, n2y)
    else:
        shifted = math.atan2(-qy, table.b - qx)
        dist = table.R * (table.half_angle_big - abs(shifted))
        n2x, n2y = table.b - qx, -qy
        norm = math.hypot(n2x, n2y)
    if dist < tol.corner:
        raise StepError("corner_hit", abs(dist), x)

    n2x, n2y = n2x / norm, n2y / norm
    t2x, t2y = n2y, -n2x
    phi_new = math.atan2(vx * t2x + vy * t2y, -(vx * n2x + vy * n2y))

    near = dist < tol.warn
    if near:
        logger.warning("Near-singular flight: %.3e from a corner at %s", dist, x)
    x_next = PhasePoint(target_arc, _arc_s(table, target_arc, shifted), phi_new)
    return x_next, CollisionEvent(x, t, d, -2.0 / d, near)


def time_reverse(x: PhasePoint) -> PhasePoint:
    """Φ(s, φ) = (s, −φ)."""
    return PhasePoint(x.arc_id, x.s, -x.phi)


def backward_step(table: LemonTable, x: PhasePoint,
                  tol: Optional[Tolerances] = None) -> PhasePoint:
    """F⁻¹x = Φ F Φ x."""
    y, _ = billiard_step(table, time_reverse(x), tol)
    return time_reverse(y)


def matrix_entries(table: LemonTable, x: PhasePoint, x_next: PhasePoint,
                    tau: float) -> Tuple[float, float, float, float]:
    """Entries of D_xF in (s, φ) coordinates for a flight of length tau."""
    k0 = -1.0 / radius(table, x.arc_id)
    k1 = -1.0 / radius(table, x_next.arc_id)
    c0, c1 = math.cos(x.phi), math.cos(x_next.phi)
    f = -1.0 / c1
    return (
        f * (tau * k0 + c0),
        f * tau,
        f * (tau * k0 * k1 + k0 * c1 + k1 * c0),
        f * (tau * k1 + c1),
    )


def tangent_matrix(table: LemonTable, x: PhasePoint,
                   tol: Optional[Tolerances] = None) -> np.ndarray:
    """Analytic derivative D_xF as a 2×2 array."""
    x_next, event = billiard_step(table, x, tol)
    a, b, c, d = matrix_entries(table, x, x_next, event.tau)
    return np.array([[a, b], [c, d]])


def tangent_step(table: LemonTable, x: PhasePoint, v: Sequence[float],
                 tol: Optional[Tolerances] = None) -> Tuple[float, float]:
    """Push a tangent vector (ds, dφ) through one collision."""
    x_next, event = billiard_step(table, x, tol)
    a, b, c, d = matrix_entries(table, x, x_next, event.tau)
    return a * v[0] + b * v[1], c * v[0] + d * v[1]


def finite_difference_matrix(table: LemonTable, x: PhasePoint, h: float = 1e-6,
                             tol: Optional[Tolerances] = None) -> np.ndarray:
    """Central-difference estimate of D_xF."""
    base, _ = billiard_step(table, x, tol)
    columns = []
    for ds, dphi in ((h, 0.0), (0.0, h)):
        plus, _ = billiard_step(table, PhasePoint(x.arc_id, x.s + ds, x.phi + dphi), tol)
        minus, _ = billiard_step(table, PhasePoint(x.arc_id, x.s - ds, x.phi - dphi), tol)
        d_s = plus.s - minus.s
        # both images sit near base.s; undo a wrap through s = 0
        if d_s > table.len_gamma / 2:
            d_s -= table.len_gamma
        elif d_s < -table.len_gamma / 2:
            d_s += table.len_gamma
        columns.append((d_s / (2 * h), (plus.phi - minus.phi) / (2 * h)))
    return np.array([[columns[0][0], columns[1][0]], [columns[0][1], columns[1][1]]])


def wavefront_curvature(table: LemonTable, x: PhasePoint, v: Sequence[float]) -> float:
    """Pre-reflection curvature B of the beam spanned by v = (ds, dφ) at x."""
    ds, dphi = v
    rho = radius(table, x.arc_id)
    if ds == 0:
        return math.inf
    return (dphi / ds + 1.0 / rho) / math.cos(x.phi)


def tangent_vector(table: LemonTable, x: PhasePoint, B: float) -> Tuple[float, float]:
    """Tangent vector at x whose pre-reflection curvature is B (inverse of wavefront_curvature)."""
    if math.isinf(B):
        return 0.0, 1.0
    rho = radius(table, x.arc_id)
    return 1.0, B * math.cos(x.phi) - 1.0 / rho


def eta(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
        tol: Optional[Tolerances] = None) -> Tuple[int, bool]:
    """Number of further reflections on x's arc before the orbit switches arcs.

    Args:
        table: Lemon table
        x: Post-reflection state
        cap: Iteration cap (defaults to induced.eta_cap)

    Returns:
        Tuple (n, exceeded); exceeded is True when the run is longer than cap

    Raises:
        StepError: If the run ends at a corner or x is tangential
    """
    if cap is None:
        cap = config.get('induced', 'eta_cap', 1000000)
    if tol is None:
        tol = tolerances()
    if HALF_PI - abs(x.phi) < tol.tangential:
        raise StepError("tangential", HALF_PI - abs(x.phi), x)

    if x.arc_id == ArcId.UNIT:
        half, rho = table.half_angle_small, 1.0
    else:
        half, rho = table.half_angle_big, table.R
    step = math.pi - 2.0 * x.phi
    angle = _polar(table, x)
    for n in range(cap + 1):
        angle = _wrap(angle + step)
        dist = rho * (half - abs(angle))
        if abs(dist) < tol.corner:
            raise StepError("corner_hit", abs(dist), x)
        if dist < 0:
            return n, False
    return cap, True


def advance(table: LemonTable, x: PhasePoint, k: int,
            tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, List[CollisionEvent]]:
    """F^k x together with the k collision events."""
    events = []
    for _ in range(k):
        x, event = billiard_step(table, x, tol)
        events.append(event)
    return x, events


def same_arc_jump(table: LemonTable, x: PhasePoint, k: int) -> PhasePoint:
    """F^k x for k steps known to stay on x's arc, in closed form."""
    angle = _wrap(_polar(table, x) + k * (math.pi - 2.0 * x.phi))
    return PhasePoint(x.arc_id, _arc_s(table, x.arc_id, angle), x.phi)


def iterate(table: LemonTable, x: PhasePoint, n: int,
            tol: Optional[Tolerances] = None
            ) -> Tuple[List[PhasePoint], List[CollisionEvent], Optional[StepError]]:
    """Run n collisions, stopping early on a singular step.

    Returns:
        Tuple (states, events, error); states has one more entry than events
    """
    states, events = [x], []
    for _ in range(n):
        try:
            x, event = billiard_step(table, x, tol)
        except StepError as e:
            logger.debug("Orbit stopped after %d steps: %s", len(events), e)
            return states, events, e
        states.append(x)
        events.append(event)
    return states, events, None


def orbit_frame(table: LemonTable, x: PhasePoint, n: int) -> pd.DataFrame:
    """Orbit dump with columns step, arcId, s, phi, tau, d."""
    _, events, _ = iterate(table, x, n)
    rows = [
        {
            'step': k,
            'arcId': e.point.arc_id.value,
            's': e.point.s,
            'phi': e.point.phi,
            'tau': e.tau,
            'd': e.d,
        }
        for k, e in enumerate(events)
    ]
    return pd.DataFrame(rows, columns=['step', 'arcId', 's', 'phi', 'tau', 'd'])


def sample_phase_points(table: LemonTable, n: int, rng: np.random.Generator,
                        tol: Optional[Tolerances] = None) -> List[PhasePoint]:
    """Draw n points from the invariant measure dμ ∝ cos φ ds dφ.

    Points within corner_tol of a corner or tangential_tol of |φ| = π/2 are redrawn.
    """
    if tol is None:
        tol = tolerances()
    points: List[PhasePoint] = []
    while len(points) < n:
        need = n - len(points)
        s_vals = rng.uniform(0.0, table.len_gamma, need)
        phi_vals = np.arcsin(2.0 * rng.uniform(0.0, 1.0, need) - 1.0)
        for s, phi in zip(s_vals, phi_vals):
            s, phi = float(s), float(phi)
            if HALF_PI - abs(phi) < tol.tangential:
                continue
            if min(s, abs(s - table.len_gamma1), table.len_gamma - s) < tol.corner:
                continue
            points.append(phase_point(table, s, phi))
    return points


def position(table: LemonTable, x: PhasePoint) -> Tuple[float, float]:
    """Cartesian reflection point of a state."""
    return arc_point(table, x.s).position
