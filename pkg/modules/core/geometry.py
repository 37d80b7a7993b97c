"""Geometry - Asymmetric lemon table Q(b,R) = D1 ∩ D_R with exact corner and arc data.

The small disk D1 has radius 1 and sits at the origin; the big disk D_R sits
at (b, 0). The boundary is traversed counterclockwise from corner A (the lower
corner) along the unit arc Γ₁ to corner B and back along the big arc Γ_R.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, NamedTuple, Optional, Tuple

from modules.core.config_manager import config

logger = logging.getLogger(__name__)

Point = Tuple[float, float]


class ArcId(str, Enum):
    """Boundary component of the table."""
    UNIT = "Unit"
    BIG = "Big"


class DegenerateTableError(ValueError):
    """Raised when the two disks do not form a two-corner table."""

    def __init__(self, kind: str, b: float, R: float):
        self.kind = kind
        self.b = b
        self.R = R
        if kind == "full":
            msg = f"Degenerate table (full disk D1): b={b} <= R-1={R - 1}"
        else:
            msg = f"Degenerate table (empty intersection): b={b} >= R+1={R + 1}"
        super().__init__(msg)


@dataclass(frozen=True)
class LemonTable:
    """Immutable two-arc table data."""
    b: float
    R: float
    center_small: Point
    center_big: Point
    corner_a: Point
    corner_b: Point
    chord_ab: float
    half_angle_small: float
    half_angle_big: float
    len_gamma1: float
    len_gamma_r: float
    len_gamma: float

    @property
    def major_arc(self) -> bool:
        return is_major_arc(self)

    def to_dict(self) -> Dict:
        """JSON-ready summary of the table."""
        return {
            'b': self.b,
            'R': self.R,
            'chordAB': self.chord_ab,
            'lenGamma1': self.len_gamma1,
            'lenGammaR': self.len_gamma_r,
            'cornerA': list(self.corner_a),
            'cornerB': list(self.corner_b),
            'majorArc': self.major_arc,
        }


class ArcPoint(NamedTuple):
    position: Point
    tangent: Point
    inward_normal: Point
    curvature: float
    arc_id: ArcId


def build_table(b: float, R: float) -> LemonTable:
    """Build Q(b,R).

    Args:
        b: Distance between the disk centers
        R: Radius of the big disk (> 1)

    Returns:
        LemonTable with all derived fields

    Raises:
        ValueError: If R <= 1
        DegenerateTableError: If b <= R-1 or b >= R+1
    """
    if not R > 1:
        raise ValueError(f"R must be > 1, got {R}")
    if b <= R - 1:
        raise DegenerateTableError("full", b, R)
    if b >= R + 1:
        raise DegenerateTableError("empty", b, R)

    x_c = (b * b + 1.0 - R * R) / (2.0 * b)
    y_c = math.sqrt(max(0.0, (1.0 - x_c) * (1.0 + x_c)))

    alpha = math.atan2(y_c, x_c)
    beta = math.atan2(y_c, b - x_c)
    len1 = 2.0 * alpha
    len_r = 2.0 * R * beta

    table = LemonTable(
        b=float(b),
        R=float(R),
        center_small=(0.0, 0.0),
        center_big=(float(b), 0.0),
        corner_a=(x_c, -y_c),
        corner_b=(x_c, y_c),
        chord_ab=2.0 * y_c,
        half_angle_small=alpha,
        half_angle_big=beta,
        len_gamma1=len1,
        len_gamma_r=len_r,
        len_gamma=len1 + len_r,
    )
    if not corners_resolved(table):
        logger.warning("Corner residual %.3e exceeds tolerance for b=%s R=%s",
                       corner_residuals(table), b, R)
    logger.debug("Built table b=%s R=%s chord=%.6f", b, R, table.chord_ab)
    return table


def table_from_chord(chord_ab: float, R: float) -> LemonTable:
    """Build the table whose corners are a given distance apart.

    Args:
        chord_ab: Corner distance |AB|, in (0, 2)
        R: Radius of the big disk (> 1)

    Returns:
        LemonTable with b = √(R²−c²/4) − √(1−c²/4)
    """
    if not 0 < chord_ab < 2:
        raise ValueError(f"chord must lie in (0, 2), got {chord_ab}")
    if not R > 1:
        raise ValueError(f"R must be > 1, got {R}")
    q = chord_ab * chord_ab / 4.0
    b = math.sqrt(R * R - q) - math.sqrt(1.0 - q)
    return build_table(b, R)


def chord_length(table: LemonTable) -> float:
    """Distance |AB| between the corners."""
    ax, ay = table.corner_a
    bx, by = table.corner_b
    return math.hypot(bx - ax, by - ay)


def corner_residuals(table: LemonTable) -> float:
    """Largest deviation of a corner from either circle."""
    residuals = []
    for x, y in (table.corner_a, table.corner_b):
        residuals.append(abs(math.hypot(x, y) - 1.0))
        residuals.append(abs(math.hypot(x - table.b, y) - table.R))
    return max(residuals)


def corners_resolved(table: LemonTable, tol: Optional[float] = None) -> bool:
    """Whether both corners lie on both circles within geometry.residual_tol."""
    if tol is None:
        tol = config.get('geometry', 'residual_tol', 1e-12)
    return corner_residuals(table) <= tol


def arc_point(table: LemonTable, s: float) -> ArcPoint:
    """Boundary point, frame and curvature at arclength s (taken mod |Γ|)."""
    s = math.fmod(s, table.len_gamma)
    if s < 0:
        s += table.len_gamma

    if s < table.len_gamma1:
        theta = -table.half_angle_small + s
        c, sn = math.cos(theta), math.sin(theta)
        return ArcPoint((c, sn), (-sn, c), (-c, -sn), 1.0, ArcId.UNIT)

    psi = math.pi - table.half_angle_big + (s - table.len_gamma1) / table.R
    c, sn = math.cos(psi), math.sin(psi)
    return ArcPoint(
        (table.b + table.R * c, table.R * sn), (-sn, c), (-c, -sn), 1.0 / table.R, ArcId.BIG
    )


def arc_locate(table: LemonTable, point: Point, arc_id: ArcId) -> float:
    """Arclength s of a point lying on the given arc (inverse of arc_point)."""
    x, y = point
    if arc_id == ArcId.UNIT:
        s = math.atan2(y, x) + table.half_angle_small
        return min(max(s, 0.0), table.len_gamma1)
    delta = math.atan2(-y, table.b - x)
    s = table.len_gamma1 + table.R * (delta + table.half_angle_big)
    return min(max(s, table.len_gamma1), math.nextafter(table.len_gamma, 0.0))


def contains(table: LemonTable, point: Point, slack: float = 0.0) -> bool:
    """Whether a point lies in the closed table, up to slack."""
    x, y = point
    return (math.hypot(x, y) <= 1.0 + slack
            and math.hypot(x - table.b, y) <= table.R + slack)


def is_major_arc(table: LemonTable) -> bool:
    """Γ₁ spans more than a half circle."""
    return table.half_angle_small > math.pi / 2


def major_arc_by_chord_side(table: LemonTable) -> bool:
    """Side-of-chord test: the small center and the midpoint of Γ₁ lie on the same side of AB."""
    ax, ay = table.corner_a
    bx, by = table.corner_b
    mx, my = arc_point(table, table.len_gamma1 / 2).position

    def side(px: float, py: float) -> float:
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)

    return side(0.0, 0.0) * side(mx, my) > 0


def center_big_outside(table: LemonTable) -> bool:
    """The center of D_R lies outside the table."""
    return not contains(table, table.center_big)


def corner_angle(table: LemonTable) -> float:
    """Angle AOB subtended by the corners at the small center."""
    return 2.0 * math.asin(min(1.0, table.chord_ab / 2.0))


def n_star(table: LemonTable) -> int:
    """⌊2π/∠AOB⌋, the smallest sliding-cell index reachable from Γ_R in the large-R regime."""
    return int(math.floor(2.0 * math.pi / corner_angle(table)))


def apex_small(table: LemonTable) -> Point:
    """Point of Γ₁ on the center line, (1, 0)."""
    return (1.0, 0.0)


def apex_big(table: LemonTable) -> Point:
    """Point of Γ_R on the center line, (b − R, 0)."""
    return (table.b - table.R, 0.0)
