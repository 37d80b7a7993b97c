"""Continued Fractions - Projective arithmetic on ℝ∪{∞} and wavefront curvature transport.

A ProjValue is a plain float where math.inf stands for the single unsigned
point at infinity. [a1, ..., an] denotes 1/(a1 + 1/(a2 + ... + 1/an)).
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from modules.core.config_manager import config

INF = math.inf
ProjValue = float


class NearSingularError(ArithmeticError):
    """Raised when a reduction needs a denominator that is numerically zero."""


class DegenerateTripleError(ValueError):
    """Raised when cyclic order is asked for coincident points."""


@dataclass(frozen=True)
class CFrac:
    """Finite continued fraction [a0; a1, ..., an] with optional head a0."""
    entries: Tuple[float, ...] = field(default_factory=tuple)
    head: Optional[float] = None


def normalize(v: ProjValue) -> ProjValue:
    """Map −∞ and +∞ to the single point at infinity."""
    return INF if math.isinf(v) else float(v)


def proj_inv(v: ProjValue) -> ProjValue:
    if v == 0:
        return INF
    if math.isinf(v):
        return 0.0
    return 1.0 / v


def proj_add(a: ProjValue, b: ProjValue) -> ProjValue:
    if math.isinf(a) or math.isinf(b):
        return INF
    return a + b


def proj_neg(v: ProjValue) -> ProjValue:
    return INF if math.isinf(v) else -v


def eval_cf(cf: Union[CFrac, Sequence[float]]) -> ProjValue:
    """Evaluate a finite continued fraction by backward recursion.

    Args:
        cf: CFrac or plain entry list (a1, ..., an)

    Returns:
        Projective value; an empty fraction evaluates to 0
    """
    if isinstance(cf, CFrac):
        entries, head = cf.entries, cf.head
    else:
        entries, head = cf, None

    t = 0.0
    for a in reversed(entries):
        t = proj_inv(proj_add(a, t))
    if head is not None:
        t = proj_add(head, t)
    return normalize(t)


def abc_reduce(a: float, b: float, c: float,
               tol: Optional[float] = None) -> Tuple[float, float, float]:
    """Collapse three consecutive entries: [.., x, a, b, c, y, ..] = [.., x+A, B, C+y, ..].

    Args:
        a, b, c: Consecutive entries
        tol: Near-singular guard on B (defaults to cfrac.near_singular)

    Returns:
        Tuple (A, B, C) with B = a+c+abc, A = bc/B, C = ab/B

    Raises:
        NearSingularError: If |B| < tol
    """
    if tol is None:
        tol = config.get('cfrac', 'near_singular', 1e-12)
    B = a + c + a * b * c
    if abs(B) < tol:
        raise NearSingularError(f"|a+c+abc| = {abs(B):.3e} below {tol:.1e}")
    return b * c / B, B, a * b / B


def curvature_step(B: ProjValue, tau: float, refl: float) -> ProjValue:
    """Transport a pre-reflection curvature through one reflection and one flight."""
    return normalize(proj_inv(tau + proj_inv(proj_add(refl, B))))


def transport_chain(B: ProjValue, taus: Sequence[float], refls: Sequence[float]) -> ProjValue:
    """Apply curvature_step collision by collision (refls[k] then flight taus[k])."""
    for tau, refl in zip(taus, refls):
        B = curvature_step(B, tau, refl)
    return B


def ffn_entries(B: ProjValue, taus: Sequence[float], refls: Sequence[float]) -> List[float]:
    """Flat chain [τ_{n−1}, R_{n−1}, ..., τ₀, R₀+B] equivalent to transport_chain."""
    entries: List[float] = []
    for k in range(len(taus) - 1, -1, -1):
        entries.append(taus[k])
        entries.append(proj_add(refls[k], B) if k == 0 else refls[k])
    return entries


def block_reduce_same_arc(m: int, d: float, tau_exit: float, B: ProjValue) -> ProjValue:
    """Transport through m+1 reflections on one arc followed by an exit flight.

    The m inner flights have length 2d; the chain collapses to
    [τ_exit, R/2, −2md, R/2 + B] with R = −2/d.
    """
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    if not d > 0:
        raise ValueError(f"d must be > 0, got {d}")
    half_r = -1.0 / d
    return eval_cf([tau_exit, half_r, -2.0 * m * d, proj_add(half_r, B)])


def convergents(entries: Iterable[float], rescale: float = 1e150) -> Iterator[ProjValue]:
    """Yield [a1], [a1,a2], [a1,a2,a3], ... via the forward convergent recurrence."""
    p_prev, p = 1.0, 0.0
    q_prev, q = 0.0, 1.0
    for a in entries:
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
        scale = max(abs(p), abs(q))
        if scale > rescale:
            p_prev, p, q_prev, q = p_prev / scale, p / scale, q_prev / scale, q / scale
        yield INF if q == 0 else normalize(p / q)


def to_circle(v: ProjValue) -> float:
    """Angle chart ℝ∪{∞} → (−π, π], v ↦ 2·atan(v), ∞ ↦ π."""
    return math.pi if math.isinf(v) else 2.0 * math.atan(v)


def circle_distance(a: ProjValue, b: ProjValue) -> float:
    """Arc distance between two values on the projective circle."""
    diff = abs(to_circle(a) - to_circle(b)) % (2.0 * math.pi)
    return min(diff, 2.0 * math.pi - diff)


def proj_close(a: ProjValue, b: ProjValue, rel: Optional[float] = None,
               threshold: Optional[float] = None) -> bool:
    """Compare two values: relative error scaled by max(1,|v|), on the circle beyond threshold."""
    if rel is None:
        rel = config.get('cfrac', 'compare_rel', 1e-10)
    if threshold is None:
        threshold = config.get('cfrac', 'circle_threshold', 1e12)
    if abs(a) > threshold or abs(b) > threshold:
        return circle_distance(a, b) <= rel
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


def cyclic_order(a: ProjValue, b: ProjValue, c: ProjValue) -> bool:
    """Whether b lies on the counterclockwise arc from a to c of ℝ∪{∞} ≅ S¹.

    Raises:
        DegenerateTripleError: If two arguments coincide
    """
    a, b, c = normalize(a), normalize(b), normalize(c)
    if a == b or b == c or a == c:
        raise DegenerateTripleError(f"coincident points in ({a}, {b}, {c})")
    ta, tb, tc = to_circle(a), to_circle(b), to_circle(c)
    two_pi = 2.0 * math.pi
    return (tb - ta) % two_pi < (tc - ta) % two_pi
