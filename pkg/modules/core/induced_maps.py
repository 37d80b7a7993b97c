"""Induced Maps - Sliding-cell decomposition and the two induced return maps.

A return of the induced map on M consists of three runs: i0 more reflections
on Γ₁ from x, a flight τ0 to Γ_R, i1 more reflections there, a flight τ1 back
to Γ₁, and i2 reflections into the middle of the new Γ₁ run.
"""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from modules.core.billiard_map import (
    PhasePoint, StepError, Tolerances, billiard_step, eta, half_chord,
    same_arc_jump, sample_phase_points, time_reverse, tolerances,
)
from modules.core.cfrac import (
    ProjValue, circle_distance, convergents, curvature_step, eval_cf, proj_neg,
    transport_chain,
)
from modules.core.config_manager import config
from modules.core.geometry import ArcId, LemonTable

logger = logging.getLogger(__name__)


class UnresolvedCapError(RuntimeError):
    """Raised when a same-arc run is longer than the iteration cap (candidate member of N)."""

    def __init__(self, point: PhasePoint, cap: int):
        self.point = point
        self.cap = cap
        super().__init__(f"Same-arc run longer than {cap} at {point}")


class BlockError(RuntimeError):
    """Raised when a singular collision interrupts a return block."""

    def __init__(self, cause: StepError, partial: Dict):
        self.cause = cause
        self.partial = partial
        super().__init__(f"Block interrupted at stage {partial.get('stage')}: {cause}")


class CellIndex(NamedTuple):
    n: int
    phase: int


@dataclass(frozen=True)
class ReturnBlockHat:
    """Counts and lengths of one return of the first-entry map."""
    j0: int
    j1: int
    tau0: float
    tau1: float
    d0: float
    d1: float

    @property
    def hat_d0(self) -> float:
        return self.d0 / (self.j0 + 1)

    @property
    def hat_d1(self) -> float:
        return self.d1 / (self.j1 + 1)

    @property
    def hat_r0(self) -> float:
        return -2.0 / self.hat_d0

    @property
    def hat_r1(self) -> float:
        return -2.0 / self.hat_d1

    @property
    def hat_tau0(self) -> float:
        return self.tau0 - self.j0 * self.hat_d0 - self.j1 * self.hat_d1


@dataclass(frozen=True)
class ReturnBlock:
    """Counts and lengths of one return of the middle-sliding map on M.

    The trailing fields locate the excursion: s of the last Γ₁ reflection
    before leaving, s of the re-entry point, its cell index and the total
    length travelled from leaving Γ₁ to re-entry.
    """
    i0: int
    i1: int
    i2: int
    tau0: float
    tau1: float
    d0: float
    d1: float
    d2: float
    s_exit: float = math.nan
    s_entry: float = math.nan
    n_entry: int = -1
    excursion: float = math.nan

    @property
    def hat_d0(self) -> float:
        return self.d0 / (self.i0 + 1)

    @property
    def hat_d1(self) -> float:
        return self.d1 / (self.i1 + 1)

    @property
    def hat_r0(self) -> float:
        return -2.0 / self.hat_d0

    @property
    def hat_r1(self) -> float:
        return -2.0 / self.hat_d1

    @property
    def hat_tau0(self) -> float:
        return self.tau0 - self.i0 * self.hat_d0 - self.i1 * self.hat_d1

    @property
    def bar_tau1(self) -> float:
        return self.tau1 - self.i1 * self.hat_d1 - self.d2

    @property
    def collisions(self) -> int:
        return self.i0 + self.i1 + self.i2 + 2

    @property
    def region(self) -> str:
        if self.i1 >= 1:
            return "X0"
        if self.i2 >= 1:
            return "X1"
        return "X2"

    def to_dict(self) -> Dict:
        return asdict(self)


def _eta_or_raise(table: LemonTable, x: PhasePoint, cap: int, tol: Tolerances) -> int:
    n, exceeded = eta(table, x, cap, tol)
    if exceeded:
        raise UnresolvedCapError(x, cap)
    return n


def classify_cell(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
                  tol: Optional[Tolerances] = None) -> CellIndex:
    """Locate a Γ₁ state in its sliding run: the run has n+1 reflections and x is the phase-th.

    Raises:
        ValueError: If x is not on Γ₁
        UnresolvedCapError: If either direction of the run exceeds the cap
    """
    if x.arc_id != ArcId.UNIT:
        raise ValueError(f"classify_cell needs a point on Γ₁, got {x.arc_id.value}")
    if cap is None:
        cap = config.get('induced', 'eta_cap', 1000000)
    if tol is None:
        tol = tolerances()
    phase = _eta_or_raise(table, time_reverse(x), cap, tol)
    ahead = _eta_or_raise(table, x, cap, tol)
    return CellIndex(phase + ahead, phase)


def middle_phase(n: int) -> int:
    """Phase ⌈n/2⌉ of the middle reflection of an M_n run."""
    return (n + 1) // 2


def in_M(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
         tol: Optional[Tolerances] = None) -> bool:
    """Whether x is the middle sliding reflection of its Γ₁ run."""
    if x.arc_id != ArcId.UNIT:
        return False
    cell = classify_cell(table, x, cap, tol)
    return cell.phase == middle_phase(cell.n)


def leave_arc(table: LemonTable, x: PhasePoint, cap: int, tol: Tolerances
              ) -> Tuple[int, PhasePoint, float, PhasePoint]:
    """Slide along x's arc and take the flight off it: (count, last state on arc, flight, landing)."""
    k = _eta_or_raise(table, x, cap, tol)
    last = same_arc_jump(table, x, k)
    landing, event = billiard_step(table, last, tol)
    return k, last, event.tau, landing


def run_block(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
              tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, ReturnBlockHat]:
    """Two consecutive arc runs from any state, landing on the arc x started on.

    Returns:
        Tuple (landing state, block); d0 and d1 are ρ·cos φ on the respective arcs
    """
    if cap is None:
        cap = config.get('induced', 'eta_cap', 1000000)
    if tol is None:
        tol = tolerances()
    partial: Dict = {'stage': 'first_run', 'start': x}
    try:
        j0, _, tau0, x1 = leave_arc(table, x, cap, tol)
        partial.update(stage='second_run', j0=j0, tau0=tau0)
        j1, _, tau1, landing = leave_arc(table, x1, cap, tol)
    except StepError as e:
        raise BlockError(e, partial) from e
    block = ReturnBlockHat(j0, j1, tau0, tau1, half_chord(table, x), half_chord(table, x1))
    return landing, block


def hat_return(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
               tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, ReturnBlockHat]:
    """First-return map on the first-entry set: F̂x = F^{j0+j1+2}x."""
    if x.arc_id != ArcId.UNIT:
        raise ValueError("hat_return needs a first-entry point on Γ₁")
    return run_block(table, x, cap, tol)


def return_map(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
               tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, ReturnBlock]:
    """Return map on M: Fx = F^{i0+i1+i2+2}x.

    Args:
        table: Lemon table
        x: Middle sliding reflection on Γ₁

    Returns:
        Tuple (Fx, block)

    Raises:
        BlockError: If a collision in the block is singular
        UnresolvedCapError: If a run exceeds the cap
    """
    if x.arc_id != ArcId.UNIT:
        raise ValueError("return_map needs a point of M on Γ₁")
    if cap is None:
        cap = config.get('induced', 'eta_cap', 1000000)
    if tol is None:
        tol = tolerances()

    partial: Dict = {'stage': 'gamma1_exit', 'start': x}
    try:
        i0, last, tau0, x1 = leave_arc(table, x, cap, tol)
        partial.update(stage='gamma_r', i0=i0, tau0=tau0)
        i1, _, tau1, x2 = leave_arc(table, x1, cap, tol)
        partial.update(stage='reentry', i1=i1, tau1=tau1)
        n2 = _eta_or_raise(table, x2, cap, tol)
    except StepError as e:
        raise BlockError(e, partial) from e

    i2 = middle_phase(n2)
    d1 = half_chord(table, x1)
    block = ReturnBlock(
        i0=i0, i1=i1, i2=i2,
        tau0=tau0, tau1=tau1,
        d0=math.cos(x.phi), d1=d1, d2=math.cos(x2.phi),
        s_exit=last.s, s_entry=x2.s, n_entry=n2,
        excursion=tau0 + tau1 + 2.0 * i1 * d1,
    )
    return same_arc_jump(table, x2, i2), block


def next_in_M(table: LemonTable, x: PhasePoint, cap: Optional[int] = None,
              tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, int]:
    """First point of the forward orbit of x (x included) lying in M, and the collisions taken."""
    if cap is None:
        cap = config.get('induced', 'eta_cap', 1000000)
    if tol is None:
        tol = tolerances()
    steps = 0
    if x.arc_id == ArcId.UNIT:
        cell = classify_cell(table, x, cap, tol)
        mid = middle_phase(cell.n)
        if cell.phase <= mid:
            return same_arc_jump(table, x, mid - cell.phase), mid - cell.phase
    while True:
        k, _, _, x = leave_arc(table, x, cap, tol)
        steps += k + 1
        if x.arc_id == ArcId.UNIT:
            mid = middle_phase(_eta_or_raise(table, x, cap, tol))
            return same_arc_jump(table, x, mid), steps + mid


def sample_M_points(table: LemonTable, n: int, rng: np.random.Generator,
                    cap: Optional[int] = None, max_draws: Optional[int] = None) -> List[PhasePoint]:
    """Draw n points from μ restricted to M by rejection sampling.

    Candidates whose run is singular or unresolved are skipped.
    """
    if max_draws is None:
        max_draws = 1000 * n + 10000
    tol = tolerances()
    points: List[PhasePoint] = []
    drawn = 0
    while len(points) < n and drawn < max_draws:
        batch = sample_phase_points(table, max(16, 4 * (n - len(points))), rng, tol)
        drawn += len(batch)
        for x in batch:
            try:
                if in_M(table, x, cap, tol):
                    points.append(x)
            except (StepError, UnresolvedCapError):
                continue
            if len(points) == n:
                break
    if len(points) < n:
        logger.warning("Rejection sampling found %d of %d M-points in %d draws", len(points), n, drawn)
    return points


def curvature_hat_return(B: ProjValue, block: ReturnBlockHat) -> ProjValue:
    """Reduced transport through a first-entry block: [τ1−j1ĥd1, ĥR1, ĥτ0, ĥR0, −j0ĥd0, B]."""
    return eval_cf([
        block.tau1 - block.j1 * block.hat_d1,
        block.hat_r1,
        block.hat_tau0,
        block.hat_r0,
        -block.j0 * block.hat_d0,
        B,
    ])


def curvature_return(B: ProjValue, block: ReturnBlock) -> ProjValue:
    """Reduced transport through a block of M: [d2, 2i2/d2, b̄τ1, ĥR1, ĥτ0, ĥR0, −i0ĥd0, B]."""
    return eval_cf([
        block.d2,
        2.0 * block.i2 / block.d2,
        block.bar_tau1,
        block.hat_r1,
        block.hat_tau0,
        block.hat_r0,
        -block.i0 * block.hat_d0,
        B,
    ])


def block_collisions(block: ReturnBlock) -> Tuple[List[float], List[float]]:
    """Per-collision flights and reflection parameters of a block, in time order."""
    r0, r1, r2 = -2.0 / block.d0, -2.0 / block.d1, -2.0 / block.d2
    taus = [2.0 * block.d0] * block.i0 + [block.tau0] + [2.0 * block.d1] * block.i1 + [block.tau1]
    refls = [r0] * (block.i0 + 1) + [r1] * (block.i1 + 1)
    taus += [2.0 * block.d2] * block.i2
    refls += [r2] * block.i2
    return taus, refls


def unreduced_return(B: ProjValue, block: ReturnBlock) -> ProjValue:
    """Collision-by-collision transport through a block of M."""
    taus, refls = block_collisions(block)
    return transport_chain(B, taus, refls)


def raw_transport(table: LemonTable, x: PhasePoint, count: int, B: ProjValue,
                  tol: Optional[Tolerances] = None) -> Tuple[PhasePoint, ProjValue]:
    """Iterate the billiard map count times and transport B along the actual events."""
    for _ in range(count):
        x, event = billiard_step(table, x, tol)
        B = curvature_step(B, event.tau, event.refl)
    return x, B


def backward_entries(table: LemonTable, x: PhasePoint, depth: int,
                     tol: Optional[Tolerances] = None) -> Iterable[float]:
    """Entries τ(x₋₁), R(x₋₁), τ(x₋₂), R(x₋₂), ... of the unstable curvature at x."""
    y = time_reverse(x)
    y, event = billiard_step(table, y, tol)
    for _ in range(depth):
        y_next, next_event = billiard_step(table, y, tol)
        yield event.tau
        yield next_event.refl
        y, event = y_next, next_event


def backward_cf(table: LemonTable, x: PhasePoint, depth: Optional[int] = None,
                tol: Optional[Tolerances] = None) -> Tuple[ProjValue, bool]:
    """Unstable pre-reflection curvature B^u(x) from the backward orbit.

    Truncations are compared after each collision; the result is converged when
    the last two differ by less than induced.converge_tol on the projective circle.

    Raises:
        StepError: If the backward orbit meets a singularity before depth
    """
    if depth is None:
        depth = config.get('induced', 'cf_depth', 2000)
    eps = config.get('induced', 'converge_tol', 1e-10)
    previous: Optional[float] = None
    value = math.nan
    converged = False
    for k, v in enumerate(convergents(backward_entries(table, x, depth, tol))):
        if k % 2 == 0:
            continue
        if previous is not None:
            converged = circle_distance(previous, v) < eps
        previous, value = v, v
    return value, converged


def stable_curvature(table: LemonTable, x: PhasePoint, depth: Optional[int] = None,
                     tol: Optional[Tolerances] = None) -> Tuple[ProjValue, bool]:
    """B^s(x) = −B^u(Φx)."""
    value, converged = backward_cf(table, time_reverse(x), depth, tol)
    return proj_neg(value), converged


def return_orbit(table: LemonTable, x: PhasePoint, n_returns: int,
                 cap: Optional[int] = None) -> Tuple[List[PhasePoint], List[ReturnBlock], Optional[Exception]]:
    """Iterate the return map, stopping early on a singular or unresolved block."""
    states, blocks = [x], []
    for _ in range(n_returns):
        try:
            x, block = return_map(table, x, cap)
        except (BlockError, UnresolvedCapError) as e:
            logger.debug("Return orbit stopped after %d returns: %s", len(blocks), e)
            return states, blocks, e
        states.append(x)
        blocks.append(block)
    return states, blocks, None


def cone_sequences(blocks: List[ReturnBlock]) -> Tuple[List[float], List[float]]:
    """Curvatures at the end of a block sequence of the p- and d-wavefronts started n blocks back.

    Entry n−1 of each list transports B = 0 (resp. 1/d0 of the starting block)
    through the last n blocks.
    """
    p_seq, d_seq = [], []
    for n in range(1, len(blocks) + 1):
        tail = blocks[len(blocks) - n:]
        bp, bd = 0.0, 1.0 / tail[0].d0
        for block in tail:
            bp = curvature_return(bp, block)
            bd = curvature_return(bd, block)
        p_seq.append(bp)
        d_seq.append(bd)
    return p_seq, d_seq


def return_time_statistics(blocks: List[ReturnBlock]) -> Dict[str, float]:
    """Mean return time and the fraction of collisions in M along a return orbit."""
    if not blocks:
        return {'returns': 0, 'collisions': 0, 'mean_return_time': math.nan, 'fraction_in_M': math.nan}
    collisions = sum(b.collisions for b in blocks)
    return {
        'returns': len(blocks),
        'collisions': collisions,
        'mean_return_time': collisions / len(blocks),
        'fraction_in_M': len(blocks) / collisions,
    }


def sampled_M_fraction(table: LemonTable, n: int, rng: np.random.Generator,
                       cap: Optional[int] = None) -> float:
    """Fraction of n μ-distributed phase points lying in M (estimates μ(M))."""
    tol = tolerances()
    hits = total = 0
    for x in sample_phase_points(table, n, rng, tol):
        try:
            hits += in_M(table, x, cap, tol)
            total += 1
        except (StepError, UnresolvedCapError):
            continue
    return hits / total if total else math.nan


def block_frame(blocks: Iterable[ReturnBlock]) -> pd.DataFrame:
    """Block dump with derived reduced quantities, one row per return."""
    rows = []
    for b in blocks:
        rows.append({
            'i0': b.i0, 'i1': b.i1, 'i2': b.i2,
            'tau0': b.tau0, 'tau1': b.tau1,
            'd0': b.d0, 'd1': b.d1, 'd2': b.d2,
            'hat_d0': b.hat_d0, 'hat_d1': b.hat_d1,
            'hat_R0': b.hat_r0, 'hat_R1': b.hat_r1,
            'hat_tau0': b.hat_tau0, 'bar_tau1': b.bar_tau1,
            'region': b.region,
        })
    columns = ['i0', 'i1', 'i2', 'tau0', 'tau1', 'd0', 'd1', 'd2',
               'hat_d0', 'hat_d1', 'hat_R0', 'hat_R1', 'hat_tau0', 'bar_tau1', 'region']
    return pd.DataFrame(rows, columns=columns)
