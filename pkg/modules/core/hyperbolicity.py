"""Hyperbolicity - Machine checks of the cone conditions on return blocks.

Every inequality is evaluated with its signed margin (positive = satisfied).
Margins smaller than hyperbolicity.near_tie relative to the compared values
mark the block as a near tie; such blocks are counted but left out of
equivalence statistics.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.core.billiard_map import PhasePoint, StepError, billiard_step, tangent_matrix
from modules.core.config_manager import config
from modules.core.geometry import ArcId, LemonTable, build_table, n_star, table_from_chord
from modules.core.induced_maps import (
    BlockError, ReturnBlock, UnresolvedCapError, curvature_return, return_map,
    sample_M_points,
)

logger = logging.getLogger(__name__)


class NearTieError(ArithmeticError):
    """Raised when a strict inequality is undecidable at the near-tie margin."""


class NoPassingRError(RuntimeError):
    """Raised when no radius of the grid passes every check."""

    def __init__(self, chord: float, evidence: pd.DataFrame):
        self.chord = chord
        self.evidence = evidence
        super().__init__(f"No grid radius passes for chord {chord}")


class _Margins:
    """Collects strict comparisons and remembers whether any was a near tie."""

    def __init__(self, eps: float):
        self.eps = eps
        self.near_tie = False

    def gt(self, lhs: float, rhs: float) -> Tuple[bool, float]:
        """lhs > rhs with margin lhs − rhs."""
        if not (math.isfinite(lhs) and math.isfinite(rhs)):
            self.near_tie = True
            return False, math.nan
        margin = lhs - rhs
        if abs(margin) < self.eps * max(1.0, abs(lhs), abs(rhs)):
            self.near_tie = True
        return margin > 0, margin

    def lt(self, lhs: float, rhs: float) -> Tuple[bool, float]:
        return self.gt(rhs, lhs)

    def nonzero(self, value: float) -> None:
        if not math.isfinite(value) or abs(value) < self.eps:
            self.near_tie = True


def _inv(x: float) -> float:
    return math.inf if x == 0 else 1.0 / x


@dataclass
class ConditionReport:
    """Assumptions, base and detailed cone conditions of one return block."""
    region: str
    A: Dict[str, Optional[bool]] = field(default_factory=dict)
    slack: Dict[str, float] = field(default_factory=dict)
    base: Dict[str, bool] = field(default_factory=dict)
    detailed: Dict[str, bool] = field(default_factory=dict)
    G0: float = math.nan
    G1: float = math.nan
    cone_ok: bool = False
    near_tie: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)


def check_A0(b: float, R: float) -> Tuple[bool, float]:
    """max{R−1, 1} < b < R, with the smaller of the two margins."""
    if not R > 1:
        raise ValueError(f"R must be > 1, got {R}")
    slack = min(b - max(R - 1.0, 1.0), R - b)
    return slack > 0, slack


def check_assumptions(block: ReturnBlock, report: Optional[ConditionReport] = None,
                      eps: Optional[float] = None) -> ConditionReport:
    """Evaluate the assumption of the block's region; the other two are marked None.

    Args:
        block: Return block
        report: Report to fill in (a new one is created if None)
        eps: Near-tie margin (defaults to hyperbolicity.near_tie)

    Returns:
        ConditionReport with A and slack filled in
    """
    if eps is None:
        eps = config.get('hyperbolicity', 'near_tie', 1e-12)
    if report is None:
        report = ConditionReport(region=block.region)
    m = _Margins(eps)

    i0, i1, i2 = block.i0, block.i1, block.i2
    d0, d1, d2 = block.d0, block.d1, block.d2
    p = 1.0 - 1.0 / (2.0 * (1 + i0))
    q = i1 / (1.0 + i1)
    report.A.update({'A1': None, 'A2': None, 'A3': None})

    if block.region == "X0":
        if i0 >= 1 and i2 >= 1:
            ok0, m0 = m.lt(block.tau0, p * d0 + q * d1)
            ok1, m1 = m.lt(block.tau1, (1.0 - 1.0 / (2.0 * i2)) * d2 + q * d1)
            report.A['A1'], report.slack['A1'] = ok0 and ok1, min(m0, m1)
        else:
            report.A['A1'], report.slack['A1'] = False, -math.inf
    elif block.region == "X1":
        ok0, m0 = m.lt(d0 / (1 + i0), d1)
        ok1, m1 = m.lt(block.tau0 + block.tau1, p * d0 + d1 + (1.0 - 1.0 / (2.0 * i2)) * d2)
        report.A['A2'], report.slack['A2'] = ok0 and ok1, min(m0, m1)
    else:
        margin = d1 / 2.0 - block.tau0
        if abs(margin) < eps * max(1.0, d1):
            m.near_tie = True
        report.A['A3'], report.slack['A3'] = margin >= 0, margin

    report.near_tie = report.near_tie or m.near_tie
    return report


def _base_pair(m: _Margins, G1: float, u: float, c: float, i2: int, d2: float
               ) -> Tuple[bool, bool, float]:
    """(D, F, f) for one wavefront: L = G1 + 1/(1/u − c), f = 1/L."""
    m.nonzero(u)
    Y = _inv(u) - c
    m.nonzero(Y)
    L = G1 + _inv(Y)
    m.nonzero(L)
    D, _ = m.gt(L, 0.0)
    F = False
    if i2 >= 1:
        F, _ = m.lt(L, -d2 / (2.0 * i2))
    return D, F, _inv(L)


def _detailed_triple(m: _Margins, G1: float, G1_shift: float, u: float, c: float,
                     i2: int) -> Dict[str, bool]:
    """(a)/(b)/(c) cases for one wavefront, D-family then F-family."""
    inv_u = _inv(u)
    inv_g1 = _inv(G1)
    pos_g1, _ = m.gt(G1, 0.0)
    out = {
        'a': pos_g1 and m.gt(inv_u, c)[0],
        'b': pos_g1 and m.lt(inv_u + inv_g1, c)[0],
        'c': (not pos_g1) and m.lt(inv_u + inv_g1, c)[0] and m.lt(c, inv_u)[0],
    }
    if i2 >= 1:
        inv_gs = _inv(G1_shift)
        neg_gs, _ = m.lt(G1_shift, 0.0)
        out.update({
            'Fa': neg_gs and m.lt(inv_u, c)[0],
            'Fb': neg_gs and m.gt(inv_u + inv_gs, c)[0],
            'Fc': (not neg_gs) and m.gt(inv_u + inv_gs, c)[0] and m.gt(c, inv_u)[0],
        })
    else:
        out.update({'Fa': False, 'Fb': False, 'Fc': False})
    return out


def check_conditions(block: ReturnBlock, report: Optional[ConditionReport] = None,
                     eps: Optional[float] = None) -> ConditionReport:
    """Base conditions, their detailed G0/G1 forms and the combined cone flag.

    The ordering criterion is f_p < f_d for f = [b̄τ1, ĥR1, u], which is the
    direction equivalent to B(DF V^p) < B(DF V^d).
    """
    if eps is None:
        eps = config.get('hyperbolicity', 'near_tie', 1e-12)
    if report is None:
        report = ConditionReport(region=block.region)
    m = _Margins(eps)

    i0, i1, i2 = block.i0, block.i1, block.i2
    d0, d1, d2 = block.d0, block.d1, block.d2
    q = i1 / (1.0 + i1)
    G0 = block.tau0 - d0 - q * d1
    G1 = block.tau1 - q * d1 - d2
    c = 2.0 * (1 + i1) / d1
    u_d = G0
    u_p = G0 + d0 / (2.0 * (1 + i0))

    D1, F1, f_d = _base_pair(m, G1, u_d, c, i2, d2)
    D2, F2, f_p = _base_pair(m, G1, u_p, c, i2, d2)
    check, _ = m.lt(f_p, f_d)
    paired = (D1 and D2) or (F1 and F2)
    P1 = paired and check
    P2 = D1 and F2
    report.base = {'D1': D1, 'F1': F1, 'D2': D2, 'F2': F2, 'check': check, 'P1': P1, 'P2': P2}

    G1_shift = G1 + d2 / (2.0 * i2) if i2 >= 1 else math.nan
    first = _detailed_triple(m, G1, G1_shift, u_d, c, i2)
    second = _detailed_triple(m, G1, G1_shift, u_p, c, i2)
    p = 1.0 - 1.0 / (2.0 * (1 + i0))
    q1 = 1.0 - 1.0 / (2.0 * (1 + i1))
    P1a, _ = m.lt(block.tau0, p * d0 + q1 * d1)
    P1b, _ = m.gt(block.tau0, d0 + q1 * d1)
    detailed = {
        'D1a': first['a'], 'D1b': first['b'], 'D1c': first['c'],
        'F1a': first['Fa'], 'F1b': first['Fb'], 'F1c': first['Fc'],
        'D2a': second['a'], 'D2b': second['b'], 'D2c': second['c'],
        'F2a': second['Fa'], 'F2b': second['Fb'], 'F2c': second['Fc'],
        'P1a': P1a, 'P1b': P1b,
    }
    dD1 = detailed['D1a'] or detailed['D1b'] or detailed['D1c']
    dF1 = detailed['F1a'] or detailed['F1b'] or detailed['F1c']
    dD2 = detailed['D2a'] or detailed['D2b'] or detailed['D2c']
    dF2 = detailed['F2a'] or detailed['F2b'] or detailed['F2c']
    detailed['P1'] = ((dD1 and dD2) or (dF1 and dF2)) and (P1a or P1b)
    detailed['P2'] = dD1 and dF2
    report.detailed = detailed

    report.G0, report.G1 = G0, G1
    report.cone_ok = (D1 and D2 and check) or (F1 and F2 and check) or (D1 and F2)
    report.near_tie = report.near_tie or m.near_tie
    return report


def equivalence_mismatches(report: ConditionReport) -> List[str]:
    """Names of base conditions whose detailed form disagrees."""
    d = report.detailed
    pairs = {
        'D1': d['D1a'] or d['D1b'] or d['D1c'],
        'F1': d['F1a'] or d['F1b'] or d['F1c'],
        'D2': d['D2a'] or d['D2b'] or d['D2c'],
        'F2': d['F2a'] or d['F2b'] or d['F2c'],
        'P1': d['P1'],
        'P2': d['P2'],
    }
    return [name for name, value in pairs.items() if report.base[name] != value]


def cone_values(block: ReturnBlock) -> Tuple[float, float, float]:
    """(B(DF V^p), B(DF V^d), 1/d(Fx)) for the block."""
    bp = curvature_return(0.0, block)
    bd = curvature_return(1.0 / block.d0, block)
    return bp, bd, 1.0 / block.d2


def verify_cone(block: ReturnBlock, eps: Optional[float] = None) -> bool:
    """0 < B(DF V^p) < B(DF V^d) < 1/d(Fx).

    Raises:
        NearTieError: If one of the three comparisons is within the near-tie margin
    """
    if eps is None:
        eps = config.get('hyperbolicity', 'near_tie', 1e-12)
    m = _Margins(eps)
    bp, bd, top = cone_values(block)
    ok = m.gt(bp, 0.0)[0] and m.lt(bp, bd)[0] and m.lt(bd, top)[0]
    if m.near_tie:
        raise NearTieError(f"cone ordering undecided: {bp}, {bd}, {top}")
    return ok


def check_block(block: ReturnBlock, eps: Optional[float] = None) -> ConditionReport:
    """Full report: assumptions plus base and detailed conditions."""
    report = check_assumptions(block, eps=eps)
    return check_conditions(block, report, eps=eps)


def check_flat_lemma(block: ReturnBlock) -> bool:
    """τ0 + τ1 > d0 + d2 for a block that does not reflect more than once on Γ_R."""
    if block.i1 != 0:
        raise ValueError(f"flat lemma needs i1 = 0, got {block.i1}")
    return block.tau0 + block.tau1 > block.d0 + block.d2


def period2_monodromy(b: float, R: float) -> np.ndarray:
    """Derivative of F² along the axial period-2 orbit."""
    table = build_table(b, R)
    x = PhasePoint(ArcId.UNIT, table.half_angle_small, 0.0)
    first = tangent_matrix(table, x)
    y, _ = billiard_step(table, x)
    second = tangent_matrix(table, y)
    return second @ first


def period2_trace_closed_form(b: float, R: float) -> float:
    """4·(b − R)·(b − 1)/R − 2."""
    return 4.0 * (b - R) * (b - 1.0) / R - 2.0


def period2_classify(b: float, R: float, tol: Optional[float] = None) -> Tuple[str, float]:
    """Classify the axial period-2 orbit by |trace| against 2.

    Returns:
        Tuple (kind, trace) with kind in {'Elliptic', 'Parabolic', 'Hyperbolic'}
    """
    if tol is None:
        tol = config.get('hyperbolicity', 'period2_tol', 1e-9)
    trace = float(np.trace(period2_monodromy(b, R)))
    gap = abs(trace) - 2.0
    if abs(gap) <= tol:
        return "Parabolic", trace
    return ("Hyperbolic" if gap > 0 else "Elliptic"), trace


def corner_distance(table: LemonTable, s: float) -> float:
    """Arclength distance from a Γ₁ position to the nearer corner."""
    return min(s, table.len_gamma1 - s)


def largeR_diagnostics(table: LemonTable, blocks: Sequence[ReturnBlock],
                       eps: Optional[float] = None, d1_max: Optional[float] = None) -> Dict[str, float]:
    """Corner and excursion structure of blocks with short Γ_R chords.

    For blocks with d1 ≤ d1_max: fraction whose exit and re-entry Γ₁ reflections
    are within eps of a corner, fraction whose excursion is at most |AB| + eps,
    and fraction re-entering a cell n ≥ n★ − 1.
    """
    if eps is None:
        eps = config.get('hyperbolicity', 'corner_eps', 0.05)
    if d1_max is None:
        d1_max = config.get('hyperbolicity', 'largeR_d1', 4.0)
    short = [b for b in blocks if b.d1 <= d1_max]
    nstar = n_star(table)
    out = {'n_star': nstar, 'n_short': len(short)}
    if not short:
        out.update({'frac_corner': math.nan, 'frac_excursion': math.nan, 'frac_entry_cell': math.nan,
                    'min_entry_cell': math.nan})
        return out
    near = [corner_distance(table, b.s_exit) <= eps and corner_distance(table, b.s_entry) <= eps
            for b in short]
    excursion = [b.excursion <= table.chord_ab + eps for b in short]
    entry = [b.n_entry >= nstar - 1 for b in short]
    out.update({
        'frac_corner': float(np.mean(near)),
        'frac_excursion': float(np.mean(excursion)),
        'frac_entry_cell': float(np.mean(entry)),
        'min_entry_cell': int(min(b.n_entry for b in short)),
    })
    return out


@dataclass
class BlockStatistics:
    """Pass counts of the assumptions and the cone over a block sample."""
    n_blocks: int = 0
    n_near_tie: int = 0
    n_singular: int = 0
    applicable: Dict[str, int] = field(default_factory=lambda: {'A1': 0, 'A2': 0, 'A3': 0})
    passed: Dict[str, int] = field(default_factory=lambda: {'A1': 0, 'A2': 0, 'A3': 0})
    cone_checked: int = 0
    cone_passed: int = 0
    cone_mismatch: int = 0
    equivalence_mismatch: int = 0
    flat_lemma_fail: int = 0
    blocks: List[ReturnBlock] = field(default_factory=list)

    def fraction(self, name: str) -> float:
        if name == 'cone':
            return self.cone_passed / self.cone_checked if self.cone_checked else math.nan
        n = self.applicable[name]
        return self.passed[name] / n if n else math.nan

    @property
    def assumption_failures(self) -> int:
        return sum(self.applicable[k] - self.passed[k] for k in self.applicable)

    @property
    def cone_failures(self) -> int:
        return self.cone_checked - self.cone_passed

    @property
    def mean_return_time(self) -> float:
        if not self.blocks:
            return math.nan
        return float(np.mean([b.collisions for b in self.blocks]))


def collect_block_statistics(table: LemonTable, points: Sequence[PhasePoint]) -> BlockStatistics:
    """Run one return from each M-point and tally every check."""
    stats = BlockStatistics()
    for x in points:
        try:
            _, block = return_map(table, x)
        except (BlockError, UnresolvedCapError, StepError):
            stats.n_singular += 1
            continue
        stats.n_blocks += 1
        stats.blocks.append(block)
        report = check_block(block)

        for name, flag in report.A.items():
            if flag is not None:
                stats.applicable[name] += 1
                stats.passed[name] += bool(flag)

        if block.i1 == 0 and not check_flat_lemma(block):
            stats.flat_lemma_fail += 1

        try:
            cone = verify_cone(block)
        except NearTieError:
            stats.n_near_tie += 1
            continue
        if report.near_tie:
            stats.n_near_tie += 1
            continue
        stats.cone_checked += 1
        stats.cone_passed += cone
        stats.cone_mismatch += cone != report.cone_ok
        stats.equivalence_mismatch += bool(equivalence_mismatches(report))
    return stats


def find_R_star(chord_ab: float, R_grid: Sequence[float], samples: int,
                master_seed: int = 0) -> Tuple[float, pd.DataFrame]:
    """Smallest grid radius whose sampled return blocks pass (A0)–(A3) and the cone check.

    Args:
        chord_ab: Corner distance |AB| (< 1)
        R_grid: Ascending radii (> 2)
        samples: Return blocks sampled per radius
        master_seed: Seed of the per-radius RNG streams

    Returns:
        Tuple (R★, evidence DataFrame with one row per examined radius)

    Raises:
        ValueError: If the chord or grid violates the preconditions
        NoPassingRError: If no grid radius passes
    """
    if not 0 < chord_ab < 1:
        raise ValueError(f"chord must lie in (0, 1), got {chord_ab}")
    grid = list(R_grid)
    if any(R <= 2 for R in grid):
        raise ValueError("every grid radius must exceed 2")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")

    rows = []
    for index, R in enumerate(grid):
        table = table_from_chord(chord_ab, R)
        a0, a0_slack = check_A0(table.b, R)
        rng = np.random.default_rng([master_seed, index, 0])
        points = sample_M_points(table, samples, rng)
        stats = collect_block_statistics(table, points)
        diag = largeR_diagnostics(table, stats.blocks)
        passed = (a0 and stats.n_blocks > 0 and stats.assumption_failures == 0
                  and stats.cone_failures == 0)
        rows.append({
            'R': R, 'b': table.b, 'A0': a0, 'A0_slack': a0_slack,
            'nBlocks': stats.n_blocks, 'nNearTie': stats.n_near_tie, 'nSingular': stats.n_singular,
            'failA': stats.assumption_failures, 'failCone': stats.cone_failures,
            'coneMismatch': stats.cone_mismatch, 'flatLemmaFail': stats.flat_lemma_fail,
            'nStar': diag['n_star'], 'nShort': diag['n_short'],
            'fracCorner': diag['frac_corner'], 'fracExcursion': diag['frac_excursion'],
            'fracEntryCell': diag['frac_entry_cell'], 'pass': passed,
        })
        logger.info("R=%s: %d blocks, %d A-failures, %d cone failures",
                    R, stats.n_blocks, stats.assumption_failures, stats.cone_failures)
        if passed:
            return R, pd.DataFrame(rows)

    raise NoPassingRError(chord_ab, pd.DataFrame(rows))
