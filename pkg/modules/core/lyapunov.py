"""Lyapunov - Exponent estimates from renormalized tangent-vector products.

FullMap mode pushes a tangent vector through every collision and renormalizes
every hyperbolicity.renorm_period collisions. ReturnMap mode first moves the
seed into M and renormalizes once per return of the induced map, so that
χ_full ≈ χ_return / ξ̄ with ξ̄ the mean return time.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from multiprocessing import Pool
from typing import Dict, List, Sequence, Tuple

import numpy as np

from modules.core.billiard_map import (
    PhasePoint, StepError, billiard_step, eta, matrix_entries, same_arc_jump,
    sample_phase_points, time_reverse, tolerances,
)
from modules.core.config_manager import config
from modules.core.geometry import ArcId, LemonTable
from modules.core.induced_maps import (
    UnresolvedCapError, leave_arc, middle_phase, next_in_M,
)

logger = logging.getLogger(__name__)


class LyapunovMode(str, Enum):
    FULL_MAP = "FullMap"
    RETURN_MAP = "ReturnMap"


@dataclass
class LyapunovEstimate:
    """Exponent per collision (FullMap) or per return (ReturnMap)."""
    chi: float
    n: int
    mode: str
    ci95: float = math.nan
    mean_return_time: float = math.nan
    collisions: int = 0
    terminated: bool = False
    error: str = ""
    batch_means: List[float] = field(default_factory=list)

    @property
    def chi_per_collision(self) -> float:
        if self.mode == LyapunovMode.RETURN_MAP.value:
            return self.chi / self.mean_return_time
        return self.chi

    def to_dict(self) -> Dict:
        out = asdict(self)
        out.pop('batch_means')
        return out


def _batch_ci(batch_means: Sequence[float]) -> float:
    """95% half-width from batch means."""
    if len(batch_means) < 2:
        return math.nan
    arr = np.asarray(batch_means, dtype=float)
    return float(1.96 * arr.std(ddof=1) / math.sqrt(len(arr)))


def _full_map(table: LemonTable, x0: PhasePoint, n: int, period: int, batches: int
              ) -> LyapunovEstimate:
    tol = tolerances()
    batch_len = max(period, (n // batches) // period * period)
    x = x0
    vs, vp = 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)
    logs: List[float] = []
    batch_logs: List[float] = []
    batch_means: List[float] = []
    steps = 0
    batch_steps = 0
    error = ""
    while steps < n:
        try:
            x_next, event = billiard_step(table, x, tol)
        except StepError as e:
            error = str(e)
            break
        a, b, c, d = matrix_entries(table, x, x_next, event.tau)
        vs, vp = a * vs + b * vp, c * vs + d * vp
        x = x_next
        steps += 1
        batch_steps += 1
        if steps % period == 0 or steps == n:
            norm = math.hypot(vs, vp)
            vs, vp = vs / norm, vp / norm
            log_norm = math.log(norm)
            logs.append(log_norm)
            batch_logs.append(log_norm)
            if batch_steps >= batch_len:
                batch_means.append(math.fsum(batch_logs) / batch_steps)
                batch_logs, batch_steps = [], 0

    if error:
        norm = math.hypot(vs, vp)
        logs.append(math.log(norm))
        logger.warning("FullMap estimate stopped after %d collisions: %s", steps, error)
    chi = math.fsum(logs) / steps if steps else math.nan
    return LyapunovEstimate(
        chi=chi, n=steps, mode=LyapunovMode.FULL_MAP.value, ci95=_batch_ci(batch_means),
        collisions=steps, terminated=bool(error), error=error, batch_means=batch_means,
    )


def _run_matrix(k: int, rho: float) -> Tuple[float, float, float, float]:
    """Derivative of k same-arc collisions on a circle of radius rho."""
    return 1.0, -2.0 * k * rho, 0.0, 1.0


def _apply(m: Tuple[float, float, float, float], vs: float, vp: float) -> Tuple[float, float]:
    a, b, c, d = m
    return a * vs + b * vp, c * vs + d * vp


def _return_with_tangent(table: LemonTable, x: PhasePoint, vs: float, vp: float, cap: int, tol
                         ) -> Tuple[PhasePoint, int, float, float]:
    """One return of the map on M with the tangent vector carried along."""
    collisions = 0
    for rho in (1.0, table.R):
        k, last, tau, landing = leave_arc(table, x, cap, tol)
        vs, vp = _apply(_run_matrix(k, rho), vs, vp)
        vs, vp = _apply(matrix_entries(table, last, landing, tau), vs, vp)
        collisions += k + 1
        x = landing
    n2, exceeded = eta(table, x, cap, tol)
    if exceeded:
        raise UnresolvedCapError(x, cap)
    i2 = middle_phase(n2)
    vs, vp = _apply(_run_matrix(i2, 1.0), vs, vp)
    return same_arc_jump(table, x, i2), collisions + i2, vs, vp


def _return_map(table: LemonTable, x0: PhasePoint, n: int, batches: int) -> LyapunovEstimate:
    tol = tolerances()
    cap = config.get('induced', 'eta_cap', 1000000)
    error = ""
    try:
        x, _ = next_in_M(table, x0, cap, tol)
    except (StepError, UnresolvedCapError) as e:
        logger.warning("Seed never reaches M: %s", e)
        return LyapunovEstimate(math.nan, 0, LyapunovMode.RETURN_MAP.value, terminated=True, error=str(e))

    vs, vp = 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)
    logs: List[float] = []
    collisions = 0
    while collisions < n:
        try:
            x, k, vs, vp = _return_with_tangent(table, x, vs, vp, cap, tol)
        except (StepError, UnresolvedCapError) as e:
            error = str(e)
            logger.warning("ReturnMap estimate stopped after %d returns: %s", len(logs), e)
            break
        norm = math.hypot(vs, vp)
        vs, vp = vs / norm, vp / norm
        logs.append(math.log(norm))
        collisions += k

    returns = len(logs)
    if not returns:
        return LyapunovEstimate(math.nan, 0, LyapunovMode.RETURN_MAP.value, terminated=True, error=error)
    size = max(1, returns // batches)
    batch_means = [math.fsum(logs[i:i + size]) / len(logs[i:i + size])
                   for i in range(0, returns - size + 1, size)]
    return LyapunovEstimate(
        chi=math.fsum(logs) / returns, n=returns, mode=LyapunovMode.RETURN_MAP.value,
        ci95=_batch_ci(batch_means), mean_return_time=collisions / returns,
        collisions=collisions, terminated=bool(error), error=error, batch_means=batch_means,
    )


def lyapunov(table: LemonTable, x0: PhasePoint, n: int,
             mode: LyapunovMode = LyapunovMode.FULL_MAP) -> LyapunovEstimate:
    """Estimate the positive Lyapunov exponent along the orbit of x0.

    Args:
        table: Lemon table
        x0: Seed state
        n: Collision budget (both modes)
        mode: FullMap (per collision) or ReturnMap (per return)

    Returns:
        LyapunovEstimate; a singular orbit yields a partial estimate with terminated=True
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    period = config.get('hyperbolicity', 'renorm_period', 32)
    batches = config.get('hyperbolicity', 'lyapunov_batches', 20)
    mode = LyapunovMode(mode)
    if mode == LyapunovMode.FULL_MAP:
        return _full_map(table, x0, n, period, batches)
    return _return_map(table, x0, n, batches)


def suspension_check(table: LemonTable, x0: PhasePoint, n: int) -> Dict[str, float]:
    """Both modes from the same seed and the relative gap |χ_full·ξ̄ − χ_return| / |χ_return|."""
    full = lyapunov(table, x0, n, LyapunovMode.FULL_MAP)
    ret = lyapunov(table, x0, n, LyapunovMode.RETURN_MAP)
    gap = abs(full.chi * ret.mean_return_time - ret.chi) / abs(ret.chi) if ret.chi else math.nan
    return {
        'chi_full': full.chi,
        'chi_return': ret.chi,
        'mean_return_time': ret.mean_return_time,
        'relative_gap': gap,
    }


def reversed_lyapunov(table: LemonTable, x0: PhasePoint, n: int) -> LyapunovEstimate:
    """FullMap estimate along the time-reversed orbit of x0."""
    return lyapunov(table, time_reverse(x0), n, LyapunovMode.FULL_MAP)


def island_test(table: LemonTable, n: int) -> LyapunovEstimate:
    """FullMap estimate from a seed next to the Γ₁ apex of the axial period-2 orbit."""
    x0 = PhasePoint(ArcId.UNIT, table.len_gamma1 / 2 + 1e-3, 1e-3)
    return lyapunov(table, x0, n, LyapunovMode.FULL_MAP)


def _seed_task(args: Tuple) -> Dict:
    table, master_seed, index, n, mode = args
    rng = np.random.default_rng([master_seed, 0, index])
    x0 = sample_phase_points(table, 1, rng)[0]
    return lyapunov(table, x0, n, mode).to_dict()


def multi_seed_lyapunov(table: LemonTable, seeds: int, n: int,
                        mode: LyapunovMode = LyapunovMode.FULL_MAP,
                        master_seed: int = 0, workers: int = 1) -> Dict:
    """Pooled exponent over μ-distributed seeds with a 95% interval across seeds.

    Seed k uses the RNG stream [master_seed, 0, k], so results do not depend on workers.
    """
    tasks = [(table, master_seed, k, n, LyapunovMode(mode)) for k in range(seeds)]
    if workers > 1:
        with Pool(processes=workers) as pool:
            results = pool.map(_seed_task, tasks)
    else:
        results = [_seed_task(t) for t in tasks]
    chis = [r['chi'] for r in results if not math.isnan(r['chi'])]
    mean = float(np.mean(chis)) if chis else math.nan
    ci = float(1.96 * np.std(chis, ddof=1) / math.sqrt(len(chis))) if len(chis) > 1 else math.nan
    return {'chi': mean, 'ci95': ci, 'n_seeds': len(chis), 'estimates': results}
