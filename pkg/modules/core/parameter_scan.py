"""Parameter Scan - Verdict map of the (b, R) plane.

Each grid cell is evaluated independently from RNG streams keyed by
(master_seed, cell_index, stream), so the output does not depend on how
cells are distributed over worker processes.
"""

import logging
import math
from dataclasses import dataclass, asdict
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.core.billiard_map import sample_phase_points
from modules.core.config_manager import config
from modules.core.geometry import DegenerateTableError, build_table
from modules.core.hyperbolicity import check_A0, collect_block_statistics
from modules.core.induced_maps import sample_M_points
from modules.core.lyapunov import LyapunovMode, island_test, lyapunov

logger = logging.getLogger(__name__)

SCAN_COLUMNS = ['b', 'R', 'verdict', 'fracA1', 'fracA2', 'fracA3', 'fracCone', 'chi', 'chiCI',
                'meanReturnTime', 'nBlocks', 'nNearTie', 'nSingular']

HYPERBOLIC = "HyperbolicEvidence"
CONDITION_FAIL = "ConditionFail"
ELLIPTIC = "EllipticEvidence"
INCONCLUSIVE = "Inconclusive"


@dataclass
class ScanCell:
    """Verdict and statistics of one (b, R) grid cell."""
    b: float
    R: float
    verdict: str
    fracA1: float = math.nan
    fracA2: float = math.nan
    fracA3: float = math.nan
    fracCone: float = math.nan
    chi: float = math.nan
    chiCI: float = math.nan
    meanReturnTime: float = math.nan
    nBlocks: int = 0
    nNearTie: int = 0
    nSingular: int = 0

    def to_row(self) -> Dict:
        return asdict(self)


def decide_verdict(elliptic: bool, a0: bool, fractions: Dict[str, float], chi: float,
                   ci: float) -> str:
    """Scan decision rule.

    Elliptic evidence wins; otherwise all conditions passing plus an interval
    for χ above 0 gives hyperbolic evidence; any failing condition gives
    ConditionFail; everything else is inconclusive.
    """
    if elliptic:
        return ELLIPTIC
    observed = [f for f in fractions.values() if not math.isnan(f)]
    all_pass = a0 and bool(observed) and all(f == 1.0 for f in observed)
    if all_pass and not math.isnan(ci) and chi - ci > 0:
        return HYPERBOLIC
    if not a0 or any(f < 1.0 for f in observed):
        return CONDITION_FAIL
    return INCONCLUSIVE


def scan_cell(b: float, R: float, cell_index: int, master_seed: int = 0,
              samples: int = 200, n_lyapunov: int = 20000) -> ScanCell:
    """Evaluate one grid cell.

    Args:
        b, R: Table parameters
        cell_index: Position of the cell in the grid (selects the RNG streams)
        master_seed: Run seed
        samples: Return blocks sampled from μ restricted to M
        n_lyapunov: Collisions of the FullMap exponent estimate

    Returns:
        ScanCell; degenerate tables give an Inconclusive row
    """
    try:
        table = build_table(b, R)
    except (DegenerateTableError, ValueError) as e:
        logger.debug("Cell (%s, %s) skipped: %s", b, R, e)
        return ScanCell(b=b, R=R, verdict=INCONCLUSIVE)

    a0, _ = check_A0(b, R)
    chi_tol = config.get('hyperbolicity', 'chi_zero_tol', 1e-2)
    elliptic = False
    if b < 1 or b > R:
        island = island_test(table, n_lyapunov)
        elliptic = not island.terminated and abs(island.chi) < chi_tol

    points = sample_M_points(table, samples, np.random.default_rng([master_seed, cell_index, 0]))
    stats = collect_block_statistics(table, points)
    fractions = {
        'A1': stats.fraction('A1'),
        'A2': stats.fraction('A2'),
        'A3': stats.fraction('A3'),
        'cone': stats.fraction('cone'),
    }

    seed_rng = np.random.default_rng([master_seed, cell_index, 1])
    x0 = sample_phase_points(table, 1, seed_rng)[0]
    estimate = lyapunov(table, x0, n_lyapunov, LyapunovMode.FULL_MAP)

    return ScanCell(
        b=b, R=R,
        verdict=decide_verdict(elliptic, a0, fractions, estimate.chi, estimate.ci95),
        fracA1=fractions['A1'], fracA2=fractions['A2'], fracA3=fractions['A3'],
        fracCone=fractions['cone'],
        chi=estimate.chi, chiCI=estimate.ci95,
        meanReturnTime=stats.mean_return_time,
        nBlocks=stats.n_blocks, nNearTie=stats.n_near_tie, nSingular=stats.n_singular,
    )


def _cell_task(args: Tuple) -> Dict:
    b, R, index, master_seed, samples, n_lyapunov = args
    cell = scan_cell(b, R, index, master_seed, samples, n_lyapunov)
    logger.info("Cell %d (b=%.6g, R=%.6g): %s", index, b, R, cell.verdict)
    return cell.to_row()


def grid_cells(b_values: Sequence[float], R_values: Sequence[float]) -> List[Tuple[float, float]]:
    """Cells in output order: b outer, R inner."""
    return [(float(b), float(R)) for b in b_values for R in R_values]


def scan(b_values: Sequence[float], R_values: Sequence[float], master_seed: int = 0,
         samples: int = 200, n_lyapunov: int = 20000, workers: Optional[int] = None) -> pd.DataFrame:
    """Evaluate every grid cell and merge the rows in grid order.

    Args:
        b_values, R_values: Grid axes
        master_seed: Run seed
        samples: Blocks per cell
        n_lyapunov: Collisions per exponent estimate
        workers: Worker processes (defaults to cli.workers)

    Returns:
        DataFrame with SCAN_COLUMNS and one row per cell
    """
    if workers is None:
        workers = config.get('cli', 'workers', 1)
    tasks = [(b, R, index, master_seed, samples, n_lyapunov)
             for index, (b, R) in enumerate(grid_cells(b_values, R_values))]
    if workers > 1:
        with Pool(processes=workers) as pool:
            rows = pool.map(_cell_task, tasks)
    else:
        rows = [_cell_task(t) for t in tasks]
    return pd.DataFrame(rows, columns=SCAN_COLUMNS)
