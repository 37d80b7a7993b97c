"""Command-line flow for lemon billiard experiments.

Commands: table, orbit, blocks, check, lyapunov, rstar, scan. Every artifact
starts with a metadata line (tool version, config echo, seed, timestamp) and
is written atomically.
"""

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from modules.core.billiard_map import StepError, iterate, phase_point, sample_phase_points
from modules.core.config_manager import config
from modules.core.geometry import (
    DegenerateTableError, LemonTable, build_table, center_big_outside, corner_angle, n_star,
    table_from_chord,
)
from modules.core.hyperbolicity import (
    NearTieError, NoPassingRError, check_A0, check_block, check_flat_lemma, equivalence_mismatches,
    find_R_star, period2_classify, verify_cone,
)
from modules.core.induced_maps import (
    BlockError, UnresolvedCapError, backward_cf, block_frame, return_map, return_orbit,
    return_time_statistics, sample_M_points,
)
from modules.core.lyapunov import LyapunovMode, multi_seed_lyapunov
from modules.core.parameter_scan import scan

logger = logging.getLogger("lemon_flow")

TOOL_VERSION = "lemon_flow 1.0.0"
COMMANDS = ('table', 'orbit', 'blocks', 'check', 'lyapunov', 'rstar', 'scan')

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_SINGULAR = 4


class SingularRunError(RuntimeError):
    """Raised when a run produces no usable data because every orbit was singular."""


@dataclass
class RunConfig:
    """Validated command-line configuration."""
    command: str
    b: Optional[str] = None
    R: Optional[str] = None
    chord: Optional[float] = None
    seed: int = 7
    n: int = 1000
    samples: int = 2000
    seeds: int = 1
    grid: Optional[str] = None
    mode: str = LyapunovMode.FULL_MAP.value
    depth: Optional[int] = None
    s: Optional[float] = None
    phi: Optional[float] = None
    returns: Optional[int] = None
    out: Optional[str] = None
    format: str = 'csv'
    workers: int = 1
    verbose: bool = False

    def echo(self) -> Dict:
        """Config fields that determine the artifact body."""
        out = asdict(self)
        for key in ('out', 'verbose', 'workers'):
            out.pop(key)
        return out


def parse_range(text: str) -> np.ndarray:
    """Parse 'a:b:n' into n evenly spaced values from a to b inclusive.

    Raises:
        ValueError: If the text is not of that form or n < 1
    """
    parts = text.split(':')
    if len(parts) != 3:
        raise ValueError(f"range must be 'min:max:steps', got '{text}'")
    lo, hi = float(parts[0]), float(parts[1])
    steps = int(parts[2])
    if steps < 1:
        raise ValueError(f"range needs at least one step, got {steps}")
    if steps == 1:
        return np.array([lo])
    return np.linspace(lo, hi, steps)


def parse_grid(text: str) -> List[float]:
    """Parse 'a:b:step' (inclusive of b when it is hit) or a comma-separated list."""
    if ',' in text or ':' not in text:
        return [float(v) for v in text.split(',') if v.strip()]
    parts = text.split(':')
    if len(parts) != 3:
        raise ValueError(f"grid must be 'min:max:step' or a list, got '{text}'")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"grid needs step > 0 and max >= min, got '{text}'")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + k * step for k in range(count)]


def resolve_table(cfg: RunConfig) -> LemonTable:
    """Build the table from exactly one of (b, R) or (chord, R)."""
    if cfg.R is None:
        raise ValueError("--R is required")
    if (cfg.b is None) == (cfg.chord is None):
        raise ValueError("give exactly one of --b or --chord")
    R = float(cfg.R)
    if cfg.chord is not None:
        return table_from_chord(cfg.chord, R)
    return build_table(float(cfg.b), R)


def _metadata(cfg: RunConfig, extra: Optional[Dict] = None) -> Dict:
    meta = {
        'tool': TOOL_VERSION,
        'config': cfg.echo(),
        'seed': cfg.seed,
        'timestamp': datetime.now(timezone.utc).isoformat(timespec='seconds'),
    }
    if extra:
        meta.update(extra)
    return meta


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (set, tuple)):
        return list(value)
    return str(value)


def _json_safe(frame: pd.DataFrame) -> List[Dict]:
    clean = frame.astype(object).where(frame.notna(), None)
    return clean.to_dict(orient='records')


def write_artifact(frame: pd.DataFrame, path: str, fmt: str, metadata: Dict) -> str:
    """Write frame to path via a temporary file in the target directory.

    CSV files start with '# tool | config | seed | timestamp' followed by the
    header row; JSON files hold {"metadata": ..., "rows": [...]}.
    """
    digits = config.get('cli', 'float_digits', 17)
    target_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(target_dir, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=target_dir, prefix='.lemon_', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            if fmt == 'json':
                json.dump({'metadata': metadata, 'rows': _json_safe(frame)}, f,
                          default=_json_default, indent=2, sort_keys=False)
                f.write('\n')
            else:
                header = ' | '.join([
                    metadata['tool'],
                    json.dumps({k: v for k, v in metadata.items()
                                if k not in ('tool', 'seed', 'timestamp')},
                               default=_json_default, sort_keys=True),
                    f"seed={metadata['seed']}",
                    metadata['timestamp'],
                ])
                f.write(f"# {header}\n")
                frame.to_csv(f, index=False, float_format=f"%.{digits}g", lineterminator='\n')
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def _output_path(cfg: RunConfig) -> str:
    return cfg.out or f"{cfg.command}.{cfg.format}"


def _rng(cfg: RunConfig, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 0, stream])


def _sampled_blocks(table: LemonTable, cfg: RunConfig):
    """(M-point, block) pairs from μ_M-distributed points; singular returns are skipped."""
    points = sample_M_points(table, cfg.samples, _rng(cfg))
    pairs = []
    singular = 0
    for x in points:
        try:
            _, block = return_map(table, x)
        except (BlockError, UnresolvedCapError):
            singular += 1
            continue
        pairs.append((x, block))
    if not pairs:
        raise SingularRunError(f"no regular return block among {len(points)} sampled M-points")
    return pairs, singular


def cmd_table(cfg: RunConfig) -> pd.DataFrame:
    table = resolve_table(cfg)
    a0, slack = check_A0(table.b, table.R)
    kind, trace = period2_classify(table.b, table.R)
    summary = table.to_dict()
    row = {
        'b': table.b, 'R': table.R, 'chordAB': table.chord_ab,
        'lenGamma1': table.len_gamma1, 'lenGammaR': table.len_gamma_r, 'lenGamma': table.len_gamma,
        'cornerAx': table.corner_a[0], 'cornerAy': table.corner_a[1],
        'cornerBx': table.corner_b[0], 'cornerBy': table.corner_b[1],
        'majorArc': summary['majorArc'], 'centerBigOutside': center_big_outside(table),
        'cornerAngle': corner_angle(table), 'nStar': n_star(table),
        'A0': a0, 'A0slack': slack, 'period2': kind, 'period2Trace': trace,
    }
    print(f"✓ Table b={table.b:.6g}, R={table.R:.6g}: |AB|={table.chord_ab:.6g}, "
          f"A0={'true' if a0 else 'false'}, period-2 orbit {kind.lower()}")
    return pd.DataFrame([row])


def cmd_orbit(cfg: RunConfig) -> pd.DataFrame:
    table = resolve_table(cfg)
    if cfg.s is not None and cfg.phi is not None:
        x0 = phase_point(table, cfg.s, cfg.phi)
    else:
        x0 = sample_phase_points(table, 1, _rng(cfg))[0]
    _, events, error = iterate(table, x0, cfg.n)
    if error is not None:
        print(f"✓ Orbit stopped after {len(events)} collisions: {error}")
        if not events:
            raise SingularRunError(str(error))
    rows = [
        {'step': k, 'arcId': e.point.arc_id.value, 's': e.point.s, 'phi': e.point.phi,
         'tau': e.tau, 'd': e.d}
        for k, e in enumerate(events)
    ]
    print(f"✓ Simulated {len(events)} collisions")
    return pd.DataFrame(rows, columns=['step', 'arcId', 's', 'phi', 'tau', 'd'])


def cmd_blocks(cfg: RunConfig) -> pd.DataFrame:
    table = resolve_table(cfg)
    if cfg.returns:
        start = sample_M_points(table, 1, _rng(cfg))
        if not start:
            raise SingularRunError("no M-point found for the return orbit")
        states, blocks, error = return_orbit(table, start[0], cfg.returns)
        if error is not None:
            print(f"✓ Return orbit stopped after {len(blocks)} returns: {error}")
        if not blocks:
            raise SingularRunError("return orbit produced no block")
        stats = return_time_statistics(blocks)
        print(f"✓ {stats['returns']} returns, mean return time {stats['mean_return_time']:.6g}")
        points = states[:len(blocks)]
    else:
        pairs, singular = _sampled_blocks(table, cfg)
        points = [x for x, _ in pairs]
        blocks = [b for _, b in pairs]
        print(f"✓ Sampled {len(blocks)} return blocks ({singular} singular)")

    frame = block_frame(blocks)
    frame.insert(0, 's', [x.s for x in points])
    frame.insert(1, 'phi', [x.phi for x in points])
    if cfg.depth:
        unstable, converged = [], []
        for x in points:
            try:
                value, ok = backward_cf(table, x, cfg.depth)
            except StepError:
                value, ok = math.nan, False
            unstable.append(value)
            converged.append(ok)
        frame['Bu'] = unstable
        frame['BuConverged'] = converged
    return frame


def cmd_check(cfg: RunConfig) -> pd.DataFrame:
    table = resolve_table(cfg)
    pairs, singular = _sampled_blocks(table, cfg)
    rows = []
    for _, block in pairs:
        report = check_block(block)
        try:
            cone = verify_cone(block)
            cone_tie = False
        except NearTieError:
            cone, cone_tie = None, True
        row = {
            'i0': block.i0, 'i1': block.i1, 'i2': block.i2,
            'tau0': block.tau0, 'tau1': block.tau1,
            'd0': block.d0, 'd1': block.d1, 'd2': block.d2,
            'region': block.region,
            'A1': report.A['A1'], 'A2': report.A['A2'], 'A3': report.A['A3'],
            'G0': report.G0, 'G1': report.G1,
        }
        row.update(report.base)
        row.update({f"detailed_{k}": v for k, v in report.detailed.items()})
        row.update({
            'coneOk': report.cone_ok,
            'verifyCone': cone,
            'nearTie': report.near_tie or cone_tie,
            'mismatch': ','.join(equivalence_mismatches(report)),
            'flatLemma': check_flat_lemma(block) if block.i1 == 0 else None,
        })
        rows.append(row)
    frame = pd.DataFrame(rows)
    decided = frame[~frame['nearTie']]
    print(f"✓ Checked {len(frame)} blocks ({singular} singular, {int(frame['nearTie'].sum())} near ties)")
    if len(decided):
        print(f"✓ Cone passes on {decided['verifyCone'].astype(bool).mean():.4%} of decided blocks")
    return frame


def cmd_lyapunov(cfg: RunConfig) -> Dict:
    table = resolve_table(cfg)
    pooled = multi_seed_lyapunov(table, cfg.seeds, cfg.n, LyapunovMode(cfg.mode),
                                 master_seed=cfg.seed, workers=cfg.workers)
    frame = pd.DataFrame(pooled['estimates'])
    frame.insert(0, 'seedIndex', range(len(frame)))
    if pooled['n_seeds'] == 0:
        raise SingularRunError("every seed orbit was singular")
    print(f"✓ χ = {pooled['chi']:.6g} ± {pooled['ci95']:.3g} over {pooled['n_seeds']} seeds")
    return {'frame': frame, 'extra': {'chi': pooled['chi'], 'ci95': pooled['ci95']}}


def cmd_rstar(cfg: RunConfig) -> Dict:
    if cfg.chord is None or cfg.grid is None:
        raise ValueError("rstar needs --chord and --grid")
    R_star, evidence = find_R_star(cfg.chord, parse_grid(cfg.grid), cfg.samples, master_seed=cfg.seed)
    print(f"✓ R★ = {R_star:.6g} for |AB| = {cfg.chord}")
    return {'frame': evidence, 'extra': {'R_star': R_star}}


def cmd_scan(cfg: RunConfig) -> pd.DataFrame:
    if cfg.b is None or cfg.R is None:
        raise ValueError("scan needs --b and --R ranges")
    b_values, R_values = parse_range(cfg.b), parse_range(cfg.R)
    frame = scan(b_values, R_values, master_seed=cfg.seed, samples=cfg.samples,
                 n_lyapunov=cfg.n, workers=cfg.workers)
    counts = frame['verdict'].value_counts()
    print(f"✓ Scanned {len(frame)} cells: " + ', '.join(f"{k}={v}" for k, v in counts.items()))
    return frame


HANDLERS = {
    'table': cmd_table,
    'orbit': cmd_orbit,
    'blocks': cmd_blocks,
    'check': cmd_check,
    'lyapunov': cmd_lyapunov,
    'rstar': cmd_rstar,
    'scan': cmd_scan,
}


def validate(cfg: RunConfig) -> None:
    """Range checks shared by all commands."""
    if cfg.command not in COMMANDS:
        raise ValueError(f"unknown command '{cfg.command}'")
    if cfg.format not in ('csv', 'json'):
        raise ValueError(f"format must be csv or json, got '{cfg.format}'")
    for name in ('n', 'samples', 'seeds', 'workers'):
        if getattr(cfg, name) < 1:
            raise ValueError(f"--{name} must be >= 1")
    if cfg.depth is not None and cfg.depth < 1:
        raise ValueError("--depth must be >= 1")
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        raise ValueError("--seed must be a 64-bit unsigned integer")
    LyapunovMode(cfg.mode)


def run(cfg: RunConfig) -> int:
    """Execute one command and write its artifact.

    Returns:
        Exit status: 0 ok, 2 usage, 3 degenerate table, 4 singular orbits or no passing R
    """
    path = _output_path(cfg)
    try:
        validate(cfg)
        result = HANDLERS[cfg.command](cfg)
    except DegenerateTableError as e:
        print(f"Error: {e}")
        return EXIT_DEGENERATE
    except NoPassingRError as e:
        write_artifact(e.evidence, path, cfg.format, _metadata(cfg, {'R_star': None}))
        print(f"Error: no grid radius passes for |AB| = {e.chord}; evidence written to {path}")
        return EXIT_SINGULAR
    except (SingularRunError, StepError, BlockError, UnresolvedCapError) as e:
        print(f"Error: {e}")
        return EXIT_SINGULAR
    except ValueError as e:
        print(f"Error: {e}")
        return EXIT_USAGE

    if isinstance(result, dict):
        frame, extra = result['frame'], result['extra']
    else:
        frame, extra = result, None
    if cfg.command == 'check':
        table = resolve_table(cfg)
        a0, slack = check_A0(table.b, table.R)
        extra = {'A0': a0, 'A0slack': slack}
    write_artifact(frame, path, cfg.format, _metadata(cfg, extra))
    print(f"✓ {len(frame)} rows written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Asymmetric lemon billiard experiments')
    parser.add_argument('command', choices=COMMANDS, help='Experiment to run')
    parser.add_argument('--b', help="Center distance (scan: range 'min:max:steps')")
    parser.add_argument('--R', help="Big radius (scan: range 'min:max:steps')")
    parser.add_argument('--chord', type=float, help='Corner distance |AB| instead of --b')
    parser.add_argument('--seed', type=int, default=config.get('cli', 'default_seed', 7),
                        help='Master seed of all sampling')
    parser.add_argument('--n', type=int, default=1000, help='Collisions per orbit')
    parser.add_argument('--samples', type=int, default=config.get('cli', 'samples', 2000),
                        help='Sampled M-points per table')
    parser.add_argument('--seeds', type=int, default=1, help='Lyapunov seeds')
    parser.add_argument('--grid', help="R grid for rstar: 'min:max:step' or 'v1,v2,...'")
    parser.add_argument('--mode', default=LyapunovMode.FULL_MAP.value,
                        choices=[m.value for m in LyapunovMode], help='Lyapunov mode')
    parser.add_argument('--depth', type=int, help='Backward depth of the unstable curvature (blocks)')
    parser.add_argument('--s', type=float, help='Orbit seed arclength')
    parser.add_argument('--phi', type=float, help='Orbit seed angle')
    parser.add_argument('--returns', type=int, help='Follow one return orbit instead of sampling (blocks)')
    parser.add_argument('--out', help='Output file (default: <command>.<format>)')
    parser.add_argument('--format', default='csv', choices=['csv', 'json'], help='Output format')
    parser.add_argument('--workers', type=int, default=config.get('cli', 'workers', 1),
                        help='Worker processes (default: cli.workers or LEMON_WORKERS)')
    parser.add_argument('--verbose', action='store_true', help='Log progress at INFO level')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    cfg = RunConfig(**vars(args))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
