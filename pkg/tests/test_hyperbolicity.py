"""Unit tests for hyperbolicity module."""

import math

import numpy as np
import pytest

from modules.core.geometry import DegenerateTableError, build_table, table_from_chord
from modules.core.hyperbolicity import (
    NearTieError, NoPassingRError, check_A0, check_assumptions, check_block, check_conditions,
    check_flat_lemma, collect_block_statistics, cone_values, equivalence_mismatches, find_R_star,
    largeR_diagnostics, period2_classify, period2_monodromy, period2_trace_closed_form, verify_cone,
)
from modules.core.induced_maps import (
    BlockError, ReturnBlock, UnresolvedCapError, return_map, sample_M_points,
)


def sampled_blocks(table, n, seed):
    blocks = []
    for x in sample_M_points(table, n, np.random.default_rng([seed, 0, 0])):
        try:
            blocks.append(return_map(table, x)[1])
        except (BlockError, UnresolvedCapError):
            continue
    return blocks


@pytest.fixture(scope="module", params=[(1.5, 2.0), (1.2, 1.9), "chord"])
def table(request):
    if request.param == "chord":
        return table_from_chord(0.9, 10.0)
    return build_table(*request.param)


@pytest.fixture(scope="module")
def blocks(table):
    return sampled_blocks(table, 150, 3)


class TestAssumptionA0:
    """Test cases for the table assumption."""

    def test_inside(self):
        ok, slack = check_A0(1.5, 2.0)
        assert ok
        assert slack == pytest.approx(0.5)

    def test_outside(self):
        assert not check_A0(1.2, 3.0)[0]
        assert not check_A0(2.5, 2.0)[0]
        assert not check_A0(0.8, 1.7)[0]

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            check_A0(1.0, 0.5)


class TestPeriodTwo:
    """Test cases for the axial period-2 orbit."""

    @pytest.mark.parametrize("b,R,kind,trace", [
        (1.5, 2.0, "Hyperbolic", -2.5),
        (2.0, 2.0, "Parabolic", -2.0),
        (1.0, 1.5, "Parabolic", -2.0),
        (0.8, 1.7, "Elliptic", 2.0 - 4.0 * 0.8 * 1.9 / 1.7),
        (2.2, 2.0, "Elliptic", -1.52),
    ])
    def test_classification(self, b, R, kind, trace):
        label, value = period2_classify(b, R)
        assert label == kind
        assert value == pytest.approx(trace, abs=1e-9)

    def test_trichotomy_on_grid(self):
        checked = 0
        for b in np.linspace(0.6, 2.9, 10):
            for R in np.linspace(1.3, 2.6, 10):
                try:
                    label, trace = period2_classify(b, R)
                except DegenerateTableError:
                    continue
                assert trace == pytest.approx(period2_trace_closed_form(b, R), abs=1e-9)
                sign = (b - 1.0) * (R - b)
                if abs(sign) < 1e-6:
                    continue
                assert label == ("Hyperbolic" if sign > 0 else "Elliptic")
                checked += 1
        assert checked > 40

    def test_monodromy_is_symplectic(self):
        m = period2_monodromy(1.5, 2.0)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)


class TestConditions:
    """Test cases for the block conditions."""

    def test_assumption_by_region(self):
        x0 = ReturnBlock(1, 2, 1, 1.0, 1.0, 0.5, 0.6, 0.5)
        report = check_assumptions(x0)
        assert report.A['A1'] is not None
        assert report.A['A2'] is None and report.A['A3'] is None

        x2 = ReturnBlock(3, 0, 0, 0.2, 1.0, 0.5, 0.6, 0.5)
        report = check_assumptions(x2)
        assert report.A['A3'] is True
        assert report.slack['A3'] == pytest.approx(0.1)

    def test_flat_lemma(self):
        assert check_flat_lemma(ReturnBlock(0, 0, 1, 1.0, 1.0, 0.5, 1.2, 0.5))
        with pytest.raises(ValueError):
            check_flat_lemma(ReturnBlock(0, 1, 1, 1.0, 1.0, 0.5, 1.2, 0.5))

    def test_report_keys(self):
        report = check_block(ReturnBlock(1, 0, 2, 1.3, 1.1, 0.4, 1.5, 0.5))
        assert set(report.base) == {'D1', 'F1', 'D2', 'F2', 'check', 'P1', 'P2'}
        for key in ('D1a', 'F2c', 'P1a', 'P1b', 'P1', 'P2'):
            assert key in report.detailed
        assert report.to_dict()['region'] == "X1"

    def test_no_F_without_final_slide(self):
        report = check_conditions(ReturnBlock(1, 0, 0, 1.3, 1.1, 0.4, 1.5, 0.5))
        assert not report.base['F1'] and not report.base['F2']

    def test_detailed_forms_agree(self, blocks):
        assert len(blocks) > 100
        decided = [r for r in (check_block(b) for b in blocks) if not r.near_tie]
        assert len(decided) > 0.9 * len(blocks)
        assert all(equivalence_mismatches(r) == [] for r in decided)

    def test_cone_flag_matches_cone(self, blocks):
        for block in blocks:
            report = check_block(block)
            try:
                cone = verify_cone(block)
            except NearTieError:
                continue
            if not report.near_tie:
                assert cone == report.cone_ok

    def test_flat_lemma_on_orbits(self, blocks):
        for block in blocks:
            if block.i1 == 0:
                assert check_flat_lemma(block)

    def test_cone_values(self):
        block = ReturnBlock(1, 0, 2, 1.3, 1.1, 0.4, 1.5, 0.5)
        bp, bd, top = cone_values(block)
        assert top == pytest.approx(2.0)
        assert math.isfinite(bp) and math.isfinite(bd)


class TestStatistics:
    """Test cases for sampled statistics and the R★ search."""

    def test_collect(self):
        table = build_table(1.5, 2.0)
        points = sample_M_points(table, 60, np.random.default_rng(4))
        stats = collect_block_statistics(table, points)
        assert stats.n_blocks + stats.n_singular == 60
        assert stats.cone_checked + stats.n_near_tie <= stats.n_blocks
        for name in ('A1', 'A2', 'A3', 'cone'):
            value = stats.fraction(name)
            assert math.isnan(value) or 0.0 <= value <= 1.0
        assert stats.mean_return_time >= 2

    def test_largeR_diagnostics(self):
        table = table_from_chord(0.9, 10.0)
        diag = largeR_diagnostics(table, sampled_blocks(table, 60, 5))
        assert diag['n_star'] == 6
        if diag['n_short']:
            assert 0.0 <= diag['frac_corner'] <= 1.0
            assert diag['min_entry_cell'] >= 0

    def test_find_R_star_preconditions(self):
        with pytest.raises(ValueError):
            find_R_star(1.2, [10.0, 20.0], 10)
        with pytest.raises(ValueError):
            find_R_star(0.9, [1.5, 10.0], 10)
        with pytest.raises(ValueError):
            find_R_star(0.9, [20.0, 10.0], 10)

    def test_find_R_star_reports_evidence(self):
        grid = [10.0, 40.0]
        try:
            R_star, evidence = find_R_star(0.9, grid, 30, master_seed=2)
        except NoPassingRError as e:
            R_star, evidence = None, e.evidence
        assert len(evidence) <= len(grid)
        expected = (evidence['A0'] & (evidence['nBlocks'] > 0)
                    & (evidence['failA'] == 0) & (evidence['failCone'] == 0))
        assert evidence['pass'].tolist() == expected.tolist()
        if R_star is None:
            assert len(evidence) == len(grid)
            assert not evidence['pass'].any()
        else:
            assert evidence['pass'].tolist() == [False] * (len(evidence) - 1) + [True]
            assert evidence['R'].iloc[-1] == R_star

    def test_find_R_star_passes_for_large_radius(self):
        R_star, evidence = find_R_star(0.9, [1000.0], 40, master_seed=2)
        assert R_star == 1000.0
        row = evidence.iloc[0]
        assert bool(row['pass']) and bool(row['A0'])
        assert row['nBlocks'] > 0
        assert row['failA'] == 0 and row['failCone'] == 0
