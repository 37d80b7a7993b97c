"""Unit tests for induced_maps module."""

import math

import numpy as np
import pytest

from modules.core.billiard_map import PhasePoint, StepError, billiard_step, time_reverse
from modules.core.cfrac import curvature_step, proj_close, transport_chain
from modules.core.geometry import ArcId, build_table, table_from_chord
from modules.core.induced_maps import (
    BlockError, CellIndex, ReturnBlock, ReturnBlockHat, UnresolvedCapError, backward_cf,
    block_collisions, block_frame,
    classify_cell, cone_sequences, curvature_hat_return, curvature_return, hat_return, in_M,
    middle_phase, next_in_M, raw_transport, return_map, return_orbit, return_time_statistics,
    run_block, sample_M_points, sampled_M_fraction, stable_curvature, unreduced_return,
)
from modules.core.hyperbolicity import NearTieError, verify_cone


@pytest.fixture(scope="module")
def table():
    return build_table(1.5, 2.0)


@pytest.fixture(scope="module")
def m_points(table):
    return sample_M_points(table, 80, np.random.default_rng([7, 0, 0]))


@pytest.fixture(scope="module")
def blocks(table, m_points):
    out = []
    for x in m_points:
        try:
            out.append((x,) + return_map(table, x))
        except (BlockError, UnresolvedCapError):
            continue
    return out


def synthetic_blocks():
    return [
        ReturnBlock(0, 0, 0, 1.4, 1.2, 0.5, 1.1, 0.6),
        ReturnBlock(2, 0, 1, 1.1, 0.9, 0.3, 1.5, 0.4),
        ReturnBlock(1, 3, 2, 2.2, 1.7, 0.45, 0.8, 0.35),
        ReturnBlock(5, 1, 0, 0.9, 1.6, 0.2, 1.9, 0.7),
    ]


class TestCells:
    """Test cases for cell classification."""

    def test_middle_phase(self):
        assert [middle_phase(n) for n in range(6)] == [0, 1, 1, 2, 2, 3]

    def test_classify_run(self, table):
        # polar angle 0 on Γ₁ with φ = 1.2: one reflection back, two ahead
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 1.2)
        cell = classify_cell(table, x)
        assert cell == CellIndex(n=cell.phase + 2, phase=cell.phase)
        assert cell.phase == 2

    def test_classify_needs_gamma1(self, table):
        with pytest.raises(ValueError):
            classify_cell(table, PhasePoint(ArcId.BIG, table.len_gamma1 + 0.5, 0.2))

    def test_in_M(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 0.0)
        assert in_M(table, x)
        assert not in_M(table, PhasePoint(ArcId.BIG, table.len_gamma1 + 0.5, 0.2))

    def test_sampled_points_are_in_M(self, table, m_points):
        assert len(m_points) == 80
        assert all(p.arc_id == ArcId.UNIT for p in m_points)
        assert all(in_M(table, p) for p in m_points)

    def test_next_in_M(self, table):
        x = PhasePoint(ArcId.BIG, table.len_gamma1 + 0.3, 0.2)
        y, steps = next_in_M(table, x)
        assert steps >= 1
        assert in_M(table, y)

    def test_next_in_M_keeps_member(self, table, m_points):
        y, steps = next_in_M(table, m_points[0])
        assert steps == 0
        assert y.s == pytest.approx(m_points[0].s, abs=1e-12)

    def test_measure_of_M(self, table):
        fraction = sampled_M_fraction(table, 400, np.random.default_rng(9))
        assert 0.0 < fraction < 1.0


class TestReturnMaps:
    """Test cases for return blocks."""

    def test_block_counts(self, blocks):
        assert len(blocks) >= 75
        for _, _, block in blocks:
            assert block.i0 >= 0 and block.i1 >= 0 and block.i2 >= 0
            assert block.collisions == block.i0 + block.i1 + block.i2 + 2
            assert block.region in ("X0", "X1", "X2")
            assert 0 < block.d0 <= 1.0 and 0 < block.d2 <= 1.0
            assert 0 < block.d1 <= 2.0

    def test_images_are_in_M(self, table, blocks):
        members = [in_M(table, y) for _, y, _ in blocks]
        assert np.mean(members) > 0.95

    def test_regions(self):
        assert ReturnBlock(0, 2, 0, 1, 1, 1, 1, 1).region == "X0"
        assert ReturnBlock(0, 0, 3, 1, 1, 1, 1, 1).region == "X1"
        assert ReturnBlock(4, 0, 0, 1, 1, 1, 1, 1).region == "X2"

    def test_flight_collisions_match_orbit(self, table, blocks):
        for x, y, block in blocks[:20]:
            end, _ = raw_transport(table, x, block.collisions, 0.0)
            assert end.arc_id == ArcId.UNIT
            assert end.s == pytest.approx(y.s, abs=1e-8)

    def test_hat_return(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 0.0)
        landing, block = hat_return(table, x)
        assert landing.arc_id == ArcId.UNIT
        assert block.j0 == 0 and block.j1 == 0
        assert block.tau0 == pytest.approx(1.0 + table.R - table.b)

    def test_run_block_from_big_arc(self, table):
        x = PhasePoint(ArcId.BIG, table.len_gamma1 + table.len_gamma_r / 2, 0.0)
        landing, block = run_block(table, x)
        assert landing.arc_id == ArcId.BIG
        assert block.d0 == pytest.approx(table.R)

    def test_return_map_needs_gamma1(self, table):
        with pytest.raises(ValueError):
            return_map(table, PhasePoint(ArcId.BIG, table.len_gamma1 + 0.5, 0.2))

    def test_return_orbit(self, table, m_points):
        states, blocks, error = return_orbit(table, m_points[0], 30)
        assert len(states) == len(blocks) + 1
        if error is None:
            assert len(blocks) == 30
        stats = return_time_statistics(blocks)
        assert stats['mean_return_time'] >= 2

    def test_mean_return_time_matches_measure_of_M(self, table, m_points):
        """Kac: collisions per return along an orbit of M equal 1/μ(M) estimated by sampling."""
        _, blocks, _ = return_orbit(table, m_points[0], 10000)
        assert len(blocks) >= 5000
        stats = return_time_statistics(blocks)
        fraction = sampled_M_fraction(table, 40000, np.random.default_rng([11, 0, 0]))
        assert stats['mean_return_time'] == pytest.approx(1.0 / fraction, rel=0.02)

    def test_empty_statistics(self):
        stats = return_time_statistics([])
        assert stats['returns'] == 0
        assert math.isnan(stats['mean_return_time'])


class TestReducedCurvature:
    """Test cases for reduced continued fractions of return blocks."""

    @pytest.mark.parametrize("block", synthetic_blocks())
    @pytest.mark.parametrize("B", [0.0, 0.35, -2.0])
    def test_reduced_matches_unreduced(self, block, B):
        assert proj_close(curvature_return(B, block), unreduced_return(B, block), rel=1e-9)

    def test_hat_reduction(self):
        block = ReturnBlockHat(3, 2, 1.7, 1.1, 0.4, 0.9)
        B = 0.25
        taus = [0.8] * 3 + [1.7] + [1.8] * 2 + [1.1]
        refls = [-5.0] * 4 + [-2.0 / 0.9] * 3
        assert proj_close(curvature_hat_return(B, block), transport_chain(B, taus, refls), rel=1e-9)

    def test_block_collisions_layout(self):
        block = ReturnBlock(2, 1, 3, 1.1, 0.9, 0.3, 1.5, 0.4)
        taus, refls = block_collisions(block)
        assert len(taus) == len(refls) == block.collisions
        assert taus[:3] == [0.6, 0.6, 1.1]
        assert refls[-1] == pytest.approx(-5.0)

    def test_reduced_matches_raw_orbit(self, table, blocks):
        for x, _, block in blocks[:40]:
            B = 0.2
            _, raw = raw_transport(table, x, block.collisions, B)
            assert proj_close(curvature_return(B, block), raw, rel=1e-7)

    def test_block_frame(self, blocks):
        frame = block_frame(b for _, _, b in blocks)
        assert len(frame) == len(blocks)
        for column in ('hat_d0', 'hat_R1', 'hat_tau0', 'bar_tau1', 'region'):
            assert column in frame.columns
        assert (frame['hat_d0'] <= frame['d0']).all()


class TestBackwardCurvature:
    """Test cases for unstable and stable curvatures."""

    def test_stable_is_reflected_unstable(self, table, m_points):
        x = m_points[3]
        value, _ = stable_curvature(table, x, depth=40)
        mirrored, _ = backward_cf(table, time_reverse(x), depth=40)
        assert proj_close(value, -mirrored, rel=0.0)

    def test_unstable_curvature_is_invariant(self, table, m_points):
        for x in m_points[:10]:
            try:
                here, ok_here = backward_cf(table, x, depth=600)
                forward, event = billiard_step(table, x)
                there, ok_there = backward_cf(table, forward, depth=600)
            except StepError:
                continue
            if ok_here and ok_there:
                assert proj_close(curvature_step(here, event.tau, event.refl), there, rel=1e-6)

    def test_cone_sequences_stay_ordered(self, table, m_points):
        _, orbit, _ = return_orbit(table, m_points[5], 12)
        passing = []
        for block in orbit:
            try:
                if not verify_cone(block):
                    break
            except NearTieError:
                break
            passing.append(block)
        p_seq, d_seq = cone_sequences(passing)
        assert len(p_seq) == len(passing)
        for bp, bd in zip(p_seq, d_seq):
            assert bp < bd


def test_thin_table_sampling():
    thin = table_from_chord(0.9, 10.0)
    points = sample_M_points(thin, 10, np.random.default_rng(1))
    assert len(points) == 10
