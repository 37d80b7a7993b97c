"""Unit tests for billiard_map module."""

import math

import numpy as np
import pytest

from modules.core.billiard_map import (
    PhasePoint, StepError, advance, backward_step, billiard_step, eta, finite_difference_matrix,
    half_chord, iterate, orbit_frame, phase_point, position, same_arc_jump, sample_phase_points,
    tangent_matrix, tangent_step, tangent_vector, time_reverse, wavefront_curvature,
)
from modules.core.cfrac import curvature_step, proj_close
from modules.core.geometry import ArcId, apex_big, apex_small, arc_point, build_table, contains


@pytest.fixture
def table():
    return build_table(1.5, 2.0)


@pytest.fixture
def sample(table):
    rng = np.random.default_rng([7, 0, 0])
    return [x for x in sample_phase_points(table, 60, rng) if abs(x.phi) < 1.2]


def corner_aimed(table, phi=1.0):
    """Γ₁ state whose same-arc chord ends exactly at corner B."""
    theta0 = table.half_angle_small - (math.pi - 2.0 * phi)
    return PhasePoint(ArcId.UNIT, theta0 + table.half_angle_small, phi)


def velocity(table, x):
    """Unit velocity leaving the reflection point of x."""
    frame = arc_point(table, x.s)
    c, sn = math.cos(x.phi), math.sin(x.phi)
    return (
        c * frame.inward_normal[0] + sn * frame.tangent[0],
        c * frame.inward_normal[1] + sn * frame.tangent[1],
    )


class TestBilliardStep:
    """Test cases for single collisions."""

    def test_period_two_orbit(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 0.0)
        assert position(table, x) == pytest.approx(apex_small(table), abs=1e-12)
        y, event = billiard_step(table, x)
        assert y.arc_id == ArcId.BIG
        assert position(table, y) == pytest.approx(apex_big(table), abs=1e-12)
        assert y.phi == pytest.approx(0.0, abs=1e-12)
        assert event.tau == pytest.approx(1.0 + table.R - table.b, abs=1e-12)
        z, back = billiard_step(table, y)
        assert z.s == pytest.approx(x.s, abs=1e-12)
        assert back.tau == pytest.approx(event.tau, abs=1e-12)

    def test_same_arc_chord(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 1.2)
        y, event = billiard_step(table, x)
        assert y.arc_id == ArcId.UNIT
        assert y.phi == x.phi
        assert y.s == pytest.approx(x.s + math.pi - 2.4, abs=1e-12)
        assert event.tau == pytest.approx(2.0 * math.cos(1.2), abs=1e-12)
        assert event.d == pytest.approx(half_chord(table, x))
        assert event.refl == pytest.approx(-2.0 / event.d)

    def test_flight_length_is_distance(self, table, sample):
        for x in sample:
            y, event = billiard_step(table, x)
            px, py = position(table, x)
            qx, qy = position(table, y)
            assert event.tau == pytest.approx(math.hypot(qx - px, qy - py), rel=1e-10)

    def test_specular_reflection_stays_inside(self, table, sample):
        for x in sample:
            y, _ = billiard_step(table, x)
            assert abs(y.phi) < math.pi / 2
            px, py = position(table, x)
            qx, qy = position(table, y)
            assert contains(table, ((px + qx) / 2, (py + qy) / 2), slack=1e-12)

    def test_reflection_law(self, table, sample):
        crossings = 0
        for x in sample:
            y, _ = billiard_step(table, x)
            crossings += y.arc_id != x.arc_id
            v = velocity(table, x)
            w = velocity(table, y)
            nx, ny = arc_point(table, y.s).inward_normal
            vn = v[0] * nx + v[1] * ny
            assert vn < 0
            assert w == pytest.approx((v[0] - 2.0 * vn * nx, v[1] - 2.0 * vn * ny), abs=1e-10)
        assert crossings > 0

    def test_reflection_law_across_corner_b(self, table):
        x = PhasePoint(ArcId.UNIT, table.len_gamma1 - 0.05, 1.4)
        y, _ = billiard_step(table, x)
        assert y.arc_id == ArcId.BIG
        v = velocity(table, x)
        w = velocity(table, y)
        nx, ny = arc_point(table, y.s).inward_normal
        vn = v[0] * nx + v[1] * ny
        assert w == pytest.approx((v[0] - 2.0 * vn * nx, v[1] - 2.0 * vn * ny), abs=1e-10)
        assert w == pytest.approx((0.197, -0.980), abs=5e-3)
        assert w != pytest.approx((-v[0], -v[1]), abs=1e-3)

    def test_tangential_raises(self, table):
        x = PhasePoint(ArcId.UNIT, 1.0, math.pi / 2 - 1e-12)
        with pytest.raises(StepError) as exc:
            billiard_step(table, x)
        assert exc.value.kind == "tangential"

    def test_corner_hit_raises(self, table):
        with pytest.raises(StepError) as exc:
            billiard_step(table, corner_aimed(table))
        assert exc.value.kind == "corner_hit"

    def test_phase_point_resolves_arc(self, table):
        assert phase_point(table, 0.5, 0.0).arc_id == ArcId.UNIT
        assert phase_point(table, table.len_gamma1 + 0.1, 0.0).arc_id == ArcId.BIG
        wrapped = phase_point(table, table.len_gamma + 0.5, 0.1)
        assert wrapped.s == pytest.approx(0.5)


class TestTimeReversal:
    """Test cases for Φ-conjugacy."""

    def test_backward_step_inverts(self, table, sample):
        for x in sample:
            y, _ = billiard_step(table, x)
            back = backward_step(table, y)
            assert back.arc_id == x.arc_id
            assert back.s == pytest.approx(x.s, abs=1e-9)
            assert back.phi == pytest.approx(x.phi, abs=1e-9)

    def test_time_reverse_is_involution(self):
        x = PhasePoint(ArcId.BIG, 4.0, 0.3)
        assert time_reverse(time_reverse(x)) == x


class TestTangentMap:
    """Test cases for the derivative of the map."""

    def test_same_arc_matrix(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 1.2)
        assert tangent_matrix(table, x) == pytest.approx(np.array([[1.0, -2.0], [0.0, 1.0]]), abs=1e-12)

    def test_measure_preservation(self, table, sample):
        for x in sample:
            y, _ = billiard_step(table, x)
            det = abs(np.linalg.det(tangent_matrix(table, x)))
            assert det * math.cos(y.phi) / math.cos(x.phi) == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("s_offset,phi", [(0.0, 0.3), (0.0, 1.2), (0.4, -0.5)])
    def test_finite_differences_gamma1(self, table, s_offset, phi):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small + s_offset, phi)
        analytic = tangent_matrix(table, x)
        numeric = finite_difference_matrix(table, x)
        scale = np.abs(analytic).max()
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-5 * scale)

    def test_finite_differences_gamma_r(self, table):
        x = PhasePoint(ArcId.BIG, table.len_gamma1 + table.len_gamma_r / 2, 0.4)
        analytic = tangent_matrix(table, x)
        numeric = finite_difference_matrix(table, x)
        scale = np.abs(analytic).max()
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-5 * scale)

    def test_wavefront_roundtrip(self, table, sample):
        for x in sample[:10]:
            for B in (-1.5, 0.0, 0.4, 3.0):
                v = tangent_vector(table, x, B)
                assert wavefront_curvature(table, x, v) == pytest.approx(B, abs=1e-12)

    def test_tangent_map_transports_curvature(self, table, sample):
        for x in sample:
            B = 0.3
            y, event = billiard_step(table, x)
            v_next = tangent_step(table, x, tangent_vector(table, x, B))
            expected = curvature_step(B, event.tau, event.refl)
            assert proj_close(wavefront_curvature(table, y, v_next), expected, rel=1e-8)


class TestEta:
    """Test cases for same-arc run lengths."""

    def test_run_length(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 1.2)
        assert eta(table, x) == (2, False)

    def test_cap(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 1.2)
        assert eta(table, x, cap=1) == (1, True)

    def test_leaving_immediately(self, table):
        x = PhasePoint(ArcId.UNIT, table.half_angle_small, 0.0)
        assert eta(table, x) == (0, False)

    def test_tangential(self, table):
        with pytest.raises(StepError):
            eta(table, PhasePoint(ArcId.UNIT, 1.0, -math.pi / 2 + 1e-12))

    def test_same_arc_jump_matches_iteration(self, table):
        x = PhasePoint(ArcId.UNIT, 0.05, 1.4)
        n, exceeded = eta(table, x)
        assert not exceeded and n >= 5
        jumped = same_arc_jump(table, x, 5)
        stepped, events = advance(table, x, 5)
        assert jumped.s == pytest.approx(stepped.s, abs=1e-12)
        assert jumped.phi == stepped.phi
        assert all(e.point.arc_id == ArcId.UNIT for e in events)


class TestOrbits:
    """Test cases for orbit generation and sampling."""

    def test_iterate(self, table, sample):
        states, events, error = iterate(table, sample[0], 50)
        assert error is None
        assert len(states) == 51
        assert len(events) == 50
        assert events[0].point == sample[0]

    def test_iterate_stops_on_singularity(self, table):
        states, events, error = iterate(table, corner_aimed(table), 10)
        assert isinstance(error, StepError)
        assert len(states) == 1
        assert events == []

    def test_orbit_frame(self, table, sample):
        frame = orbit_frame(table, sample[1], 20)
        assert list(frame.columns) == ['step', 'arcId', 's', 'phi', 'tau', 'd']
        assert len(frame) == 20
        assert set(frame['arcId']) <= {'Unit', 'Big'}

    def test_sample_phase_points(self, table):
        rng = np.random.default_rng(42)
        points = sample_phase_points(table, 4000, rng)
        assert len(points) == 4000
        s = np.array([p.s for p in points])
        phi = np.array([p.phi for p in points])
        assert s.min() >= 0 and s.max() < table.len_gamma
        assert np.abs(phi).max() < math.pi / 2
        # dμ ∝ cos φ dφ makes sin φ uniform on (−1, 1)
        assert abs(np.mean(np.sin(phi))) < 0.05
        assert np.mean(np.abs(np.sin(phi))) == pytest.approx(0.5, abs=0.03)
        frac_gamma1 = np.mean([p.arc_id == ArcId.UNIT for p in points])
        assert frac_gamma1 == pytest.approx(table.len_gamma1 / table.len_gamma, abs=0.04)

    def test_sampling_is_seeded(self, table):
        a = sample_phase_points(table, 10, np.random.default_rng([1, 2, 3]))
        b = sample_phase_points(table, 10, np.random.default_rng([1, 2, 3]))
        assert a == b

    def test_positions_lie_on_boundary(self, table, sample):
        for x in sample[:10]:
            p = arc_point(table, x.s)
            assert p.arc_id == x.arc_id
