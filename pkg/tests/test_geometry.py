"""Geometry unit tests: arc mapping, FK, analytical Jacobian, bounds.

Oracles are independent re-derivations: midpoint-rule integration of the
constant-curvature tangent field, 3x3 homogeneous-matrix products for the
chain composition, and central finite differences for the Jacobian.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rackarm.errors import BoundViolationError, InvalidInputError
from rackarm.geometry import (
    RobotGeometry,
    arc_parameters,
    bounds_satisfied,
    clamp_to_bounds,
    compose_chain,
    default_geometry,
    forward_kinematics,
    joint_pairs,
    joints_for_arcs,
    physical_jacobian,
    segment_arc,
    segment_pose,
)

GEO = default_geometry()


def random_interior_q(rng: np.random.Generator, geo: RobotGeometry) -> np.ndarray:
    """In-bound joint vector with margin from both hard and coupled limits."""
    length = rng.uniform(30.0, 120.0, geo.n_segments)
    theta = rng.uniform(-0.85, 0.85, geo.n_segments)
    return joints_for_arcs(theta, length, geo)


class TestSegmentArc:
    def test_symmetric_extension_is_straight(self):
        assert segment_arc(70.0, 70.0, 40.0) == (0.0, 70.0)

    def test_differential_extension(self):
        theta, length = segment_arc(80.0, 60.0, 40.0)
        assert theta == pytest.approx(0.5, abs=1e-15)
        assert length == pytest.approx(70.0, abs=1e-15)

    def test_swap_flips_bend_sign(self):
        theta, length = segment_arc(60.0, 80.0, 40.0)
        assert theta == pytest.approx(-0.5, abs=1e-15)
        assert length == pytest.approx(70.0, abs=1e-15)

    def test_rejects_bad_width_and_nonfinite(self):
        with pytest.raises(InvalidInputError):
            segment_arc(70.0, 70.0, 0.0)
        with pytest.raises(InvalidInputError):
            segment_arc(np.nan, 70.0, 40.0)


class TestSegmentPose:
    def test_straight(self):
        np.testing.assert_allclose(segment_pose(0.0, 70.0), [0.0, 70.0, 0.0], atol=0)

    def test_quarter_circle_is_symmetric(self):
        pose = segment_pose(np.pi / 2, 70.0)
        np.testing.assert_allclose(pose[:2], [140.0 / np.pi] * 2, rtol=1e-12)
        assert pose[2] == pytest.approx(np.pi / 2)

    def test_matches_arc_integration(self):
        # Oracle: midpoint-rule quadrature of the tangent field
        # (sin(kappa s), cos(kappa s)) along the arc, one million panels.
        theta, length = 0.5, 70.0
        kappa = theta / length
        n = 1_000_000
        h = length / n
        s = (np.arange(n) + 0.5) * h
        x_ref = np.sum(np.sin(kappa * s)) * h
        y_ref = np.sum(np.cos(kappa * s)) * h
        pose = segment_pose(theta, length)
        assert abs(pose[0] - x_ref) < 1e-9
        assert abs(pose[1] - y_ref) < 1e-9
        assert pose[2] == theta

    def test_small_angle_branch_is_continuous(self):
        for sign in (1.0, -1.0):
            below = segment_pose(sign * (1e-6 - 1e-13), 70.0)
            above = segment_pose(sign * (1e-6 + 1e-13), 70.0)
            np.testing.assert_allclose(below, above, atol=1e-10)

    def test_zero_length_degenerate(self):
        np.testing.assert_allclose(segment_pose(0.3, 0.0), [0.0, 0.0, 0.3], atol=0)
        with pytest.raises(InvalidInputError):
            segment_pose(0.3, -1.0)


class TestForwardKinematics:
    def test_straight_chain(self):
        q = np.full(GEO.n_joints, 70.0)
        shape = forward_kinematics(q, GEO)
        expected = np.stack(
            [np.zeros(5), 70.0 * np.arange(1, 6), np.zeros(5)], axis=1
        )
        np.testing.assert_allclose(shape.world, expected, atol=1e-12)
        np.testing.assert_allclose(shape.local[:, 1], 70.0)

    def test_single_segment_reduces_to_arc_pose(self):
        geo1 = default_geometry(n_segments=1)
        q = np.array([90.0, 55.0])
        shape = forward_kinematics(q, geo1)
        theta, length = segment_arc(90.0, 55.0, 40.0)
        np.testing.assert_allclose(shape.world[0], segment_pose(theta, length), rtol=1e-15)
        np.testing.assert_allclose(shape.local[0], shape.world[0], rtol=1e-15)

    def test_matches_homogeneous_matrix_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            q = random_interior_q(rng, GEO)
            shape = forward_kinematics(q, GEO)
            mat = np.eye(3)
            for i, (lx, ly, lth) in enumerate(shape.local):
                c, s = np.cos(lth), np.sin(lth)
                step = np.array([[c, -s, lx], [s, c, ly], [0.0, 0.0, 1.0]])
                mat = mat @ step
                np.testing.assert_allclose(
                    mat[:2, 2], shape.world[i, :2], atol=1e-9
                )
                # Compare orientations as unit complex numbers: the summed
                # angle may exceed pi while the matrix stays wrapped.
                wrapped = np.exp(1j * shape.world[i, 2])
                assert abs(wrapped - complex(mat[0, 0], mat[1, 0])) < 1e-9

    def test_out_of_limit_reports_indices(self):
        q = np.full(GEO.n_joints, 70.0)
        q[3] = 5.0
        q[8] = 200.0
        with pytest.raises(BoundViolationError) as err:
            forward_kinematics(q, GEO)
        assert err.value.indices == (3, 8)

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidInputError):
            forward_kinematics(np.full(7, 70.0), GEO)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_left_right_swap_mirrors_shape(self, seed):
        rng = np.random.default_rng(seed)
        q = random_interior_q(rng, GEO)
        swapped = joint_pairs(q, GEO)[:, ::-1].reshape(-1)
        a = forward_kinematics(q, GEO).world
        b = forward_kinematics(swapped, GEO).world
        np.testing.assert_allclose(b[:, 0], -a[:, 0], atol=1e-9)
        np.testing.assert_allclose(b[:, 1], a[:, 1], atol=1e-9)
        np.testing.assert_allclose(b[:, 2], -a[:, 2], atol=1e-9)

    def test_compose_chain_reproduces_world(self):
        rng = np.random.default_rng(11)
        q = random_interior_q(rng, GEO)
        shape = forward_kinematics(q, GEO)
        np.testing.assert_array_equal(compose_chain(shape.local), shape.world)


def finite_difference_jacobian(q: np.ndarray, geo: RobotGeometry, step: float = 1e-4):
    n = q.size
    jac = np.empty((3 * geo.n_segments, n))
    for m in range(n):
        hi = q.copy()
        lo = q.copy()
        hi[m] += step
        lo[m] -= step
        diff = forward_kinematics(hi, geo).world - forward_kinematics(lo, geo).world
        jac[:, m] = diff.reshape(-1) / (2.0 * step)
    return jac


class TestPhysicalJacobian:
    def test_straight_chain_axial_entries(self):
        q = np.full(GEO.n_joints, 70.0)
        jac = physical_jacobian(q, GEO).full
        for i in range(GEO.n_segments):
            assert jac[3 * i + 1, 2 * i] == pytest.approx(0.5)
            assert jac[3 * i + 1, 2 * i + 1] == pytest.approx(0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_distal_blocks_exactly_zero(self, seed):
        rng = np.random.default_rng(seed)
        q = random_interior_q(rng, GEO)
        jac = physical_jacobian(q, GEO).full
        for k in range(GEO.n_segments):
            for j in range(k + 1, GEO.n_segments):
                block = jac[3 * k : 3 * k + 3, 2 * j : 2 * j + 2]
                assert np.all(block == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            q = random_interior_q(rng, GEO)
            analytic = physical_jacobian(q, GEO).full
            numeric = finite_difference_jacobian(q, GEO)
            scale = max(1.0, np.abs(analytic).max())
            assert np.abs(analytic - numeric).max() / scale < 1e-5

    def test_local_blocks_match_finite_differences(self):
        rng = np.random.default_rng(29)
        q = random_interior_q(rng, GEO)
        blocks = physical_jacobian(q, GEO).local_blocks
        step = 1e-4
        for i in range(GEO.n_segments):
            for m in range(2):
                hi = q.copy()
                lo = q.copy()
                hi[2 * i + m] += step
                lo[2 * i + m] -= step
                dloc = (
                    forward_kinematics(hi, GEO).local[i]
                    - forward_kinematics(lo, GEO).local[i]
                ) / (2 * step)
                np.testing.assert_allclose(blocks[i, :, m], dloc, atol=1e-6)

    def test_jacobian_near_straight_configuration(self):
        # Exercises the series branch of the offset derivatives.
        q = np.full(GEO.n_joints, 70.0)
        q[0] += 2e-5  # theta_0 = 5e-7, inside the series window
        analytic = physical_jacobian(q, GEO).full
        numeric = finite_difference_jacobian(q, GEO)
        scale = max(1.0, np.abs(analytic).max())
        assert np.abs(analytic - numeric).max() / scale < 1e-5


class TestBounds:
    def test_in_bound_unchanged(self):
        q = np.full(GEO.n_joints, 70.0)
        np.testing.assert_array_equal(clamp_to_bounds(q, GEO), q)

    def test_hard_limit_clip(self):
        q = np.full(GEO.n_joints, 70.0)
        q[0] = GEO.q_max + 10.0
        out = clamp_to_bounds(q, GEO)
        assert out[0] <= GEO.q_max
        assert bounds_satisfied(out, GEO)

    def test_coupled_violation_projected(self):
        # Differential far past the per-segment window: the projection must
        # end up with f_min(q_R) <= q_L <= f_max(q_R), checked by evaluating
        # the bound polynomials directly on the output.
        q = np.full(GEO.n_joints, 70.0)
        q[0], q[1] = 140.0, 20.0
        out = clamp_to_bounds(q, GEO)
        pairs = out.reshape(-1, 2)
        for i in range(GEO.n_segments):
            left, right = pairs[i]
            assert GEO.eval_bound_min(i, right) - 1e-9 <= left <= GEO.eval_bound_max(i, right) + 1e-9
            assert GEO.eval_bound_min(i, left) - 1e-9 <= right <= GEO.eval_bound_max(i, left) + 1e-9
        assert bounds_satisfied(out, GEO)

    def test_total_on_nonfinite(self):
        q = np.full(GEO.n_joints, 70.0)
        q[2] = np.nan
        q[5] = np.inf
        out = clamp_to_bounds(q, GEO)
        assert np.all(np.isfinite(out))
        assert bounds_satisfied(out, GEO)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=-500.0, max_value=500.0, allow_nan=False),
            min_size=10,
            max_size=10,
        )
    )
    def test_clamp_idempotent_and_feasible(self, values):
        q = np.asarray(values)
        once = clamp_to_bounds(q, GEO)
        twice = clamp_to_bounds(once, GEO)
        np.testing.assert_array_equal(once, twice)
        assert bounds_satisfied(once, GEO)

    def test_invalid_geometry_rejected(self):
        with pytest.raises(InvalidInputError):
            default_geometry(n_segments=0)
        # Crossing polynomials: f_min above f_max somewhere in range.
        with pytest.raises(InvalidInputError):
            RobotGeometry(
                n_segments=1,
                width=np.array([40.0]),
                q_min=10.0,
                q_max=150.0,
                bound_min_coeffs=np.array([[50.0, 1.0]]),
                bound_max_coeffs=np.array([[-50.0, 1.0]]),
            )


class TestArcRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_joints_for_arcs_inverts_arc_parameters(self, seed):
        rng = np.random.default_rng(seed)
        q = random_interior_q(rng, GEO)
        theta, length = arc_parameters(q, GEO)
        np.testing.assert_allclose(joints_for_arcs(theta, length, GEO), q, atol=1e-12)
