"""Avoidance-field planner and scripted session tests."""

import numpy as np
import pytest

from rackarm.control import ControllerConfig
from rackarm.errors import InfeasiblePlanError, InvalidInputError
from rackarm.geometry import (
    bounds_satisfied,
    default_geometry,
    forward_kinematics,
    joints_for_arcs,
)
from rackarm.planner import (
    AvoidanceLog,
    Obstacle,
    PlanConfig,
    avoidance_session,
    envelope_points,
    load_obstacle_trace,
    obstacle_from_row,
    plan_shape,
    project_tip,
)
from rackarm.plant import DisturbanceProfile
from rackarm import network as net

GEO = default_geometry()
N = GEO.n_segments
Q_NOM = np.full(GEO.n_joints, 100.0)
TIP_NOM = forward_kinematics(Q_NOM, GEO).world[-1, :2]
FAR = Obstacle(center=(400.0, -400.0), radius=10.0, influence=30.0)


def nominal_config(**overrides):
    base = dict(tip_target=tuple(TIP_NOM))
    base.update(overrides)
    return PlanConfig(**base)


def bent_start():
    return joints_for_arcs(
        np.array([0.3, -0.2, 0.3, 0.1, -0.2]), np.full(N, 90.0), GEO
    )


class TestObstacle:
    def test_clearance_oracle(self):
        obs = Obstacle(center=(10.0, 0.0), radius=4.0, influence=12.0)
        pts = np.array([[10.0, 0.0], [10.0, 9.0], [2.0, -6.0]])
        expected = np.array([-4.0, 5.0, 6.0])
        assert np.allclose(obs.clearance(pts), expected, atol=1e-12)

    def test_single_point(self):
        obs = Obstacle(center=(0.0, 0.0), radius=1.0, influence=5.0)
        assert obs.clearance(np.array([3.0, 4.0])) == pytest.approx(4.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(center=(0.0, 0.0), radius=0.0, influence=5.0),
            dict(center=(0.0, 0.0), radius=-1.0, influence=5.0),
            dict(center=(0.0, 0.0), radius=5.0, influence=5.0),
            dict(center=(0.0, 0.0), radius=5.0, influence=2.0),
            dict(center=(np.nan, 0.0), radius=1.0, influence=5.0),
            dict(center=(0.0, 0.0, 0.0), radius=1.0, influence=5.0),
        ],
    )
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(InvalidInputError):
            Obstacle(**kwargs)


class TestPlanConfig:
    @pytest.mark.parametrize(
        "overrides",
        [
            dict(k_rep=-1.0),
            dict(k_rest=-0.5),
            dict(tip_tol=0.0),
            dict(tip_tol=-1.0),
            dict(iters=0),
            dict(descent_step=0.0),
            dict(influence_factor=1.0),
            dict(tip_target=(np.inf, 0.0)),
        ],
    )
    def test_rejects_bad_fields(self, overrides):
        with pytest.raises(InvalidInputError):
            nominal_config(**overrides)

    def test_defaults_accepted(self):
        cfg = nominal_config()
        assert cfg.k_rep == 5e4 and cfg.iters == 50


class TestEnvelopePoints:
    def test_matches_hand_built_sampling(self):
        shape = forward_kinematics(bent_start(), GEO)
        pts = envelope_points(shape)
        nodes = shape.world[:, :2]
        verts = np.vstack([[0.0, 0.0], nodes])
        mids = 0.5 * (verts[:-1] + verts[1:])
        assert pts.shape == (2 * N, 2)
        assert np.allclose(pts, np.vstack([nodes, mids]), atol=1e-12)

    def test_base_link_sampled(self):
        # The first link's midpoint guards the region below node 0.
        shape = forward_kinematics(Q_NOM, GEO)
        pts = envelope_points(shape)
        assert np.any(np.all(np.isclose(pts, [0.0, 50.0], atol=1e-9), axis=1))


class TestProjectTip:
    def test_pulls_perturbed_joints_back(self):
        cfg = nominal_config()
        q = Q_NOM + np.linspace(-6.0, 6.0, GEO.n_joints)
        out = project_tip(q, cfg, GEO)
        resid = np.linalg.norm(forward_kinematics(out, GEO).world[-1, :2] - TIP_NOM)
        assert resid <= cfg.tip_tol
        assert bounds_satisfied(out, GEO)

    def test_on_target_is_identity(self):
        cfg = nominal_config()
        assert np.array_equal(project_tip(Q_NOM, cfg, GEO), Q_NOM)

    def test_unreachable_target_raises(self):
        cfg = nominal_config(tip_target=(0.0, 5000.0))
        with pytest.raises(InfeasiblePlanError):
            project_tip(Q_NOM, cfg, GEO)


# Obstacle/start pairs covering inactive, one-sided, symmetric, and
# penetrating-start regimes; invariants must hold across all of them.
SCENARIOS = [
    (FAR, Q_NOM),
    (FAR, bent_start()),
    (Obstacle(center=(30.0, 250.0), radius=15.0, influence=45.0), Q_NOM),
    (Obstacle(center=(0.0, 265.0), radius=12.0, influence=45.0), Q_NOM),
    (Obstacle(center=(0.0, 260.0), radius=20.0, influence=60.0), Q_NOM),
    (Obstacle(center=(-25.0, 300.0), radius=12.0, influence=36.0), bent_start()),
]


class TestPlanShape:
    def test_fixed_point_far_obstacle(self):
        # Nominal posture already satisfies the constraint and sits at the
        # field minimum, so the planner must return it untouched.
        res = plan_shape(Q_NOM, FAR, nominal_config(), GEO)
        assert np.array_equal(res.q, Q_NOM)
        assert res.iterations == 0
        assert res.potential_trace.shape == (1,)

    def test_pure_restoring_far_obstacle(self):
        # With no repulsion the field is a quadratic bowl around the
        # nominal posture; descent under the pinned tip lands on the
        # constraint projection of that posture, which here is the
        # nominal posture itself.
        res = plan_shape(bent_start(), FAR, nominal_config(), GEO)
        assert np.abs(res.q - Q_NOM).max() < 0.05
        assert res.potential < 1e-2 * res.potential_trace[0]

    @pytest.mark.parametrize("obstacle,q0", SCENARIOS)
    def test_potential_never_increases(self, obstacle, q0):
        res = plan_shape(q0, obstacle, nominal_config(), GEO)
        assert np.all(np.diff(res.potential_trace) <= 1e-12)

    @pytest.mark.parametrize("obstacle,q0", SCENARIOS)
    def test_tip_constraint_on_output(self, obstacle, q0):
        cfg = nominal_config()
        res = plan_shape(q0, obstacle, cfg, GEO)
        resid = np.linalg.norm(res.shape.world[-1, :2] - TIP_NOM)
        assert resid <= cfg.tip_tol

    @pytest.mark.parametrize("obstacle,q0", SCENARIOS)
    def test_output_feasible_and_clear(self, obstacle, q0):
        res = plan_shape(q0, obstacle, nominal_config(), GEO)
        assert bounds_satisfied(res.q, GEO)
        clear = obstacle.clearance(envelope_points(res.shape))
        assert clear.min() >= 0.0
        assert res.min_clearance == pytest.approx(clear.min())

    def test_symmetric_deflects_toward_plus_x(self):
        # Obstacle dead ahead on the straight arm's axis: the field is
        # mirror symmetric, so the documented tie-break must pick +x.
        obstacle = Obstacle(center=(0.0, 265.0), radius=12.0, influence=45.0)
        res = plan_shape(Q_NOM, obstacle, nominal_config(), GEO)
        xs = res.shape.world[:, 0]
        assert np.abs(xs).max() > 5.0
        assert xs[np.argmax(np.abs(xs))] > 0.0

    def test_symmetric_plan_reproducible(self):
        obstacle = Obstacle(center=(0.0, 265.0), radius=12.0, influence=45.0)
        a = plan_shape(Q_NOM, obstacle, nominal_config(), GEO)
        b = plan_shape(Q_NOM, obstacle, nominal_config(), GEO)
        assert np.array_equal(a.q, b.q)

    def test_escapes_penetrating_start(self):
        # Obstacle dropped directly onto the straight backbone: the
        # start penetrates, the plan must not.
        obstacle = Obstacle(center=(0.0, 260.0), radius=20.0, influence=60.0)
        assert obstacle.clearance(envelope_points(forward_kinematics(Q_NOM, GEO))).min() < 0
        res = plan_shape(Q_NOM, obstacle, nominal_config(), GEO)
        assert res.min_clearance > 0.0

    def test_tip_swallowed_is_infeasible(self):
        obstacle = Obstacle(center=(0.0, 500.0), radius=30.0, influence=90.0)
        with pytest.raises(InfeasiblePlanError):
            plan_shape(Q_NOM, obstacle, nominal_config(), GEO)


class TestObstacleTrace:
    def test_csv_round_trip(self, tmp_path):
        rows = np.array([[0.0, 10.0, 250.0, 15.0], [0.1, 8.0, 251.0, 15.0]])
        path = tmp_path / "trace.csv"
        np.savetxt(path, rows, delimiter=",")
        assert np.allclose(load_obstacle_trace(str(path)), rows, atol=1e-12)

    def test_single_row_file(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("0.0,5.0,200.0,12.0\n")
        assert load_obstacle_trace(str(path)).shape == (1, 4)

    def test_rejects_bad_width(self, tmp_path):
        path = tmp_path / "bad.csv"
        np.savetxt(path, np.zeros((3, 3)), delimiter=",")
        with pytest.raises(InvalidInputError):
            load_obstacle_trace(str(path))

    def test_rejects_bad_radius(self, tmp_path):
        path = tmp_path / "badr.csv"
        path.write_text("0.0,5.0,200.0,0.0\n")
        with pytest.raises(InvalidInputError):
            load_obstacle_trace(str(path))

    def test_row_to_obstacle_uses_influence_factor(self):
        cfg = nominal_config(influence_factor=4.0)
        obs = obstacle_from_row(np.array([1.0, 3.0, 4.0, 2.0]), cfg)
        assert obs.center == (3.0, 4.0)
        assert obs.influence == pytest.approx(8.0)


CLEAN = DisturbanceProfile()
PHY_CTRL = ControllerConfig(force_beta=1.0, dt_delay=0.0)


def constant_trace(frames, x, y, radius):
    return np.column_stack(
        [np.arange(frames) * 0.1, np.full(frames, x), np.full(frames, y), np.full(frames, radius)]
    )


class TestAvoidanceSession:
    def test_far_obstacle_tip_converges(self):
        trace = constant_trace(20, 400.0, -400.0, 10.0)
        log = avoidance_session(
            None, CLEAN, trace, nominal_config(), PHY_CTRL, GEO,
            q0=bent_start(), steps_per_frame=5,
        )
        assert log.steps == 100
        assert not log.plan_failed.any()
        assert all(f is None for f in log.faults)
        assert log.tip_error[0] > 50.0
        assert log.tip_error[-10:].mean() < 2.0

    def test_sweep_keeps_clearance_positive(self):
        frames = 25
        xs = np.linspace(120.0, 25.0, frames)
        trace = np.column_stack(
            [np.arange(frames) * 0.1, xs, np.full(frames, 250.0), np.full(frames, 18.0)]
        )
        log = avoidance_session(None, CLEAN, trace, nominal_config(), PHY_CTRL, GEO, steps_per_frame=5)
        assert np.all(log.min_clearance > 0.0)
        assert log.tip_error.max() < 5.0

    def test_removal_restores_nominal(self):
        # Obstacle parks near the arm, then teleports far away; the
        # smoothed distance to the nominal posture must fall afterward.
        near = constant_trace(15, 35.0, 250.0, 15.0)
        far = constant_trace(25, 500.0, 250.0, 15.0)
        far[:, 0] += near[-1, 0] + 0.1
        log = avoidance_session(
            None, CLEAN, np.vstack([near, far]), nominal_config(), PHY_CTRL, GEO,
            steps_per_frame=5,
        )
        r = np.linalg.norm(log.q - 100.0, axis=1)
        switch = 15 * 5
        assert r[switch] > 1.0
        window = 10
        smoothed = np.convolve(r, np.ones(window) / window, mode="valid")
        assert np.all(np.diff(smoothed[switch:]) <= 1e-6)
        assert r[-1] < 0.1 * r[switch]

    def test_infeasible_frame_holds_previous_target(self):
        trace = np.array(
            [
                [0.0, 400.0, 400.0, 10.0],
                [0.1, 0.0, 500.0, 40.0],  # swallows the pinned tip
                [0.2, 400.0, 400.0, 10.0],
            ]
        )
        log = avoidance_session(None, CLEAN, trace, nominal_config(), PHY_CTRL, GEO, steps_per_frame=2)
        assert list(log.plan_failed) == [False, False, True, True, False, False]
        assert np.array_equal(log.target_q[1], log.target_q[2])
        assert np.array_equal(log.target_q[1], log.target_q[3])

    def test_gated_controller_logs_beta(self):
        params = net.init_params(3, N, hidden=16, gru_hidden=8, head_hidden=8)
        trace = constant_trace(3, 400.0, 400.0, 10.0)
        log = avoidance_session(
            params, CLEAN, trace, nominal_config(),
            ControllerConfig(dt_delay=0.0), GEO, steps_per_frame=2,
        )
        assert isinstance(log, AvoidanceLog)
        assert log.beta.shape == (6, N, 3)
        assert np.all((log.beta > 0.0) & (log.beta < 1.0))
        assert log.q.shape == (6, GEO.n_joints)
        assert log.obstacle.shape == (6, 3)

    def test_rejects_bad_trace_and_steps(self):
        trace = constant_trace(2, 400.0, 400.0, 10.0)
        with pytest.raises(InvalidInputError):
            avoidance_session(None, CLEAN, trace[:, :3], nominal_config(), PHY_CTRL, GEO)
        with pytest.raises(InvalidInputError):
            avoidance_session(None, CLEAN, trace, nominal_config(), PHY_CTRL, GEO, steps_per_frame=0)
