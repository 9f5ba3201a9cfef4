"""Obstacle-avoiding target-shape planner.

The arm has more actuators than the tip constraint consumes, so a whole
family of shapes keeps the tip pinned while the backbone moves.  This
module searches that family with a penalty field: a repulsive term that
grows as sampled backbone points close on an obstacle disc, plus a
restoring term that pulls the joints back to a nominal extended posture.
Descent runs in joint space; after every candidate step the shape is
projected back onto the fixed-tip constraint with a couple of damped
Newton iterations on the tip rows of the analytical Jacobian.

The backbone is sampled at every node and every link midpoint (the base
link included), a conservative stand-in for the continuous envelope.
Axially symmetric deadlocks - obstacle dead ahead on the straight arm's
axis - are broken deterministically toward +x.
"""

from dataclasses import dataclass

import numpy as np

from .control import ControllerConfig, control_cycle
from .errors import InfeasiblePlanError, InvalidInputError
from .geometry import (
    RobotGeometry,
    ShapeState,
    _fk_unchecked,
    clamp_to_bounds,
    forward_kinematics,
    physical_jacobian,
)
from .network import NetworkParams
from .plant import DisturbanceProfile, make_initial_state, observe, plant_step

_GRAD_H = 1e-4          # mm, central-difference step for the field gradient
_NEWTON_BUDGET = 25     # tip-projection iterations per candidate
_NEWTON_DAMPING = 1e-8  # mm^2, regularizes the 2x2 tip solve
_BARRIER_FLOOR = 0.5    # mm clearance below which the barrier turns linear


@dataclass(frozen=True)
class Obstacle:
    """Disc obstacle with a surrounding influence band."""

    center: tuple[float, float]
    radius: float
    influence: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        if center.shape != (2,) or not np.all(np.isfinite(center)):
            raise InvalidInputError("obstacle center must be a finite (x, y) pair")
        object.__setattr__(self, "center", (float(center[0]), float(center[1])))
        if not (self.radius > 0):
            raise InvalidInputError("obstacle radius must be positive")
        if not (self.influence > self.radius):
            raise InvalidInputError("influence must exceed the radius")

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def clearance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance from points to the disc surface (< 0 inside)."""
        points = np.asarray(points, dtype=float)
        return np.linalg.norm(points - self.position, axis=-1) - self.radius


@dataclass(frozen=True)
class PlanConfig:
    """Shape-search knobs; gains are per-call constants, all validated."""

    tip_target: tuple[float, float]
    k_rep: float = 5e4
    k_rest: float = 0.1
    q_nominal: float = 100.0
    tip_tol: float = 1.0
    iters: int = 50
    descent_step: float = 2.0
    influence_factor: float = 3.0  # influence radius per unit obstacle radius

    def __post_init__(self):
        tip = np.asarray(self.tip_target, dtype=float)
        if tip.shape != (2,) or not np.all(np.isfinite(tip)):
            raise InvalidInputError("tip_target must be a finite (x, y) pair")
        object.__setattr__(self, "tip_target", (float(tip[0]), float(tip[1])))
        if self.k_rep < 0 or self.k_rest < 0:
            raise InvalidInputError("field gains must be non-negative")
        if not (self.tip_tol > 0):
            raise InvalidInputError("tip_tol must be positive")
        if self.iters < 1:
            raise InvalidInputError("iters must be at least 1")
        if not (self.descent_step > 0):
            raise InvalidInputError("descent_step must be positive")
        if not (self.influence_factor > 1):
            raise InvalidInputError("influence_factor must exceed 1")


@dataclass
class PlanResult:
    q: np.ndarray
    shape: ShapeState
    potential: float
    min_clearance: float
    iterations: int
    potential_trace: np.ndarray  # field value at the start plus each accepted step


def envelope_points(shape: ShapeState) -> np.ndarray:
    """Backbone collision samples: every node plus every link midpoint."""
    world = np.asarray(getattr(shape, "world", shape), dtype=float)
    nodes = world[:, :2]
    vertices = np.vstack([[0.0, 0.0], nodes])
    midpoints = 0.5 * (vertices[:-1] + vertices[1:])
    return np.vstack([nodes, midpoints])


def _repulsion(d: np.ndarray, influence: float) -> np.ndarray:
    """Per-sample barrier (1/d - 1/influence)^2, active inside the band.

    The reciprocal saturates once a sample penetrates the disc, which
    would leave descent with no outward slope, so below a small
    clearance floor the barrier continues linearly with the slope it had
    at the floor.
    """
    safe = np.maximum(d, _BARRIER_FLOOR)
    base = np.maximum(0.0, 1.0 / safe - 1.0 / influence)
    slope = 2.0 * base / safe**2
    return base**2 + slope * np.maximum(0.0, _BARRIER_FLOOR - d)


def _potential(q: np.ndarray, obstacle: Obstacle, cfg: PlanConfig, geo: RobotGeometry, shape=None) -> float:
    shape = _fk_unchecked(q, geo) if shape is None else shape
    d = obstacle.clearance(envelope_points(shape))
    rest = q - cfg.q_nominal
    return float(
        cfg.k_rep * np.sum(_repulsion(d, obstacle.influence))
        + cfg.k_rest * np.dot(rest, rest)
    )


def _field_gradient(q: np.ndarray, obstacle: Obstacle, cfg: PlanConfig, geo: RobotGeometry) -> np.ndarray:
    grad = np.empty_like(q)
    probe = q.copy()
    for i in range(q.shape[0]):
        probe[i] = q[i] + _GRAD_H
        hi = _potential(probe, obstacle, cfg, geo)
        probe[i] = q[i] - _GRAD_H
        lo = _potential(probe, obstacle, cfg, geo)
        probe[i] = q[i]
        grad[i] = (hi - lo) / (2.0 * _GRAD_H)
    return grad


def project_tip(q: np.ndarray, cfg: PlanConfig, geo: RobotGeometry) -> np.ndarray:
    """Pull the tip back onto the target with damped Newton steps.

    Each step solves the 2x2 normal system of the tip's translational
    Jacobian rows for the least-norm joint correction, then re-clamps.
    """
    q = clamp_to_bounds(np.asarray(q, dtype=float), geo)
    target = np.asarray(cfg.tip_target, dtype=float)
    for _ in range(_NEWTON_BUDGET):
        shape = forward_kinematics(q, geo)
        resid = shape.world[-1, :2] - target
        if np.linalg.norm(resid) <= cfg.tip_tol:
            return q
        j_tip = physical_jacobian(q, geo).full[-3:-1, :]
        gram = j_tip @ j_tip.T + _NEWTON_DAMPING * np.eye(2)
        dq = -j_tip.T @ np.linalg.solve(gram, resid)
        q = clamp_to_bounds(q + dq, geo)
    resid = np.linalg.norm(forward_kinematics(q, geo).world[-1, :2] - target)
    raise InfeasiblePlanError(
        f"tip projection stalled {resid:.2f} mm from the target"
    )


def _bend_bias(n_joints: int) -> np.ndarray:
    """Joint pattern that bends every segment toward +x when added to q."""
    bias = np.empty(n_joints)
    bias[0::2] = 1.0
    bias[1::2] = -1.0
    return bias / np.linalg.norm(bias)


def plan_shape(
    q: np.ndarray, obstacle: Obstacle, cfg: PlanConfig, geo: RobotGeometry
) -> PlanResult:
    """Descend the avoidance field from q under the fixed-tip constraint.

    Gradient steps are backtracked until the (projected, clamped)
    candidate does not increase the field, so the potential is
    non-increasing across accepted iterations.  A plan whose backbone
    still penetrates the obstacle, or whose tip cannot be pinned, raises
    an infeasible-plan error and leaves the caller's previous target in
    force.
    """
    q = clamp_to_bounds(np.asarray(q, dtype=float), geo)
    q = project_tip(q, cfg, geo)
    value = _potential(q, obstacle, cfg, geo)
    trace = [value]
    accepted = 0

    for _ in range(cfg.iters):
        grad = _field_gradient(q, obstacle, cfg, geo)
        norm = np.linalg.norm(grad)
        if norm < 1e-12:
            break
        direction = grad / norm

        points = envelope_points(_fk_unchecked(q, geo))
        rep_active = np.any(obstacle.clearance(points) < obstacle.influence)
        pairs = direction.reshape(-1, 2)
        if rep_active and np.abs(pairs[:, 0] - pairs[:, 1]).max() < 1e-6:
            # Obstacle dead ahead of a mirror-symmetric arm: the field
            # cannot choose a side, so deflect toward +x by convention.
            direction = direction - 0.5 * _bend_bias(q.shape[0])
            direction /= np.linalg.norm(direction)

        step = cfg.descent_step
        moved = False
        for _ in range(8):
            try:
                candidate = project_tip(clamp_to_bounds(q - step * direction, geo), cfg, geo)
            except InfeasiblePlanError:
                step *= 0.5
                continue
            cand_value = _potential(candidate, obstacle, cfg, geo)
            if cand_value <= value:
                if np.linalg.norm(candidate - q) < 1e-9:
                    break
                q, value, moved = candidate, cand_value, True
                trace.append(value)
                accepted += 1
                break
            step *= 0.5
        if not moved:
            break

    shape = forward_kinematics(q, geo)
    clearance = float(obstacle.clearance(envelope_points(shape)).min())
    if clearance < 0:
        raise InfeasiblePlanError(
            f"planned backbone penetrates the obstacle by {-clearance:.2f} mm"
        )
    return PlanResult(
        q=q,
        shape=shape,
        potential=value,
        min_clearance=clearance,
        iterations=accepted,
        potential_trace=np.array(trace),
    )


# -- scripted avoidance runs ---------------------------------------------------


def load_obstacle_trace(path: str) -> np.ndarray:
    """Read a (t, x, y, radius) CSV into a float array, one row per frame."""
    trace = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
    if trace.shape[1] != 4:
        raise InvalidInputError("obstacle trace rows must be t, x, y, radius")
    if not np.all(np.isfinite(trace)) or np.any(trace[:, 3] <= 0):
        raise InvalidInputError("obstacle trace has non-finite rows or bad radii")
    return trace


def obstacle_from_row(row: np.ndarray, cfg: PlanConfig) -> Obstacle:
    t, x, y, radius = (float(v) for v in row)
    del t
    return Obstacle(center=(x, y), radius=radius, influence=cfg.influence_factor * radius)


@dataclass
class AvoidanceLog:
    """Per-control-step record of one avoidance run."""

    q: np.ndarray              # (T, 2N) joint trajectory
    target_q: np.ndarray       # (T, 2N) planner output being tracked
    tip_error: np.ndarray      # (T,) true tip distance to the pinned target
    min_clearance: np.ndarray  # (T,) true backbone clearance to the disc
    beta: np.ndarray           # (T, N, 3) gate telemetry
    obstacle: np.ndarray       # (T, 3) center x, center y, radius
    plan_failed: np.ndarray    # (T,) True where the frame kept the old target
    faults: list

    @property
    def steps(self) -> int:
        return self.q.shape[0]


def avoidance_session(
    params: NetworkParams | None,
    profile: DisturbanceProfile,
    trace: np.ndarray,
    plan_cfg: PlanConfig,
    ctrl_cfg: ControllerConfig,
    geo: RobotGeometry,
    q0: np.ndarray | None = None,
    steps_per_frame: int = 5,
) -> AvoidanceLog:
    """Track planner output against the plant while an obstacle moves.

    Each trace frame is planned once from the current joint state; the
    controller then runs ``steps_per_frame`` cycles toward the planned
    shape before the next frame.  Infeasible plans keep the previous
    target and are flagged in the log.
    """
    trace = np.atleast_2d(np.asarray(trace, dtype=float))
    if trace.ndim != 2 or trace.shape[1] != 4:
        raise InvalidInputError("trace must be (frames, 4): t, x, y, radius")
    if steps_per_frame < 1:
        raise InvalidInputError("steps_per_frame must be at least 1")

    if q0 is None:
        q0 = np.full(geo.n_joints, plan_cfg.q_nominal)
    q0 = clamp_to_bounds(np.asarray(q0, dtype=float), geo)

    state = make_initial_state(q0, profile, geo)
    dq_hist = np.zeros(geo.n_joints)
    target = forward_kinematics(state.q, geo)
    target_q = state.q.copy()
    tip_goal = np.asarray(plan_cfg.tip_target, dtype=float)

    rows_q, rows_tq, rows_tip, rows_clear = [], [], [], []
    rows_beta, rows_obs, rows_failed, faults = [], [], [], []

    for row in trace:
        obstacle = obstacle_from_row(row, plan_cfg)
        failed = False
        try:
            plan = plan_shape(state.q, obstacle, plan_cfg, geo)
            target, target_q = plan.shape, plan.q
        except InfeasiblePlanError:
            failed = True

        for _ in range(steps_per_frame):
            obs = observe(state, profile)
            res = control_cycle(params, obs, state.q, dq_hist, target, ctrl_cfg, geo)
            state = plant_step(state, res.dq, profile, geo)
            dq_hist = res.dq

            rows_q.append(state.q.copy())
            rows_tq.append(target_q.copy())
            rows_tip.append(
                float(np.linalg.norm(state.shape.world[-1, :2] - tip_goal))
            )
            rows_clear.append(
                float(obstacle.clearance(envelope_points(state.shape)).min())
            )
            rows_beta.append(res.beta)
            rows_obs.append((*obstacle.center, obstacle.radius))
            rows_failed.append(failed)
            faults.append(res.fault)

    return AvoidanceLog(
        q=np.array(rows_q),
        target_q=np.array(rows_tq),
        tip_error=np.array(rows_tip),
        min_clearance=np.array(rows_clear),
        beta=np.array(rows_beta),
        obstacle=np.array(rows_obs),
        plan_failed=np.array(rows_failed, dtype=bool),
        faults=faults,
    )
