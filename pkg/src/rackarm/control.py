"""Closed-loop shape controller.

One control cycle turns an observed shape and a target shape into a joint
command: probe the network for a local sensitivity matrix, blend it with
the analytical Jacobian through the per-segment confidence gates, roll the
stale camera measurement forward by one latency interval, and solve a
node-weighted damped least-squares system for the step.  The same code
path serves the purely analytical and purely data-driven baselines through
a single gate-forcing switch, so comparisons never diverge by
implementation detail.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConfigError,
    InternalFaultError,
    InvalidInputError,
    RackArmError,
)
from .geometry import (
    PhysicalJacobian,
    RobotGeometry,
    ShapeState,
    clamp_to_bounds,
    local_jacobian_blocks,
    physical_jacobian,
)
from .network import NetworkParams, encode_state, forward


@dataclass(frozen=True)
class ControllerConfig:
    """Closed-loop solver knobs; every field participates in validation."""

    lambda_dls: float = 0.01      # mm^2 damping added to the normal matrix
    perturb_eps: float = 0.5      # mm probe amplitude for the network Jacobian
    gauss_sigma: float = 1.5      # node-index spread of the error-focus weights
    w_floor: float = 0.2          # minimum node weight, keeps all nodes actuated
    step_gain: float = 0.5        # fraction of the solved step commanded per cycle
    dq_max: float = 2.0           # mm per-cycle actuation cap, componentwise
    dt_delay: float = 0.033       # s of assumed vision latency (one camera frame)
    cycle_dt: float = 0.02        # s per control cycle, converts commands to rates
    central_differences: bool = False
    force_beta: float | None = None  # 1.0 trusts physics, 0.0 the network, None gates

    def __post_init__(self):
        if not (self.lambda_dls > 0):
            raise ConfigError("lambda_dls must be positive")
        if not (self.perturb_eps > 0):
            raise ConfigError("perturb_eps must be positive")
        if not (0 < self.step_gain <= 1):
            raise ConfigError("step_gain must lie in (0, 1]")
        if not (0 < self.w_floor <= 1):
            raise ConfigError("w_floor must lie in (0, 1]")
        if not (self.gauss_sigma > 0):
            raise ConfigError("gauss_sigma must be positive")
        if not (self.dq_max > 0):
            raise ConfigError("dq_max must be positive")
        if self.dt_delay < 0:
            raise ConfigError("dt_delay must be non-negative")
        if not (self.cycle_dt > 0):
            raise ConfigError("cycle_dt must be positive")
        if self.force_beta is not None and not (0 <= self.force_beta <= 1):
            raise ConfigError("force_beta must be None or in [0, 1]")


@dataclass
class FusedJacobian:
    """Translational Jacobian blend and the pieces it was built from."""

    j_phy_p: np.ndarray   # (2N, 2N) translational rows of the analytical Jacobian
    j_net_p: np.ndarray   # (2N, 2N) translational rows of the probed network map
    b_beta: np.ndarray    # (2N, 2N) diagonal confidence matrix
    j_fused: np.ndarray   # (2N, 2N) convex row blend


def translational_rows(n_segments: int) -> np.ndarray:
    """Indices of the (x, y) rows inside a stacked (x, y, heading) layout."""
    base = 3 * np.arange(n_segments)
    return np.stack([base, base + 1], axis=1).reshape(-1)


def world_delta_lift(world: np.ndarray) -> np.ndarray:
    """Linear map from stacked per-segment local pose deltas to world deltas.

    A local (dx, dy) of segment i translates every node from i outward
    after rotation into segment i's parent frame; a local heading change
    swings the distal chain about node i.  Composing with the per-segment
    local sensitivity blocks reproduces the full analytical Jacobian,
    which is the identity the tests pin down.
    """
    world = np.asarray(world, dtype=float)
    n = world.shape[0]
    lift = np.zeros((3 * n, 3 * n))
    positions = np.vstack([[0.0, 0.0], world[:, :2]])
    frame_phi = np.concatenate([[0.0], world[:, 2]])
    for i in range(n):
        c, s = np.cos(frame_phi[i]), np.sin(frame_phi[i])
        rot = np.array([[c, -s], [s, c]])
        for k in range(i, n):
            rows = slice(3 * k, 3 * k + 2)
            lever = positions[k + 1] - positions[i + 1]
            lift[rows, 3 * i : 3 * i + 2] = rot
            lift[rows, 3 * i + 2] = (-lever[1], lever[0])
            lift[3 * k + 2, 3 * i + 2] = 1.0
    return lift


# -- network probing ------------------------------------------------------------


def _probe_batch(
    params: NetworkParams,
    shape: ShapeState,
    q: np.ndarray,
    dq_hist: np.ndarray,
    geo: RobotGeometry,
    cfg: ControllerConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One batched forward pass covering the zero command and every probe.

    Returns (d_local, j_net_full, j_net_p, beta): the raw local slope
    matrix of the network prediction, its world lift, the translational
    rows of that lift, and the gate response at the zero command.
    Forward differences share the zero-command evaluation; central
    differences pay for a mirrored probe per joint.
    """
    n, m = geo.n_segments, geo.n_joints
    eps = cfg.perturb_eps
    blocks = local_jacobian_blocks(q, geo)
    base = encode_state(q, dq_hist, np.zeros(m), shape.local, blocks)

    if cfg.central_differences:
        batch = np.repeat(base[None, :, :], 2 * m + 1, axis=0)
        for k in range(m):
            batch[1 + k, k // 2, 7 + k % 2] += eps
            batch[1 + m + k, k // 2, 7 + k % 2] -= eps
    else:
        batch = np.repeat(base[None, :, :], m + 1, axis=0)
        for k in range(m):
            batch[1 + k, k // 2, 7 + k % 2] += eps

    batch = (batch - params.norm_mean) / params.norm_std
    result = forward(params, batch, np.zeros((batch.shape[0], n, 3)))
    dx_net = result.dx_net

    d_local = np.empty((3 * n, m))
    for k in range(m):
        if cfg.central_differences:
            diff = (dx_net[1 + k] - dx_net[1 + m + k]) / (2 * eps)
        else:
            diff = (dx_net[1 + k] - dx_net[0]) / eps
        d_local[:, k] = diff.reshape(-1)

    j_full = world_delta_lift(shape.world) @ d_local
    j_p = j_full[translational_rows(n)]
    return d_local, j_full, j_p, result.beta[0]


def neural_jacobian(
    params: NetworkParams,
    shape: ShapeState,
    q: np.ndarray,
    dq_hist: np.ndarray,
    geo: RobotGeometry,
    cfg: ControllerConfig,
) -> np.ndarray:
    """Translational network Jacobian by finite perturbation of the command.

    Column k holds the lifted world response of the network's local
    prediction to a probe on joint k, evaluated around the zero command at
    the current observed shape.
    """
    q = np.asarray(q, dtype=float)
    dq_hist = np.asarray(dq_hist, dtype=float)
    if q.shape != (geo.n_joints,) or dq_hist.shape != (geo.n_joints,):
        raise InvalidInputError("q and dq_hist must have one entry per joint")
    _, _, j_p, _ = _probe_batch(params, shape, q, dq_hist, geo, cfg)
    return j_p


# -- fusion and latency transport -------------------------------------------------


def fuse_jacobian(j_phy, j_net_p: np.ndarray, beta: np.ndarray) -> FusedJacobian:
    """Blend translational Jacobian rows through per-segment (x, y) gates."""
    if isinstance(j_phy, PhysicalJacobian):
        j_phy = j_phy.full
    j_phy = np.asarray(j_phy, dtype=float)
    j_net_p = np.asarray(j_net_p, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = beta.shape[0]
    if beta.ndim != 2 or beta.shape[1] < 2:
        raise InvalidInputError("beta must be (N, >=2) with x and y gates first")
    if j_phy.shape == (3 * n, 2 * n):
        j_phy_p = j_phy[translational_rows(n)]
    elif j_phy.shape == (2 * n, 2 * n):
        j_phy_p = j_phy
    else:
        raise InvalidInputError(f"analytical Jacobian has shape {j_phy.shape}")
    if j_net_p.shape != (2 * n, 2 * n):
        raise InvalidInputError(f"network Jacobian has shape {j_net_p.shape}")
    if np.any(beta < 0) or np.any(beta > 1):
        raise InvalidInputError("gate values must lie in [0, 1]")

    diag = beta[:, :2].reshape(-1)
    j_fused = diag[:, None] * j_phy_p + (1.0 - diag)[:, None] * j_net_p
    return FusedJacobian(
        j_phy_p=j_phy_p,
        j_net_p=j_net_p,
        b_beta=np.diag(diag),
        j_fused=j_fused,
    )


def compensate_latency(
    p_vision: np.ndarray, j_fused, qdot: np.ndarray, dt_delay: float
) -> np.ndarray:
    """Roll a stale position measurement forward through the motion model."""
    j = j_fused.j_fused if isinstance(j_fused, FusedJacobian) else np.asarray(j_fused)
    p_vision = np.asarray(p_vision, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    return p_vision + j @ qdot * dt_delay


# -- damped least squares ----------------------------------------------------------


def dls_step(
    j_fused,
    e_step: np.ndarray,
    cfg: ControllerConfig,
    node_errors: np.ndarray,
) -> np.ndarray:
    """Node-weighted damped least-squares joint step.

    The weight profile is a floored Gaussian over node index, centered on
    the worst node (ties resolve to the most proximal), so actuation
    effort concentrates where tracking is worst without ever releasing
    the rest of the chain.
    """
    j = j_fused.j_fused if isinstance(j_fused, FusedJacobian) else np.asarray(j_fused)
    e_step = np.asarray(e_step, dtype=float)
    node_errors = np.asarray(node_errors, dtype=float)
    if not np.all(np.isfinite(e_step)):
        raise InvalidInputError("tracking error must be finite")
    n = node_errors.shape[0]
    if e_step.shape != (2 * n,) or j.shape != (2 * n, 2 * n):
        raise InvalidInputError("error and Jacobian sizes disagree")

    k_star = int(np.argmax(node_errors))
    idx = np.arange(n)
    w_nodes = cfg.w_floor + (1.0 - cfg.w_floor) * np.exp(
        -((idx - k_star) ** 2) / (2.0 * cfg.gauss_sigma**2)
    )
    w = np.repeat(w_nodes, 2)

    normal = j.T @ (w[:, None] * j) + cfg.lambda_dls * np.eye(2 * n)
    rhs = j.T @ (w * e_step)
    try:
        dq = scipy.linalg.cho_solve(scipy.linalg.cho_factor(normal), rhs)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - damping forbids it
        raise InternalFaultError(f"damped normal matrix not SPD: {exc}") from exc
    dq *= cfg.step_gain
    return np.clip(dq, -cfg.dq_max, cfg.dq_max)


# -- full cycle --------------------------------------------------------------------


@dataclass
class CycleResult:
    """Joint command plus the telemetry the harness streams per cycle."""

    dq: np.ndarray
    beta: np.ndarray          # (N, 3) gate response, forced value when overridden
    node_errors: np.ndarray   # (N,) per-node distance to target, latency-corrected
    e_step: np.ndarray        # (2N,) stacked tracking error
    k_star: int               # node the weight profile centered on
    cond_phy: float
    cond_fused: float
    fault: str | None = None

    @property
    def dq_norm(self) -> float:
        return float(np.linalg.norm(self.dq))


def _target_positions(target, n: int) -> np.ndarray:
    world = getattr(target, "world", target)
    world = np.asarray(world, dtype=float)
    if world.shape == (n, 3):
        world = world[:, :2]
    if world.shape == (n, 2):
        world = world.reshape(-1)
    if world.shape != (2 * n,):
        raise InvalidInputError(f"target shape {world.shape} does not fit {n} nodes")
    return world


def control_cycle(
    params: NetworkParams | None,
    obs: ShapeState,
    q: np.ndarray,
    dq_hist: np.ndarray,
    target,
    cfg: ControllerConfig,
    geo: RobotGeometry,
) -> CycleResult:
    """One full closed-loop cycle; any internal fault yields a zero command.

    ``params`` may be None only when the gate is forced fully onto the
    analytical model, where the network is never evaluated.
    """
    n = geo.n_segments
    q = np.asarray(q, dtype=float)
    dq_hist = np.asarray(dq_hist, dtype=float)
    zeros = np.zeros(geo.n_joints)
    try:
        p_target = _target_positions(target, n)
        j_phy = physical_jacobian(q, geo)
        j_phy_p = j_phy.full[translational_rows(n)]

        if cfg.force_beta == 1.0:
            beta = np.ones((n, 3))
            j_fused_p = j_phy_p
        else:
            if params is None:
                raise InvalidInputError("network weights required unless beta is forced to 1")
            s_net, _, _, beta = _probe_batch(params, obs, q, dq_hist, geo, cfg)
            if cfg.force_beta is not None:
                beta = np.full((n, 3), cfg.force_beta)
            # Blend the two local sensitivity fields channel by channel —
            # the frame the gates were fit in — and lift the blend once.
            # Blending lifted world rows instead would hand the heading
            # slopes, whose lever terms dominate distal rows, to the
            # translation gates rather than the heading gate.
            s_nom = np.zeros((3 * n, 2 * n))
            for i in range(n):
                s_nom[3 * i : 3 * i + 3, 2 * i : 2 * i + 2] = j_phy.local_blocks[i]
            w = beta.reshape(-1)[:, None]
            s_fused = w * s_nom + (1.0 - w) * s_net
            j_fused_p = (world_delta_lift(obs.world) @ s_fused)[translational_rows(n)]

        qdot = dq_hist / cfg.cycle_dt
        p_vision = obs.world[:, :2].reshape(-1)
        p_current = compensate_latency(p_vision, j_fused_p, qdot, cfg.dt_delay)
        e_step = p_target - p_current
        node_errors = np.linalg.norm(e_step.reshape(n, 2), axis=1)

        dq_raw = dls_step(j_fused_p, e_step, cfg, node_errors)
        dq = clamp_to_bounds(q + dq_raw, geo) - q
        return CycleResult(
            dq=dq,
            beta=beta,
            node_errors=node_errors,
            e_step=e_step,
            k_star=int(np.argmax(node_errors)),
            cond_phy=float(np.linalg.cond(j_phy_p)),
            cond_fused=float(np.linalg.cond(j_fused_p)),
        )
    except RackArmError as exc:
        return CycleResult(
            dq=zeros,
            beta=np.full((n, 3), np.nan),
            node_errors=np.full(n, np.nan),
            e_step=np.full(2 * n, np.nan),
            k_star=-1,
            cond_phy=np.nan,
            cond_fused=np.nan,
            fault=f"{type(exc).__name__}: {exc}",
        )
