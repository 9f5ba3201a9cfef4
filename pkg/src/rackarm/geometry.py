"""Exact planar constant-curvature geometry for the rack-driven arm.

Each segment bends as a circular arc set by the differential and mean
extension of its two parallel racks: theta = (q_L - q_R) / c and
length = (q_L + q_R) / 2.  Frame convention: a segment's local +y axis is
its base tangent, angles are CCW-positive, and the chain root sits at the
world origin pointing +y, so a fully symmetric extension yields a straight
vertical chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import BoundViolationError, InvalidInputError

# Branch point below which the arc offsets switch to their Taylor series.
SMALL_THETA = 1e-6
# The offset derivatives cancel harder, so their series kicks in earlier.
_DERIV_SERIES_THETA = 1e-3

# Default plant scale (the math is scale-free; these cover the q = 10 / 70 /
# 100 initializations used throughout).
DEFAULT_SEGMENTS = 5
DEFAULT_WIDTH_MM = 40.0
DEFAULT_Q_MIN_MM = 10.0
DEFAULT_Q_MAX_MM = 150.0
DEFAULT_BEND_LIMIT_RAD = 0.9

_BOUND_SAMPLES = 512  # dense sampling used to validate f_min <= f_max


@dataclass(frozen=True)
class RobotGeometry:
    """Static geometry: segment count, widths, and actuation bounds.

    ``bound_min_coeffs`` / ``bound_max_coeffs`` hold per-segment polynomial
    coefficients (ascending powers) for the inter-rack feasibility window:
    one rack must stay inside [f_min(partner), f_max(partner)], with both
    polynomials clipped to the hard limits [q_min, q_max].
    """

    n_segments: int
    width: np.ndarray
    q_min: float
    q_max: float
    bound_min_coeffs: np.ndarray
    bound_max_coeffs: np.ndarray

    def __post_init__(self):
        if self.n_segments < 1:
            raise InvalidInputError(f"n_segments must be >= 1, got {self.n_segments}")
        width = np.asarray(self.width, dtype=float)
        if width.shape != (self.n_segments,) or not np.all(width > 0):
            raise InvalidInputError("width must be positive with one entry per segment")
        if not (np.isfinite(self.q_min) and np.isfinite(self.q_max) and self.q_min < self.q_max):
            raise InvalidInputError("require finite q_min < q_max")
        bmin = np.atleast_2d(np.asarray(self.bound_min_coeffs, dtype=float))
        bmax = np.atleast_2d(np.asarray(self.bound_max_coeffs, dtype=float))
        if bmin.shape[0] != self.n_segments or bmax.shape[0] != self.n_segments:
            raise InvalidInputError("bound coefficients must have one row per segment")
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "bound_min_coeffs", bmin)
        object.__setattr__(self, "bound_max_coeffs", bmax)
        r = np.linspace(self.q_min, self.q_max, _BOUND_SAMPLES)
        for i in range(self.n_segments):
            lo = self.eval_bound_min(i, r)
            hi = self.eval_bound_max(i, r)
            if np.any(lo > hi + 1e-9):
                raise InvalidInputError(f"segment {i}: f_min exceeds f_max inside the hard limits")

    @property
    def n_joints(self) -> int:
        return 2 * self.n_segments

    def eval_bound_min(self, segment: int, partner):
        """Lower feasible extension given the partner rack, clipped to hard limits."""
        v = npoly.polyval(np.asarray(partner, dtype=float), self.bound_min_coeffs[segment])
        return np.clip(v, self.q_min, self.q_max)

    def eval_bound_max(self, segment: int, partner):
        v = npoly.polyval(np.asarray(partner, dtype=float), self.bound_max_coeffs[segment])
        return np.clip(v, self.q_min, self.q_max)


def default_geometry(
    n_segments: int = DEFAULT_SEGMENTS,
    width: float = DEFAULT_WIDTH_MM,
    q_min: float = DEFAULT_Q_MIN_MM,
    q_max: float = DEFAULT_Q_MAX_MM,
    bend_limit: float = DEFAULT_BEND_LIMIT_RAD,
) -> RobotGeometry:
    """Geometry with linear default bounds |q_L - q_R| <= bend_limit * c."""
    widths = np.full(n_segments, float(width))
    span = bend_limit * widths
    bmin = np.stack([-span, np.ones(n_segments)], axis=1)
    bmax = np.stack([span, np.ones(n_segments)], axis=1)
    return RobotGeometry(n_segments, widths, float(q_min), float(q_max), bmin, bmax)


@dataclass(frozen=True)
class ShapeState:
    """Per-segment poses (x, y, theta): ``local`` in each segment's base
    frame, ``world`` composed left-to-right from the fixed origin.  Row i is
    the distal node of segment i."""

    local: np.ndarray
    world: np.ndarray


@dataclass(frozen=True)
class PhysicalJacobian:
    """Analytical derivative of the chain: ``full`` is 3N x 2N (world pose
    rows), ``local_blocks`` the N per-segment 3 x 2 maps."""

    full: np.ndarray
    local_blocks: np.ndarray


def _require_finite(name, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise InvalidInputError(f"{name}: non-finite input")


def segment_arc(q_left: float, q_right: float, width: float) -> tuple[float, float]:
    """Bend angle and central arc length from the two rack extensions."""
    _require_finite("segment_arc", q_left, q_right, width)
    if width <= 0:
        raise InvalidInputError(f"segment_arc: width must be positive, got {width}")
    return (q_left - q_right) / width, 0.5 * (q_left + q_right)


def _arc_offsets(theta):
    """(1-cos)/theta and sin/theta with a series branch near zero.

    The exact branch writes 1 - cos as 2 sin^2(theta/2) so the two branches
    agree to machine precision at the switch point.
    """
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    small = np.abs(theta) < SMALL_THETA
    safe = np.where(small, 1.0, theta)
    half_sin = np.sin(0.5 * safe)
    f = np.where(small, theta / 2.0 - theta * t2 / 24.0, 2.0 * half_sin * half_sin / safe)
    g = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    return f, g


def _arc_offset_derivs(theta):
    """d/dtheta of the two arc offsets.

    Uses a wider series window than the offsets themselves: the exact
    quotients difference two nearly equal O(theta) terms and shed digits
    well before theta reaches 1e-6.
    """
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    small = np.abs(theta) < _DERIV_SERIES_THETA
    safe = np.where(small, 1.0, theta)
    half_sin = np.sin(0.5 * safe)
    fp = np.where(
        small,
        0.5 - t2 / 8.0 + t2 * t2 / 144.0,
        (safe * np.sin(safe) - 2.0 * half_sin * half_sin) / (safe * safe),
    )
    gp = np.where(
        small,
        -theta / 3.0 + theta * t2 / 30.0,
        (safe * np.cos(safe) - np.sin(safe)) / (safe * safe),
    )
    return fp, gp


def segment_pose(theta: float, length: float) -> np.ndarray:
    """Distal pose (x, y, theta) of one constant-curvature arc."""
    _require_finite("segment_pose", theta, length)
    if length < 0:
        raise InvalidInputError(f"segment_pose: length must be >= 0, got {length}")
    f, g = _arc_offsets(theta)
    return np.array([length * f, length * g, theta])


def joint_pairs(q: np.ndarray, geo: RobotGeometry) -> np.ndarray:
    """Validate a flat joint vector and view it as (N, 2) rack pairs."""
    q = np.asarray(q, dtype=float)
    if q.shape != (geo.n_joints,):
        raise InvalidInputError(f"joint vector must have shape ({geo.n_joints},), got {q.shape}")
    _require_finite("joint vector", q)
    return q.reshape(geo.n_segments, 2)


def check_hard_limits(q: np.ndarray, geo: RobotGeometry, tol: float = 1e-9):
    """Raise BoundViolationError naming every index outside [q_min, q_max]."""
    q = np.asarray(q, dtype=float)
    bad = np.where((q < geo.q_min - tol) | (q > geo.q_max + tol))[0]
    if bad.size:
        raise BoundViolationError(
            f"joints outside [{geo.q_min}, {geo.q_max}] at indices {bad.tolist()}", bad
        )


def arc_parameters(q: np.ndarray, geo: RobotGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment (theta, length) arrays for a flat joint vector."""
    pairs = joint_pairs(q, geo)
    theta = (pairs[:, 0] - pairs[:, 1]) / geo.width
    length = 0.5 * (pairs[:, 0] + pairs[:, 1])
    return theta, length


def compose_chain(local: np.ndarray) -> np.ndarray:
    """World poses from local ones by sequential planar composition."""
    local = np.asarray(local, dtype=float)
    world = np.empty_like(local)
    x = y = phi = 0.0
    for i in range(local.shape[0]):
        lx, ly, lth = local[i]
        c, s = np.cos(phi), np.sin(phi)
        x += c * lx - s * ly
        y += s * lx + c * ly
        phi += lth
        world[i] = (x, y, phi)
    return world


def decompose_chain(world: np.ndarray) -> np.ndarray:
    """Inverse of compose_chain: local poses from a world node sequence."""
    world = np.asarray(world, dtype=float)
    local = np.empty_like(world)
    px = py = phi = 0.0
    for i in range(world.shape[0]):
        wx, wy, wphi = world[i]
        c, s = np.cos(phi), np.sin(phi)
        dx, dy = wx - px, wy - py
        local[i] = (c * dx + s * dy, -s * dx + c * dy, wphi - phi)
        px, py, phi = wx, wy, wphi
    return local


def _fk_unchecked(q: np.ndarray, geo: RobotGeometry) -> ShapeState:
    theta, length = arc_parameters(q, geo)
    f, g = _arc_offsets(theta)
    local = np.stack([length * f, length * g, theta], axis=1)
    return ShapeState(local=local, world=compose_chain(local))


def forward_kinematics(q: np.ndarray, geo: RobotGeometry) -> ShapeState:
    """Shape of the ideal (disturbance-free) chain at joint vector q."""
    joint_pairs(q, geo)
    check_hard_limits(q, geo)
    return _fk_unchecked(q, geo)


def local_jacobian_blocks(q: np.ndarray, geo: RobotGeometry) -> np.ndarray:
    """The N per-segment 3x2 maps from (dq_L, dq_R) to local (dx, dy, dtheta)."""
    theta, length = arc_parameters(q, geo)
    f, g = _arc_offsets(theta)
    fp, gp = _arc_offset_derivs(theta)
    blocks = np.empty((geo.n_segments, 3, 2))
    for i in range(geo.n_segments):
        dth = np.array([1.0, -1.0]) / geo.width[i]
        dlen = np.array([0.5, 0.5])
        blocks[i, 0] = f[i] * dlen + length[i] * fp[i] * dth
        blocks[i, 1] = g[i] * dlen + length[i] * gp[i] * dth
        blocks[i, 2] = dth
    return blocks


def physical_jacobian(q: np.ndarray, geo: RobotGeometry) -> PhysicalJacobian:
    """Analytical world Jacobian of forward_kinematics.

    Block (k, j) vanishes for j > k: distal actuators cannot move proximal
    nodes.  The frame-rotation part uses d(p_k)/d(theta_j) = S (p_k - p_j)
    with S the 90-degree rotation generator.
    """
    joint_pairs(q, geo)
    check_hard_limits(q, geo)
    shape = _fk_unchecked(q, geo)
    blocks = local_jacobian_blocks(q, geo)
    n = geo.n_segments
    full = np.zeros((3 * n, 2 * n))
    positions = np.vstack([[0.0, 0.0], shape.world[:, :2]])  # base prepended
    frame_phi = np.concatenate([[0.0], shape.world[:, 2]])
    for j in range(n):
        c, s = np.cos(frame_phi[j]), np.sin(frame_phi[j])
        rot = np.array([[c, -s], [s, c]])
        direct = rot @ blocks[j, :2, :]            # 2x2, world-aligned local step
        dth = blocks[j, 2, :]                      # 1x2, d(theta_j)/dq
        for k in range(j, n):
            rows = slice(3 * k, 3 * k + 2)
            lever = positions[k + 1] - positions[j + 1]
            swing = np.array([-lever[1], lever[0]])
            full[rows, 2 * j : 2 * j + 2] = direct + np.outer(swing, dth)
            full[3 * k + 2, 2 * j : 2 * j + 2] = dth
    return PhysicalJacobian(full=full, local_blocks=blocks)


def clamp_to_bounds(q: np.ndarray, geo: RobotGeometry, max_iters: int = 8) -> np.ndarray:
    """Project a joint vector onto the hard limits and inter-rack windows.

    Alternately projects each rack into the window induced by its partner,
    iterating to a fixed point (the default linear bounds converge in one
    or two sweeps).  Total function: never raises on finite input.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (geo.n_joints,):
        raise InvalidInputError(f"joint vector must have shape ({geo.n_joints},), got {q.shape}")
    q = np.nan_to_num(q, nan=geo.q_min, posinf=geo.q_max, neginf=geo.q_min)
    pairs = np.clip(q.reshape(geo.n_segments, 2), geo.q_min, geo.q_max)
    for _ in range(max_iters):
        prev = pairs.copy()
        for i in range(geo.n_segments):
            left, right = pairs[i]
            left = np.clip(left, geo.eval_bound_min(i, right), geo.eval_bound_max(i, right))
            right = np.clip(right, geo.eval_bound_min(i, left), geo.eval_bound_max(i, left))
            pairs[i] = (left, right)
        if np.array_equal(prev, pairs):
            break
    return pairs.reshape(-1)


def bounds_satisfied(q: np.ndarray, geo: RobotGeometry, tol: float = 1e-9) -> bool:
    """True when q meets both the hard limits and the inter-rack windows."""
    pairs = q.reshape(geo.n_segments, 2)
    if np.any(pairs < geo.q_min - tol) or np.any(pairs > geo.q_max + tol):
        return False
    for i in range(geo.n_segments):
        left, right = pairs[i]
        if not (geo.eval_bound_min(i, right) - tol <= left <= geo.eval_bound_max(i, right) + tol):
            return False
        if not (geo.eval_bound_min(i, left) - tol <= right <= geo.eval_bound_max(i, left) + tol):
            return False
    return True


def joints_for_arcs(theta: np.ndarray, length: np.ndarray, geo: RobotGeometry) -> np.ndarray:
    """Inverse of arc_parameters: rack extensions realizing (theta, length)."""
    theta = np.asarray(theta, dtype=float)
    length = np.asarray(length, dtype=float)
    half = 0.5 * theta * geo.width
    return np.stack([length + half, length - half], axis=1).reshape(-1)
