"""Simulated plant: nominal arc response plus unmodeled joint-space effects.

The true shape always comes from the exact arc kinematics, but evaluated at
an *effective* joint vector that drifts away from the commanded one through
three mechanisms acting in joint-effect space:

  * coupling      — commanded motion bleeds into neighbouring segments with
                    geometric decay, in both directions along the backbone;
  * friction band — near-neutral segments (|theta| small, racks lightly
                    loaded) lose part of the commanded motion and pick up a
                    parasitic lateral set-off;
  * hysteresis    — the chain lags behind recent motion through an
                    exponential moving average of past commands.

All three are scaled by a DisturbanceProfile, and a profile of zeros makes
the plant identical to the ideal kinematics, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    RobotGeometry,
    ShapeState,
    _fk_unchecked,
    arc_parameters,
    clamp_to_bounds,
    decompose_chain,
)

# Per-neighbour-distance decay of the coupling blend.
COUPLING_RHO = 0.5
# Withheld fraction of commanded motion per unit friction_scale, and its cap.
WITHHOLD_PER_UNIT = 0.1
WITHHOLD_CAP = 0.9
# Arc length (mm) at which friction_scale equals the parasitic lateral
# translation; shorter arcs translate proportionally less.
FRICTION_REF_LENGTH = 80.0
# theta-noise is xy-noise shrunk by this factor (mm of noise -> rad).
THETA_NOISE_DIVISOR = 40.0


@dataclass(frozen=True)
class DisturbanceProfile:
    """Knobs for the unmodeled part of the plant response.

    coupling_gain     scale of the neighbour blend (0 = independent segments)
    friction_scale    mm of parasitic lateral translation in near-neutral
                      states; also sets the withheld motion fraction
    hysteresis_decay  memory factor in [0, 1); 0 = no lag
    neutral_width     rad, half-width of the low-tension band around zero bend
    noise_std         mm, std of observation noise on node positions
    seed              base seed for the observation noise stream
    """

    coupling_gain: float = 0.0
    friction_scale: float = 0.0
    hysteresis_decay: float = 0.0
    neutral_width: float = 0.15
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.hysteresis_decay < 1.0):
            raise InvalidInputError(
                f"hysteresis_decay must be in [0, 1), got {self.hysteresis_decay}"
            )
        for name in ("coupling_gain", "friction_scale", "neutral_width", "noise_std"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class PlantState:
    """One instant of the simulated plant.

    ``q`` is the commanded joint vector (always within bounds).  ``shape``
    is the true, disturbed shape.  ``drift`` accumulates the persistent
    joint-space disturbance (coupling bleed and withheld motion), and
    ``hysteresis_memory`` is the moving average of past commanded steps.
    """

    q: np.ndarray
    shape: ShapeState
    drift: np.ndarray
    hysteresis_memory: np.ndarray
    step_index: int


def _coupling_matrix(n: int) -> np.ndarray:
    idx = np.arange(n)
    mat = COUPLING_RHO ** np.abs(idx[:, None] - idx[None, :])
    np.fill_diagonal(mat, 0.0)
    return mat


def _neutral_band(theta: np.ndarray, width: float) -> np.ndarray:
    """1 at zero bend, falling to 0 at the band edge |theta| = width."""
    if width <= 0:
        return np.zeros_like(theta)
    t = theta / width
    return np.maximum(0.0, 1.0 - t * t)


def _effective_q(
    q: np.ndarray,
    drift: np.ndarray,
    memory: np.ndarray,
    profile: DisturbanceProfile,
    geo: RobotGeometry,
) -> np.ndarray:
    """True joint vector: command + drift + lag + friction set-off."""
    base = q + drift - profile.hysteresis_decay * memory
    if profile.friction_scale == 0.0:
        return base
    theta, _ = arc_parameters(base, geo)
    band = _neutral_band(theta, profile.neutral_width)
    signs = np.where(np.arange(geo.n_segments) % 2 == 0, 1.0, -1.0)
    amp = profile.friction_scale * band * signs * geo.width / FRICTION_REF_LENGTH
    offset = np.stack([amp, -amp], axis=1).reshape(-1)
    return base + offset


def make_initial_state(
    q: np.ndarray, profile: DisturbanceProfile, geo: RobotGeometry
) -> PlantState:
    """Plant at rest: clamped q, zero drift and memory, true shape attached."""
    q = clamp_to_bounds(np.asarray(q, dtype=float), geo)
    zeros = np.zeros(geo.n_joints)
    q_eff = _effective_q(q, zeros, zeros, profile, geo)
    return PlantState(
        q=q,
        shape=_fk_unchecked(q_eff, geo),
        drift=zeros,
        hysteresis_memory=zeros.copy(),
        step_index=0,
    )


def plant_step(
    state: PlantState,
    dq_cmd: np.ndarray,
    profile: DisturbanceProfile,
    geo: RobotGeometry,
) -> PlantState:
    """Apply one commanded joint increment and return the next plant state.

    Commands are clamped, never rejected; the applied step is the clamped
    difference.  Coupling bleed and friction-withheld motion integrate into
    the drift term; the hysteresis lag is transient (it follows the memory,
    which decays once commands stop).
    """
    dq_cmd = np.asarray(dq_cmd, dtype=float)
    if dq_cmd.shape != (geo.n_joints,) or not np.all(np.isfinite(dq_cmd)):
        raise InvalidInputError("dq_cmd must be a finite vector of length 2N")
    q_new = clamp_to_bounds(state.q + dq_cmd, geo)
    applied = (q_new - state.q).reshape(geo.n_segments, 2)

    drift = state.drift.copy()
    if profile.coupling_gain > 0.0:
        bleed = profile.coupling_gain * (_coupling_matrix(geo.n_segments) @ applied)
        drift += bleed.reshape(-1)
    if profile.friction_scale > 0.0:
        theta_true, _ = arc_parameters(
            state.q + state.drift, geo
        )  # band location from the persistent part of the true state
        frac = min(WITHHOLD_CAP, WITHHOLD_PER_UNIT * profile.friction_scale)
        withheld = frac * _neutral_band(theta_true, profile.neutral_width)[:, None] * applied
        drift -= withheld.reshape(-1)

    memory = (
        profile.hysteresis_decay * state.hysteresis_memory
        + (1.0 - profile.hysteresis_decay) * applied.reshape(-1)
    )
    q_eff = _effective_q(q_new, drift, memory, profile, geo)
    return PlantState(
        q=q_new,
        shape=_fk_unchecked(q_eff, geo),
        drift=drift,
        hysteresis_memory=memory,
        step_index=state.step_index + 1,
    )


def observe(state: PlantState, profile: DisturbanceProfile) -> ShapeState:
    """Noisy camera view of the true shape.

    Noise is drawn from a counter-based stream keyed by (seed, step_index),
    so observing the same state twice gives the identical sample and
    different steps are independent.  noise_std = 0 returns the true shape
    object unchanged.
    """
    if profile.noise_std == 0.0:
        return state.shape
    bits = np.random.Philox(seed=[int(profile.seed), int(state.step_index)])
    rng = np.random.Generator(bits)
    world = state.shape.world.copy()
    n = world.shape[0]
    world[:, :2] += rng.normal(0.0, profile.noise_std, (n, 2))
    world[:, 2] += rng.normal(0.0, profile.noise_std / THETA_NOISE_DIVISOR, n)
    return ShapeState(local=decompose_chain(world), world=world)


def rollout(
    q0: np.ndarray,
    commands: np.ndarray,
    profile: DisturbanceProfile,
    geo: RobotGeometry,
) -> list[PlantState]:
    """Run a command sequence from rest; returns states including the initial."""
    states = [make_initial_state(q0, profile, geo)]
    for dq in np.asarray(commands, dtype=float):
        states.append(plant_step(states[-1], dq, profile, geo))
    return states
