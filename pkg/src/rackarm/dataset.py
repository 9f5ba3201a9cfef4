"""Boundary-aware training-data generation from the simulated plant.

Episodes are random-walk command rollouts, stratified so the awkward parts
of the workspace are well represented: 40% dwell near the inter-rack
curvature bounds, 30% wander through the near-neutral friction band, 30%
roam uniformly.  Every consecutive state pair becomes one supervised
sample: per-segment features at t, the physics-predicted local increment,
and the plant-true local increment with its global pose pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    RobotGeometry,
    clamp_to_bounds,
    joints_for_arcs,
    local_jacobian_blocks,
)
from .network import encode_state
from .plant import DisturbanceProfile, make_initial_state, observe, plant_step

STEPS_PER_EPISODE = 40
BOUND_FRACTION = 0.4
NEUTRAL_FRACTION = 0.3
# Per-rack command cap, slightly above the controller's own step limit, so
# training covers the magnitudes seen in closed loop and little else.
COMMAND_CAP_MM = 3.0

DATASET_FIELDS = ("states", "dx_nom_local", "dx_gt_local", "x_gt_global_t", "x_gt_global_t1")
STATE_FIELD_NAMES = ("q", "dq_hist", "x_loc", "dq_cmd", "j_flat")


@dataclass(frozen=True)
class TrainingSample:
    """One supervised pair: features at t, labels from the t -> t+1 step."""

    states: np.ndarray  # (N, 15) raw feature rows
    dx_nom_local: np.ndarray  # (N, 3) physics-predicted local increment
    dx_gt_local: np.ndarray  # (N, 3) plant-true local increment
    x_gt_global_t: np.ndarray  # (N, 3)
    x_gt_global_t1: np.ndarray  # (N, 3)


def _episode_start(kind: str, rng: np.random.Generator, geo: RobotGeometry) -> np.ndarray:
    """Initial joint vector for one episode of the given stratum."""
    length = rng.uniform(40.0, 115.0, geo.n_segments)
    max_theta = 0.9  # matches the default differential window
    if kind == "bound":
        theta = rng.choice([-1.0, 1.0], geo.n_segments) * rng.uniform(
            0.88, 0.99, geo.n_segments
        ) * max_theta
    elif kind == "neutral":
        theta = rng.normal(0.0, 0.03, geo.n_segments)
    else:
        theta = rng.uniform(-max_theta, max_theta, geo.n_segments)
    return clamp_to_bounds(joints_for_arcs(theta, length, geo), geo)


def _episode_command(
    kind: str, rng: np.random.Generator, q: np.ndarray, target: np.ndarray
) -> np.ndarray:
    """Next commanded increment: mean reversion to the stratum target plus noise."""
    pull = 0.25 if kind == "bound" else 0.15
    noise = rng.normal(0.0, 1.2, q.size)
    return np.clip(pull * (target - q) + noise, -COMMAND_CAP_MM, COMMAND_CAP_MM)


def _episode_target(kind: str, rng: np.random.Generator, geo: RobotGeometry) -> np.ndarray:
    return _episode_start(kind, rng, geo)


def generate_dataset(
    profile: DisturbanceProfile,
    geo: RobotGeometry,
    n_samples: int,
    seed: int,
    steps_per_episode: int = STEPS_PER_EPISODE,
) -> list[TrainingSample]:
    """Stratified plant rollouts flattened into supervised samples."""
    if n_samples <= 0:
        raise InvalidInputError(f"n_samples must be positive, got {n_samples}")
    rng = np.random.default_rng(seed)
    n_episodes = -(-n_samples // steps_per_episode)
    kinds = []
    for i in range(n_episodes):
        u = (i + 0.5) / n_episodes
        if u < BOUND_FRACTION:
            kinds.append("bound")
        elif u < BOUND_FRACTION + NEUTRAL_FRACTION:
            kinds.append("neutral")
        else:
            kinds.append("uniform")
    rng.shuffle(kinds)

    samples: list[TrainingSample] = []
    for kind in kinds:
        if len(samples) >= n_samples:
            break
        q0 = _episode_start(kind, rng, geo)
        target = _episode_target(kind, rng, geo)
        state = make_initial_state(q0, profile, geo)
        obs = observe(state, profile)
        dq_hist = np.zeros(geo.n_joints)
        for step in range(steps_per_episode):
            if kind == "uniform" and step > 0 and step % 10 == 0:
                target = _episode_target(kind, rng, geo)
            dq_raw = _episode_command(kind, rng, state.q, target)
            new_state = plant_step(state, dq_raw, profile, geo)
            dq_cmd = new_state.q - state.q  # applied (pre-clamped) command
            new_obs = observe(new_state, profile)

            blocks = local_jacobian_blocks(state.q, geo)
            rows = encode_state(state.q, dq_hist, dq_cmd, obs.local, blocks)
            dx_nom = np.einsum(
                "nij,nj->ni", blocks, dq_cmd.reshape(geo.n_segments, 2)
            )
            samples.append(
                TrainingSample(
                    states=rows,
                    dx_nom_local=dx_nom,
                    dx_gt_local=new_obs.local - obs.local,
                    x_gt_global_t=obs.world.copy(),
                    x_gt_global_t1=new_obs.world.copy(),
                )
            )
            state, obs, dq_hist = new_state, new_obs, dq_cmd
            if len(samples) >= n_samples:
                break
    return samples


def stack_dataset(samples: list[TrainingSample]) -> dict[str, np.ndarray]:
    """Column arrays with a leading sample axis, keyed by field name."""
    if not samples:
        raise InvalidInputError("empty sample list")
    return {
        name: np.stack([getattr(s, name) for s in samples]) for name in DATASET_FIELDS
    }


def save_dataset(samples: list[TrainingSample], path: str):
    """Columnar npz with a JSON header naming every field."""
    columns = stack_dataset(samples)
    header = json.dumps(
        {
            "fields": list(DATASET_FIELDS),
            "state_row_fields": list(STATE_FIELD_NAMES),
            "n_samples": len(samples),
        }
    )
    np.savez_compressed(path, header=np.frombuffer(header.encode(), dtype=np.uint8), **columns)


def load_dataset(path: str) -> list[TrainingSample]:
    with np.load(path) as archive:
        header = json.loads(bytes(archive["header"]).decode())
        columns = {name: archive[name] for name in header["fields"]}
    count = header["n_samples"]
    return [
        TrainingSample(**{name: columns[name][k] for name in DATASET_FIELDS})
        for k in range(count)
    ]
