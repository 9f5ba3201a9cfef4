"""Closed-loop benchmark grid: three controllers across three difficulties.

Targets are generated procedurally as curvature fractions of each
segment's feasible bend at the working extension — small and uniform for
the easy tier, alternating moderate for medium, alternating near-bound
for extreme — and the disturbance profile is scaled per tier.  Every
cell runs its own plant and controller, so cells are independent and
can run on a thread pool.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .control import ControllerConfig, control_cycle
from .errors import ConfigError, InvalidInputError
from .geometry import (
    RobotGeometry,
    ShapeState,
    bounds_satisfied,
    forward_kinematics,
    joints_for_arcs,
)
from .metrics import RunMetrics, TrackingLog, compute_metrics
from .network import NetworkParams
from .plant import DisturbanceProfile, make_initial_state, observe, plant_step

CONTROLLERS = ("physics", "network", "hybrid")
DIFFICULTIES = ("easy", "medium", "extreme")

_CURVATURE_FRACTION = {"easy": 0.3, "medium": 0.6, "extreme": 0.95}
DISTURBANCE_SCALE = {"easy": 0.3, "medium": 0.7, "extreme": 1.0}
# physics trusts the analytic model outright; network runs the learned
# displacement alone; hybrid keeps whatever gating the config asks for.
_FORCED_BETA = {"physics": 1.0, "network": 0.0}

DEFAULT_START_Q = 70.0
DEFAULT_TARGET_LENGTH = 100.0


def max_segment_bend(geo: RobotGeometry, length: float, segment: int) -> float:
    """Largest symmetric-extension bend angle feasible for one segment.

    Bisects the differential rack stroke against the hard limits and the
    inter-rack window polynomials at mean extension ``length``.
    """

    def feasible(delta: float) -> bool:
        left, right = length + 0.5 * delta, length - 0.5 * delta
        if not (geo.q_min <= right and left <= geo.q_max):
            return False
        return bool(
            geo.eval_bound_min(segment, right) <= left <= geo.eval_bound_max(segment, right)
            and geo.eval_bound_min(segment, left) <= right <= geo.eval_bound_max(segment, left)
        )

    lo, hi = 0.0, 2.0 * (geo.q_max - geo.q_min)
    if not feasible(lo):
        raise InvalidInputError(f"straight posture at length {length} is infeasible")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return lo / geo.width[segment]


def difficulty_target(
    difficulty: str, geo: RobotGeometry, length: float = DEFAULT_TARGET_LENGTH
) -> np.ndarray:
    """Joint-space target for one benchmark tier."""
    if difficulty not in _CURVATURE_FRACTION:
        raise InvalidInputError(f"unknown difficulty {difficulty!r}")
    frac = _CURVATURE_FRACTION[difficulty]
    bend = np.array(
        [frac * max_segment_bend(geo, length, i) for i in range(geo.n_segments)]
    )
    if difficulty != "easy":
        bend *= (-1.0) ** np.arange(geo.n_segments)
    q = joints_for_arcs(bend, np.full(geo.n_segments, length), geo)
    if not bounds_satisfied(q, geo):
        raise InvalidInputError(f"{difficulty} target violates joint bounds")
    return q


def scale_profile(profile: DisturbanceProfile, scale: float) -> DisturbanceProfile:
    """Scale every disturbance magnitude; geometry-like fields stay put."""
    if scale < 0:
        raise InvalidInputError("disturbance scale must be non-negative")
    return replace(
        profile,
        coupling_gain=profile.coupling_gain * scale,
        friction_scale=profile.friction_scale * scale,
        hysteresis_decay=profile.hysteresis_decay * scale,
        noise_std=profile.noise_std * scale,
    )


def run_tracking(
    params: NetworkParams | None,
    mode: str,
    target,
    profile: DisturbanceProfile,
    ctrl_cfg: ControllerConfig,
    geo: RobotGeometry,
    q0: np.ndarray,
    steps: int,
) -> TrackingLog:
    """Drive the plant toward one target and record the whole run.

    ``mode`` picks the controller: "physics" and "network" pin the gate
    to 1 and 0 respectively; "hybrid" leaves the config's gating in
    force (so a config that forces the gate still reduces exactly).
    """
    if mode not in CONTROLLERS:
        raise InvalidInputError(f"unknown controller mode {mode!r}")
    if steps < 1:
        raise InvalidInputError("steps must be positive")
    if mode in _FORCED_BETA:
        ctrl_cfg = replace(ctrl_cfg, force_beta=_FORCED_BETA[mode])
    if params is None and ctrl_cfg.force_beta != 1.0:
        raise ConfigError(f"controller mode {mode!r} needs a trained checkpoint")

    if isinstance(target, ShapeState):
        target_shape = target
    else:
        target = np.asarray(target, dtype=float)
        target_shape = forward_kinematics(target, geo) if target.ndim == 1 else None
        if target_shape is None:
            raise InvalidInputError("target must be a joint vector or a shape state")
    target_nodes = target_shape.world[:, :2]

    state = make_initial_state(np.asarray(q0, dtype=float), profile, geo)
    dq_hist = np.zeros(geo.n_joints)

    rows_q, rows_err, rows_beta, rows_dq, faults = [], [], [], [], []
    for _ in range(steps):
        rows_err.append(
            float(np.linalg.norm(state.shape.world[:, :2] - target_nodes, axis=1).mean())
        )
        obs = observe(state, profile)
        res = control_cycle(params, obs, state.q, dq_hist, target_shape, ctrl_cfg, geo)
        state = plant_step(state, res.dq, profile, geo)
        dq_hist = res.dq
        rows_q.append(state.q.copy())
        rows_beta.append(res.beta)
        rows_dq.append(res.dq.copy())
        faults.append(res.fault)

    return TrackingLog(
        q=np.array(rows_q),
        error=np.array(rows_err),
        beta=np.array(rows_beta),
        dq=np.array(rows_dq),
        target=target_nodes.copy(),
        faults=faults,
    )


@dataclass
class BenchmarkReport:
    """Grid of per-seed metrics and logs, keyed by (controller, difficulty)."""

    cells: dict
    logs: dict
    seeds: tuple
    steps: int

    def mean_metric(self, controller: str, difficulty: str, name: str) -> float:
        runs = self.cells[(controller, difficulty)]
        return float(np.mean([getattr(m, name) for m in runs]))

    def table(self) -> list:
        rows = []
        for controller, difficulty in self.cells:
            rows.append(
                {
                    "controller": controller,
                    "difficulty": difficulty,
                    "e_mean_mm": self.mean_metric(controller, difficulty, "e_mean"),
                    "t95_steps": self.mean_metric(controller, difficulty, "t95"),
                    "chatter_mm": self.mean_metric(controller, difficulty, "chatter"),
                    "cost_mm": self.mean_metric(controller, difficulty, "cost"),
                }
            )
        return rows


def run_benchmark(
    params: NetworkParams | None,
    profile: DisturbanceProfile,
    ctrl_cfg: ControllerConfig,
    geo: RobotGeometry,
    controllers=CONTROLLERS,
    difficulties=DIFFICULTIES,
    seeds=(0,),
    steps: int = 150,
    start_q: float = DEFAULT_START_Q,
    target_length: float = DEFAULT_TARGET_LENGTH,
    workers: int = 1,
) -> BenchmarkReport:
    """Run the full controller-by-difficulty grid and collect metrics."""
    controllers = tuple(controllers)
    difficulties = tuple(difficulties)
    seeds = tuple(int(s) for s in seeds)
    if not controllers or not difficulties or not seeds:
        raise InvalidInputError("benchmark needs at least one controller, difficulty, and seed")
    unknown = [c for c in controllers if c not in CONTROLLERS]
    if unknown:
        raise InvalidInputError(f"unknown controllers {unknown}")
    if params is None and any(c != "physics" for c in controllers):
        raise ConfigError("network and hybrid controllers need a trained checkpoint")

    q0 = np.full(geo.n_joints, float(start_q))
    targets = {d: difficulty_target(d, geo, target_length) for d in difficulties}

    def run_cell(job):
        controller, difficulty, seed = job
        cell_profile = replace(
            scale_profile(profile, DISTURBANCE_SCALE[difficulty]), seed=seed
        )
        log = run_tracking(
            params,
            controller,
            targets[difficulty],
            cell_profile,
            ctrl_cfg,
            geo,
            q0,
            steps,
        )
        return job, log

    jobs = [(c, d, s) for c in controllers for d in difficulties for s in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, jobs))
    else:
        results = [run_cell(job) for job in jobs]

    cells: dict = {(c, d): [] for c in controllers for d in difficulties}
    logs: dict = {(c, d): [] for c in controllers for d in difficulties}
    for (controller, difficulty, _seed), log in results:
        cells[(controller, difficulty)].append(compute_metrics(log))
        logs[(controller, difficulty)].append(log)

    return BenchmarkReport(cells=cells, logs=logs, seeds=seeds, steps=steps)


def write_report(report: BenchmarkReport, out_dir: str) -> dict:
    """Write the metrics table, a text summary, and per-cell plots."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    rows = report.table()
    table_path = os.path.join(out_dir, "table.csv")
    with open(table_path, "w") as fh:
        fh.write("controller,difficulty,e_mean_mm,t95_steps,chatter_mm,cost_mm\n")
        for r in rows:
            fh.write(
                f"{r['controller']},{r['difficulty']},{r['e_mean_mm']:.6f},"
                f"{r['t95_steps']:.2f},{r['chatter_mm']:.6f},{r['cost_mm']:.6f}\n"
            )
    paths["table"] = table_path

    lines = [
        f"tracking benchmark: {report.steps} steps per run, seeds {list(report.seeds)}",
        "",
        f"{'controller':<10} {'difficulty':<10} {'e_mean':>10} {'t95':>8} {'chatter':>10} {'cost':>12}",
    ]
    for r in rows:
        lines.append(
            f"{r['controller']:<10} {r['difficulty']:<10} {r['e_mean_mm']:>10.3f} "
            f"{r['t95_steps']:>8.1f} {r['chatter_mm']:>10.4f} {r['cost_mm']:>12.2f}"
        )
    by_key = {(r["controller"], r["difficulty"]): r for r in rows}
    for difficulty in dict.fromkeys(k[1] for k in by_key):
        phy = by_key.get(("physics", difficulty))
        hyb = by_key.get(("hybrid", difficulty))
        if phy and hyb and phy["e_mean_mm"] > 0:
            ratio = hyb["e_mean_mm"] / phy["e_mean_mm"]
            lines.append("")
            lines.append(
                f"{difficulty}: hybrid reaches {ratio:.2f}x the physics steady error"
            )
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    paths["summary"] = summary_path

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir = os.path.join(out_dir, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    for (controller, difficulty), cell_logs in report.logs.items():
        stem = f"{controller}_{difficulty}"

        fig, ax = plt.subplots(figsize=(7, 4))
        for seed, log in zip(report.seeds, cell_logs):
            ax.plot(log.error, label=f"seed {seed}")
        ax.set_xlabel("step")
        ax.set_ylabel("mean node error [mm]")
        ax.set_title(f"{controller} / {difficulty}")
        ax.legend()
        fig.tight_layout()
        err_path = os.path.join(plot_dir, f"{stem}_error.png")
        fig.savefig(err_path, dpi=110)
        plt.close(fig)
        paths[f"{stem}_error"] = err_path

        fig, ax = plt.subplots(figsize=(7, 4))
        for seed, log in zip(report.seeds, cell_logs):
            third = np.diff(log.q, n=3, axis=0)
            ax.plot(np.linalg.norm(third, axis=1), label=f"seed {seed}")
        ax.set_xlabel("step")
        ax.set_ylabel("third-difference norm [mm]")
        ax.set_title(f"{controller} / {difficulty}")
        ax.legend()
        fig.tight_layout()
        chat_path = os.path.join(plot_dir, f"{stem}_chatter.png")
        fig.savefig(chat_path, dpi=110)
        plt.close(fig)
        paths[f"{stem}_chatter"] = chat_path

    return paths
