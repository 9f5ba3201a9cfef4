"""Tracking-run records, performance metrics, and gate-evolution exports.

A tracking run is summarized by four scalars: steady-state mean node
error, steps to 95% convergence, command chatter (third-difference
norm), and cumulative actuation cost.  The raw per-step series stay
attached so reports and plots can be rebuilt from the metrics object
alone.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

# Fraction of the run treated as steady state when the paper-style
# metrics need one; the tail of a converged run.
_STEADY_FRACTION = 0.2
_CONVERGENCE_BAND = 0.05


@dataclass
class TrackingLog:
    """Per-cycle record of one closed-loop run.

    ``error[t]`` is the true mean node error the cycle started from,
    ``q[t]``/``dq[t]``/``beta[t]`` describe the command that cycle
    issued and the joints it left behind.
    """

    q: np.ndarray         # (T, 2N) joint positions after each command
    error: np.ndarray     # (T,) mean per-node error before each command
    beta: np.ndarray      # (T, N, 3) gate telemetry
    dq: np.ndarray        # (T, 2N) commanded increments
    target: np.ndarray    # (N, 2) node positions being tracked
    faults: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.q.shape[0]


@dataclass
class RunMetrics:
    e_mean: float   # mm, steady-state mean node error
    t95: int        # steps to enter (and stay in) the 5% band
    chatter: float  # mm, mean third-difference norm of the commands
    cost: float     # mm, cumulative L1 joint displacement
    per_step: dict  # raw series: error, beta, dq

    def __post_init__(self):
        if min(self.e_mean, self.chatter, self.cost) < 0 or self.t95 < 0:
            raise InvalidInputError("metrics cannot be negative")


def compute_metrics(log: TrackingLog) -> RunMetrics:
    """Reduce a tracking log to the four scalar metrics.

    Steady state is the final fifth of the run.  t95 is the first step
    from which the error never again leaves the band lying 5% of the
    initial-to-steady gap above the steady level; a run that never
    settles gets t95 = run length.
    """
    q = np.asarray(log.q, dtype=float)
    error = np.asarray(log.error, dtype=float)
    if q.ndim != 2 or error.shape != (q.shape[0],):
        raise InvalidInputError("log needs matching q (T, 2N) and error (T,) series")
    steps = q.shape[0]
    if steps < 4:
        raise InvalidInputError("log too short: need at least 4 steps for the third difference")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(error))):
        raise InvalidInputError("log contains non-finite entries")

    tail = max(1, int(np.ceil(_STEADY_FRACTION * steps)))
    steady = float(error[-tail:].mean())

    gap = error[0] - steady
    if gap <= 0:
        # No downward gap to close.  A run that ends where it started
        # (noise aside) has been settled since step 0; one that ends
        # clearly above its start never settled at all.
        t95 = 0 if steady <= (1.0 + _CONVERGENCE_BAND) * error[0] else steps
    else:
        threshold = steady + _CONVERGENCE_BAND * gap
        tail_max = np.maximum.accumulate(error[::-1])[::-1]
        inside = np.nonzero(tail_max <= threshold)[0]
        t95 = int(inside[0]) if inside.size else steps

    third = np.diff(q, n=3, axis=0)
    chatter = float(np.linalg.norm(third, axis=1).mean())
    cost = float(np.abs(np.diff(q, axis=0)).sum())

    return RunMetrics(
        e_mean=steady,
        t95=t95,
        chatter=chatter,
        cost=cost,
        per_step={"error": error.copy(), "beta": np.asarray(log.beta).copy(), "dq": np.asarray(log.dq).copy()},
    )


def export_gate_heatmap(log: TrackingLog, out_dir: str, stem: str = "gates") -> dict:
    """Write per-segment gate evolution as two CSV matrices plus a PNG.

    CSV layout: one row per segment, one column per step, separate files
    for the x and y gate channels.  Returns the written paths.
    """
    beta = np.asarray(getattr(log, "beta", None), dtype=float)
    if beta.ndim != 3 or beta.shape[0] < 1 or beta.shape[2] != 3:
        raise InvalidInputError("log carries no (T, N, 3) gate telemetry")

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    channels = {"x": beta[:, :, 0].T, "y": beta[:, :, 1].T}
    for name, matrix in channels.items():
        path = os.path.join(out_dir, f"{stem}_beta_{name}.csv")
        np.savetxt(path, matrix, delimiter=",", fmt="%.9e")
        paths[f"beta_{name}_csv"] = path

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    for ax, (name, matrix) in zip(axes, channels.items()):
        im = ax.imshow(
            matrix, aspect="auto", origin="lower", vmin=0.0, vmax=1.0,
            cmap="viridis", interpolation="nearest",
        )
        ax.set_ylabel("segment")
        ax.set_title(f"gate {name}")
        fig.colorbar(im, ax=ax, fraction=0.025)
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    image = os.path.join(out_dir, f"{stem}.png")
    fig.savefig(image, dpi=120)
    plt.close(fig)
    paths["image"] = image
    return paths
