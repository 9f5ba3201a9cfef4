"""Command-line front end.

One executable, eight subcommands, three global flags.  Every artifact a
subcommand writes is named ``{kind}-{confighash}-s{seed}.{ext}`` so runs
from different configurations or seeds can never silently overwrite each
other.  Exit codes: 0 success, 1 bad usage or configuration, 2 runtime
fault.  Errors are printed to stderr as single-line JSON objects.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import service
from .benchmark import (
    CONTROLLERS,
    DIFFICULTIES,
    DISTURBANCE_SCALE,
    difficulty_target,
    run_benchmark,
    run_tracking,
    scale_profile,
    write_report,
)
from .config import AppConfig, artifact_path, config_hash, default_config, load_config
from .dataset import generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, RackArmError, UsageError
from .metrics import compute_metrics, export_gate_heatmap
from .network import init_params, load_checkpoint, save_checkpoint
from .planner import avoidance_session, load_obstacle_trace
from .training import train

# The acceptance gate drives `validate` itself; excluding it here keeps
# the command from recursing into its own caller.
_ACCEPTANCE_MODULE = "test_acceptance.py"


class _Parser(argparse.ArgumentParser):
    """argparse normally exits(2) on bad flags; route through our codes."""

    def error(self, message):
        raise UsageError(message)


def _diag(category: str, message: str):
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)


def _emit(payload: dict):
    print(json.dumps(payload))


def _add_common(p: _Parser):
    # Also defined on the root parser; SUPPRESS lets a value given before
    # the subcommand survive unless the subcommand restates the flag.
    p.add_argument("--config", default=argparse.SUPPRESS,
                   help="JSON configuration file, or the literal name "
                        "'default' for the built-in defaults")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="override every stochastic seed for this run")
    p.add_argument("--out", default=argparse.SUPPRESS,
                   help="directory overriding the configured artifact paths")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="rackarm",
        description="Shape control for a planar rack-driven arm: data, "
                    "training, benchmarks, avoidance sessions, live demo.",
    )
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("gen-data", help="roll out the plant and write a supervised dataset")
    _add_common(p)

    p = sub.add_parser("train", help="fit the displacement network and write a checkpoint")
    _add_common(p)

    p = sub.add_parser("track", help="run one tracking episode and print its metrics")
    _add_common(p)
    p.add_argument("--controller", choices=CONTROLLERS, default="hybrid")
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="medium")
    p.add_argument("--steps", type=int, default=None, help="episode length override")

    p = sub.add_parser("bench", help="run the full controller-by-difficulty grid")
    _add_common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel benchmark cells")

    p = sub.add_parser("avoid", help="run an obstacle-avoidance session from a trace file")
    _add_common(p)
    p.add_argument("--trace", required=True, help="CSV obstacle trace: t,x,y,radius per row")
    p.add_argument("--controller", choices=CONTROLLERS, default="physics")
    p.add_argument("--steps-per-frame", type=int, default=5, dest="steps_per_frame")

    p = sub.add_parser("gates", help="export gate-activity heatmaps from a tracking run")
    _add_common(p)
    p.add_argument("--controller", choices=CONTROLLERS, default="hybrid")
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="medium")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("serve", help="host the live avoidance session on a TCP port")
    _add_common(p)
    p.add_argument("--controller", choices=CONTROLLERS, default="hybrid")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="TCP port override")
    p.add_argument("--record", default=None, help="ndjson file recording both message streams")
    p.add_argument("--replan-every", type=int, default=5, dest="replan_every")
    p.add_argument("--max-ticks", type=int, default=None, dest="max_ticks",
                   help="stop after this many ticks (default: run forever)")

    p = sub.add_parser("validate", help="run the module invariant suites")
    _add_common(p)
    p.add_argument("--tests", default=None, help="test directory (default: the repo suite)")
    return parser


def _apply_seed(base: AppConfig, seed: int | None) -> tuple[AppConfig, int]:
    """Pin all stochastic seeds to one number; artifacts are named by it."""
    if seed is None:
        return base, base.data.seed
    cfg = replace(
        base,
        data=replace(base.data, seed=seed),
        training=replace(base.training, seed=seed),
        disturbance=replace(base.disturbance, seed=seed),
        benchmark=replace(base.benchmark, seeds=(seed, seed + 1, seed + 2)),
    )
    return cfg, seed


def _dirs(args, cfg: AppConfig) -> dict[str, str]:
    if args.out:
        return {"datasets": args.out, "checkpoints": args.out, "reports": args.out}
    return {
        "datasets": cfg.paths.datasets,
        "checkpoints": cfg.paths.checkpoints,
        "reports": cfg.paths.reports,
    }


def _prepare(path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _fresh_params(cfg: AppConfig):
    net = cfg.network
    return init_params(
        net.init_seed, cfg.geometry.n_segments,
        hidden=net.hidden, gru_hidden=net.gru_hidden,
        head_hidden=net.head_hidden, gate_bias=net.gate_bias,
    )


def _require_checkpoint(base: AppConfig, dirs: dict, seed: int):
    path = artifact_path(base, dirs["checkpoints"], "checkpoint", seed, "json")
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path} (run `rackarm train` first)")
    return load_checkpoint(path)


def _load_or_generate_dataset(base: AppConfig, cfg: AppConfig, dirs: dict, seed: int):
    path = artifact_path(base, dirs["datasets"], "dataset", seed, "npz")
    if os.path.exists(path):
        return load_dataset(path), path, False
    samples = generate_dataset(cfg.disturbance, cfg.geometry, cfg.data.samples, seed)
    save_dataset(samples, _prepare(path))
    return samples, path, True


def _cmd_gen_data(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    path = artifact_path(base, dirs["datasets"], "dataset", seed, "npz")
    samples = generate_dataset(cfg.disturbance, cfg.geometry, cfg.data.samples, seed)
    save_dataset(samples, _prepare(path))
    _emit({"dataset": path, "samples": len(samples), "config": config_hash(base)})
    return 0


def _cmd_train(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    samples, data_path, generated = _load_or_generate_dataset(base, cfg, dirs, seed)
    result = train(samples, _fresh_params(cfg), cfg.loss, cfg.training)
    ckpt = artifact_path(base, dirs["checkpoints"], "checkpoint", seed, "json")
    save_checkpoint(result.params, _prepare(ckpt))
    log_path = artifact_path(base, dirs["checkpoints"], "training-log", seed, "csv")
    result.write_log(_prepare(log_path), cfg.training)
    _emit({
        "checkpoint": ckpt,
        "dataset": data_path,
        "dataset_generated": generated,
        "epochs": len(result.log),
        "val_loss": result.log[-1]["val_loss"] if result.log else None,
        "diverged": result.diverged,
        "log": log_path,
    })
    return 0


def _tracking_episode(args, base: AppConfig, cfg: AppConfig, seed: int, dirs: dict):
    params = None if args.controller == "physics" else _require_checkpoint(base, dirs, seed)
    geo = cfg.geometry
    profile = scale_profile(cfg.disturbance, DISTURBANCE_SCALE[args.difficulty])
    target = difficulty_target(args.difficulty, geo, cfg.benchmark.target_length)
    q0 = np.full(geo.n_joints, cfg.benchmark.start_q)
    steps = args.steps if args.steps else cfg.benchmark.steps
    log = run_tracking(params, args.controller, target, profile, cfg.controller, geo, q0, steps)
    return log


def _cmd_track(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    log = _tracking_episode(args, base, cfg, seed, dirs)
    m = compute_metrics(log)
    kind = f"track-{args.controller}-{args.difficulty}"
    csv_path = _prepare(artifact_path(base, dirs["reports"], kind, seed, "csv"))
    with open(csv_path, "w") as fh:
        fh.write("step,error_mm\n")
        for i, err in enumerate(log.error):
            fh.write(f"{i},{err:.9g}\n")
    _emit({
        "controller": args.controller,
        "difficulty": args.difficulty,
        "steps": log.steps,
        "e_mean_mm": m.e_mean,
        "t95_steps": m.t95,
        "chatter_mm": m.chatter,
        "cost_mm": m.cost,
        "log": csv_path,
    })
    return 0


def _cmd_bench(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    params = _require_checkpoint(base, dirs, seed)
    bench = cfg.benchmark
    report = run_benchmark(
        params, cfg.disturbance, cfg.controller, cfg.geometry,
        seeds=bench.seeds, steps=bench.steps,
        start_q=bench.start_q, target_length=bench.target_length,
        workers=args.workers,
    )
    out_dir = os.path.join(dirs["reports"], f"bench-{config_hash(base)}-s{seed}")
    paths = write_report(report, out_dir)
    with open(paths["table"]) as fh:
        rows = sum(1 for _ in fh) - 1
    plots = [p for k, p in paths.items() if k not in ("table", "summary")]
    _emit({
        "report_dir": out_dir,
        "rows": rows,
        "table": paths["table"],
        "summary": paths["summary"],
        "plots": len(plots),
    })
    return 0


def _cmd_avoid(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    if not os.path.exists(args.trace):
        raise UsageError(f"trace file not found: {args.trace}")
    trace = load_obstacle_trace(args.trace)
    params = None if args.controller == "physics" else _require_checkpoint(base, dirs, seed)
    log = avoidance_session(
        params, cfg.disturbance, trace, cfg.planner, cfg.controller, cfg.geometry,
        steps_per_frame=args.steps_per_frame,
    )
    csv_path = _prepare(artifact_path(base, dirs["reports"], "avoid", seed, "csv"))
    with open(csv_path, "w") as fh:
        fh.write("step,tip_error_mm,min_clearance_mm,plan_failed\n")
        for i in range(log.steps):
            fh.write(
                f"{i},{log.tip_error[i]:.9g},{log.min_clearance[i]:.9g},"
                f"{int(log.plan_failed[i])}\n"
            )
    _emit({
        "log": csv_path,
        "steps": log.steps,
        "min_clearance_mm": float(log.min_clearance.min()),
        "final_tip_error_mm": float(log.tip_error[-1]),
        "plan_failures": int(log.plan_failed.sum()),
    })
    return 0


def _cmd_gates(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    log = _tracking_episode(args, base, cfg, seed, dirs)
    stem = f"gates-{args.controller}-{config_hash(base)}-s{seed}"
    paths = export_gate_heatmap(log, dirs["reports"], stem=stem)
    _emit({"controller": args.controller, "steps": log.steps, **paths})
    return 0


def _cmd_serve(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    dirs = _dirs(args, cfg)
    params = None if args.controller == "physics" else _require_checkpoint(base, dirs, seed)
    forced = {"physics": 1.0, "network": 0.0}.get(args.controller)
    if forced is not None:
        cfg = replace(cfg, controller=replace(cfg.controller, force_beta=forced))
    try:
        service.serve(
            cfg, params, host=args.host, port=args.port,
            replan_every=args.replan_every, record_path=args.record,
            max_ticks=args.max_ticks,
        )
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_validate(args, base: AppConfig, cfg: AppConfig, seed: int) -> int:
    if args.tests:
        tests_dir = Path(args.tests)
    else:
        tests_dir = Path(__file__).resolve().parents[2] / "tests"
    if not tests_dir.is_dir():
        raise UsageError(f"test suite not found at {tests_dir}; pass --tests")
    cmd = [sys.executable, "-m", "pytest", str(tests_dir), "-q",
           "--ignore", str(tests_dir / _ACCEPTANCE_MODULE)]
    proc = subprocess.run(cmd)
    if proc.returncode != 0:
        _diag("fault", f"invariant suite failed (pytest exit {proc.returncode})")
        return 2
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "track": _cmd_track,
    "bench": _cmd_bench,
    "avoid": _cmd_avoid,
    "gates": _cmd_gates,
    "serve": _cmd_serve,
    "validate": _cmd_validate,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _diag("usage", str(exc))
        print(parser.format_usage(), end="", file=sys.stderr)
        print("run `rackarm --help` for the full command list", file=sys.stderr)
        return 1
    try:
        if args.config and args.config != "default":
            base = load_config(args.config)
        else:
            base = default_config()
        cfg, seed = _apply_seed(base, args.seed)
        return _COMMANDS[args.command](args, base, cfg, seed)
    except UsageError as exc:
        _diag("usage", str(exc))
        return 1
    except ConfigError as exc:
        _diag("config", str(exc))
        return 1
    except RackArmError as exc:
        _diag("fault", f"{type(exc).__name__}: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, never crashes
        _diag("fault", f"{type(exc).__name__}: {exc}")
        return 2


def main():
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
