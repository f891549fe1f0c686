"""Command line entry point: simulate, run, evaluate, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import scenarios
from .evaluation import evaluate_ate, velocity_rmse
from .io import dump_config, load_config, read_dataset, read_trajectory, write_dataset, write_ply, write_trajectory
from .optimizer import MODES
from .pipeline import PipelineConfig, run
from .sensors import NoiseConfig
from .simulation import simulate

log = logging.getLogger("liwodom")

SCENARIOS = {
    "loop": (scenarios.corridor_loop_world, scenarios.loop_script),
    "straight": (scenarios.corridor_loop_world, scenarios.straight_script),
    "rest": (scenarios.corridor_loop_world, scenarios.rest_script),
}


def _truth_rows(out) -> np.ndarray:
    tr = out.truth
    q = tr.q
    return np.column_stack([tr.stamps, tr.t, q[:, 1], q[:, 2], q[:, 3], q[:, 0]])


def cmd_simulate(args) -> dict:
    world_fn, script_fn = SCENARIOS[args.scenario]
    noise = NoiseConfig.nominal() if args.noise == "nominal" else NoiseConfig()
    out = simulate(script_fn(duration=args.duration), world_fn(), noise, args.seed)
    velocity = np.column_stack([out.truth.stamps, out.truth.v])
    write_dataset(args.out, out.imu, out.wheel, out.sweeps, _truth_rows(out), velocity, binary=not args.csv)
    cfg = PipelineConfig(noise=NoiseConfig.nominal(), extrinsics=out.extrinsics, geometry=out.geometry)
    Path(args.out, "config.txt").write_text(dump_config(cfg))
    return {"dataset": str(args.out), "sweeps": len(out.sweeps), "imu_samples": len(out.imu)}


def _config(args) -> PipelineConfig:
    path = args.config
    if path is None and Path(args.dataset, "config.txt").exists():
        path = Path(args.dataset, "config.txt")
    cfg = load_config(path) if path is not None else PipelineConfig()
    if args.mode is not None:
        cfg = PipelineConfig(**{**cfg.__dict__, "mode": args.mode})
    return cfg


def _run_one(cfg: PipelineConfig, data, out_dir: Path) -> dict:
    result = run(cfg, data.imu, data.wheel, data.sweeps)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory(out_dir / "trajectory.txt", result.trajectory)
    write_ply(out_dir / "map.ply", result.vmap.points())
    with open(out_dir / "timing.csv", "w") as f:
        f.write("sweep,raw_points,optimization_ms,registration_ms,total_ms\n")
        for t in result.timing:
            f.write(
                f"{t.index},{t.raw_points},{1e3 * t.optimization:.3f},{1e3 * t.registration:.3f},{1e3 * t.total:.3f}\n"
            )
    summary = {
        "mode": cfg.mode,
        "sweeps": len(result.states),
        "flagged": [{"sweep": i, "reason": r} for i, r in result.flagged],
        "median_sweep_ms": float(np.median(result.total_times) * 1e3),
    }
    if data.truth is not None:
        summary["ate"] = evaluate_ate(result.trajectory, data.truth)
        if data.truth_velocity is not None:
            est_v = np.array([[s.end.stamp, *s.end.v] for s in result.states])
            summary["velocity_rmse"] = velocity_rmse(est_v, data.truth_velocity, result.trajectory, data.truth)
    return summary


def cmd_run(args) -> dict:
    cfg = _config(args)
    data = read_dataset(args.dataset)
    summary = _run_one(cfg, data, Path(args.out))
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_evaluate(args) -> dict:
    return {"ate": evaluate_ate(read_trajectory(args.est), read_trajectory(args.truth), args.max_dt)}


def cmd_ablate(args) -> dict:
    base = _config(args)
    data = read_dataset(args.dataset)
    rows = {}
    for mode in args.modes:
        cfg = PipelineConfig(**{**base.__dict__, "mode": mode})
        try:
            rows[mode] = _run_one(cfg, data, Path(args.out) / mode)
        except Exception as exc:  # a failing configuration is a result, not a crash
            rows[mode] = {"mode": mode, "error": type(exc).__name__, "message": str(exc)}
    Path(args.out).mkdir(parents=True, exist_ok=True)
    Path(args.out, "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liwodom", description="LiDAR-inertial-wheel odometry on recorded or simulated data")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--scenario", choices=sorted(SCENARIOS), default="loop")
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--noise", choices=["nominal", "none"], default="nominal")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", action="store_true", help="write LiDAR points as CSV instead of npz")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("run", cmd_run, "estimate a trajectory"), ("ablate", cmd_ablate, "compare modes")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--dataset", required=True)
        r.add_argument("--out", required=True)
        r.add_argument("--config")
        r.add_argument("--mode", choices=MODES)
        r.add_argument("--seed", type=int, default=0, help="accepted for symmetry; the estimator is deterministic")
        if name == "ablate":
            r.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
        r.set_defaults(func=func)

    e = sub.add_parser("evaluate", help="ATE of a trajectory against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--max-dt", type=float, default=0.01)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
