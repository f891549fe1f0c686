"""Sweep-by-sweep odometry: initialise, predict, optimise, register."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import Extrinsics, NavState, SweepStatePair, quat_conj, quat_mul, so3_exp, so3_log
from .initialization import static_initialize
from .optimizer import MODES, DegenerateGeometryError, ResidualReport, SolverConfig, SolverStalledError, optimize_sweep
from .preintegration import build_samples, predict_states, preintegrate
from .sensors import ImuStream, NoiseConfig, WheelGeometry, WheelStream
from .sweep import downsample
from .voxel_map import VoxelMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "liwo"
    solver: SolverConfig = field(default_factory=SolverConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig.nominal)
    extrinsics: Extrinsics = field(default_factory=Extrinsics)
    geometry: WheelGeometry = field(default_factory=WheelGeometry)
    downsample_voxel: float = 0.5
    map_voxel: float = 1.0
    map_max_points: int = 20
    map_min_distance: float = 0.1
    prune_radius: float = 150.0
    init_window: float = 1.0
    gravity: float = 9.81
    max_gyro_std: float = 0.02
    max_wheel_speed: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("downsample_voxel", "map_voxel", "prune_radius", "init_window", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.map_max_points < 1:
            raise ValueError("map_max_points must be at least 1")
        flags = SolverConfig.for_mode(self.mode)
        if (self.solver.use_imu, self.solver.use_odometer, self.solver.use_velocity) != (
            flags.use_imu,
            flags.use_odometer,
            flags.use_velocity,
        ):
            # keep the solver flags in step with the mode
            settings = {k: v for k, v in self.solver.__dict__.items() if not k.startswith("use_")}
            object.__setattr__(self, "solver", SolverConfig.for_mode(self.mode, **settings))

    @property
    def uses_imu(self) -> bool:
        return self.mode != "lidar-only"

    @property
    def uses_wheel(self) -> bool:
        return self.mode == "liwo"


@dataclass
class SweepTiming:
    index: int
    optimization: float
    registration: float
    total: float
    raw_points: int


@dataclass
class RunResult:
    states: list
    trajectory: np.ndarray
    vmap: VoxelMap
    timing: list
    flagged: list
    reports: list

    @property
    def total_times(self) -> np.ndarray:
        return np.array([t.total for t in self.timing])


def _trajectory_row(s: NavState) -> list:
    w, x, y, z = s.q
    return [s.stamp, *s.t, x, y, z, w]


def _constant_velocity(prev: SweepStatePair | None, x_prev_end: NavState, t_e: float) -> SweepStatePair:
    """Extrapolate the previous sweep's motion; used when no inertial data is fused."""
    dt = t_e - x_prev_end.stamp
    if prev is None:
        end = x_prev_end.replace(stamp=t_e)
    else:
        scale = dt / prev.duration
        w = so3_log(quat_mul(quat_conj(prev.begin.q), prev.end.q)) * scale
        q = quat_mul(x_prev_end.q, so3_exp(w))
        t = x_prev_end.t + (prev.end.t - prev.begin.t) * scale
        end = x_prev_end.replace(t=t, q=q, stamp=t_e)
    return SweepStatePair(x_prev_end, end)


def run(
    config: PipelineConfig,
    imu: ImuStream,
    wheel: WheelStream | None,
    sweeps: list,
) -> RunResult:
    """Process every sweep and return the estimated trajectory and map."""
    cfg = config
    extr = cfg.extrinsics
    if not sweeps:
        raise ValueError("no sweeps to process")
    t0 = float(max(imu.stamps[0], sweeps[0].t_b))
    init = static_initialize(
        imu,
        wheel,
        cfg.init_window,
        geometry=cfg.geometry,
        t0=t0,
        gravity_magnitude=cfg.gravity,
        max_gyro_std=cfg.max_gyro_std,
        max_wheel_speed=cfg.max_wheel_speed,
    )
    g_w = init.g_w
    vmap = VoxelMap(cfg.map_voxel, cfg.map_max_points, cfg.map_min_distance)
    t_init_end = t0 + cfg.init_window

    states, rows, timing, flagged, reports = [], [], [], [], []
    x_prev_end = None
    prev_pair = None
    for sweep in sweeps:
        start = time.perf_counter()
        ds = downsample(sweep, cfg.downsample_voxel)
        if x_prev_end is None or sweep.t_e <= t_init_end + 1e-9:
            # stationary frames: pinned to the initial state
            x = NavState(np.zeros(3), init.q0, init.v0, init.b_a, init.b_w, sweep.t_b)
            pair = SweepStatePair(x, x.replace(stamp=sweep.t_e))
            t_opt = time.perf_counter()
            report = None
        else:
            if sweep.t_e <= x_prev_end.stamp:
                raise ValueError(f"sweep {sweep.index} ends before the previous sweep")
            preint = None
            if cfg.uses_imu:
                samples = build_samples(
                    imu, wheel if cfg.uses_wheel else None, cfg.geometry, x_prev_end.stamp, sweep.t_e
                )
                prediction = predict_states(x_prev_end, samples, extr, g_w, use_wheel=cfg.uses_wheel)
                preint = preintegrate(samples, x_prev_end.b_a, x_prev_end.b_w, cfg.noise, extr)
            else:
                prediction = _constant_velocity(prev_pair, x_prev_end, sweep.t_e)
            wheel_obs = None
            if cfg.uses_wheel and wheel is not None:
                v = wheel.velocity_at([prediction.begin.stamp, prediction.end.stamp], cfg.geometry)
                wheel_obs = (v[0], v[1])
            report = None
            try:
                pair, report = optimize_sweep(
                    ds, vmap, prediction, preint, wheel_obs, x_prev_end, cfg.solver, extr, g_w
                )
            except DegenerateGeometryError as exc:
                log.warning("sweep %d flagged: %s", sweep.index, exc)
                flagged.append((sweep.index, "degenerate-geometry"))
                pair, report = prediction, exc.report
            except SolverStalledError as exc:
                log.warning("sweep %d flagged: %s", sweep.index, exc)
                flagged.append((sweep.index, "solver-stalled"))
                pair, report = exc.states, exc.report
            t_opt = time.perf_counter()
        vmap.register_sweep(ds, pair, extr)
        vmap.prune_far(pair.end.t, cfg.prune_radius)
        end = time.perf_counter()
        timing.append(SweepTiming(sweep.index, t_opt - start, end - t_opt, end - start, len(sweep)))
        reports.append(report)
        states.append(pair)
        rows.append(_trajectory_row(pair.end))
        prev_pair = pair
        x_prev_end = pair.end
    return RunResult(states, np.array(rows), vmap, timing, flagged, reports)


__all__ = ["PipelineConfig", "RunResult", "SweepTiming", "run", "ResidualReport"]
