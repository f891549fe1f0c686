"""Deterministic synthetic world: planar vehicle motion, IMU, wheels and a spinning LiDAR.

The vehicle (odometer frame) follows a planar non-holonomic script of forward
speed and yaw rate commands blended with smoothstep ramps. Ground truth is
evaluated on a base clock at the LiDAR column rate; IMU and wheel clocks are
integer sub-samplings of it so every sensor stamp has an exact truth state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Extrinsics, NavState, quat_to_rot, rot_to_quat
from .sensors import (
    ImuStream,
    NoiseConfig,
    WheelGeometry,
    WheelStream,
    add_measurement_noise,
    spawn_seeds,
)
from .sweep import Sweep

GRAVITY = np.array([0.0, 0.0, -9.81])

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Plane:
    """Bounded plane ``normal . p = offset`` clipped to the box ``[lo, hi]``."""

    normal: tuple
    offset: float
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class SimWorld:
    planes: tuple
    bounds: tuple
    obstacles: tuple = ()
    g_w: tuple = tuple(GRAVITY)
    clearance: float = 0.3

    def __post_init__(self):
        g = np.linalg.norm(self.g_w)
        if not (9.7 <= g <= 9.9):
            raise ValueError(f"gravity magnitude {g} outside [9.7, 9.9]")

    @property
    def gravity(self) -> np.ndarray:
        return np.asarray(self.g_w, dtype=float)


def box_planes(lo, hi, inward: bool) -> list[Plane]:
    """Six faces of an axis-aligned box, normals pointing in or out."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    planes = []
    for axis in range(3):
        for side, value in ((-1.0, lo[axis]), (1.0, hi[axis])):
            n = np.zeros(3)
            n[axis] = -side if inward else side
            flo, fhi = lo.copy(), hi.copy()
            flo[axis] = fhi[axis] = value
            planes.append(Plane(tuple(n), float(n[axis] * value), tuple(flo), tuple(fhi)))
    return planes


@dataclass(frozen=True)
class Segment:
    """Hold ``speed`` (m/s) and ``yaw_rate`` (rad/s) for ``duration`` seconds."""

    duration: float
    speed: float = 0.0
    yaw_rate: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class TrajectoryScript:
    segments: tuple
    blend: float = 0.5
    start_xy: tuple = (0.0, 0.0)
    start_yaw: float = 0.0
    height: float = 0.6

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))


@dataclass(frozen=True)
class LidarConfig:
    rings: int = 16
    min_elevation_deg: float = -15.0
    max_elevation_deg: float = 15.0
    columns: int = 900
    rate: float = 10.0
    min_range: float = 0.5
    max_range: float = 40.0

    def ring_directions(self) -> np.ndarray:
        """Unit ray directions ``(columns, rings, 3)`` in the LiDAR frame."""
        el = np.deg2rad(np.linspace(self.min_elevation_deg, self.max_elevation_deg, self.rings))
        az = 2 * np.pi * np.arange(self.columns) / self.columns
        ce, se = np.cos(el), np.sin(el)
        d = np.empty((self.columns, self.rings, 3))
        d[:, :, 0] = np.cos(az)[:, None] * ce[None, :]
        d[:, :, 1] = np.sin(az)[:, None] * ce[None, :]
        d[:, :, 2] = se[None, :]
        return d


@dataclass
class TruthSeries:
    """Ground-truth IMU states on the IMU clock."""

    stamps: np.ndarray
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray

    def __len__(self):
        return len(self.stamps)

    def index_of(self, stamp: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.stamps - stamp)))
        if abs(self.stamps[i] - stamp) > tol:
            raise KeyError(f"no truth sample at {stamp}")
        return i

    def state(self, i: int) -> NavState:
        return NavState(self.t[i], self.q[i], self.v[i], self.b_a[i], self.b_w[i], self.stamps[i])

    def state_at(self, stamp: float) -> NavState:
        return self.state(self.index_of(stamp))


@dataclass
class SimOutput:
    truth: TruthSeries
    imu: ImuStream
    wheel: WheelStream
    sweeps: list
    extrinsics: Extrinsics
    geometry: WheelGeometry
    g_w: np.ndarray
    imu_rate: float
    lidar: LidarConfig
    clean_imu: ImuStream | None = None
    clean_wheel: WheelStream | None = None


class _Profile:
    """Speed and yaw-rate commands with smoothstep blending, plus analytic integrals."""

    def __init__(self, script: TrajectoryScript):
        segs = script.segments
        if not segs:
            raise SimulationError("trajectory script has no segments")
        self.starts = np.cumsum([0.0] + [s.duration for s in segs])[:-1]
        self.ends = self.starts + np.array([s.duration for s in segs])
        self.blend = np.array([max(min(script.blend, s.duration), 1e-9) for s in segs])
        self.v1 = np.array([s.speed for s in segs], dtype=float)
        self.w1 = np.array([s.yaw_rate for s in segs], dtype=float)
        self.v0 = np.r_[0.0, self.v1[:-1]]
        self.w0 = np.r_[0.0, self.w1[:-1]]
        self.yaw0 = np.zeros(len(segs))
        yaw = script.start_yaw
        for k in range(len(segs)):
            self.yaw0[k] = yaw
            yaw = yaw + self._yaw_increment(k, segs[k].duration)

    def _yaw_increment(self, k, tau):
        b = self.blend[k]
        u = np.clip(tau / b, 0.0, 1.0)
        S = np.where(tau < b, b * (u**3 - 0.5 * u**4), 0.5 * b + (tau - b))
        return self.w0[k] * tau + (self.w1[k] - self.w0[k]) * S

    def segment_of(self, t):
        return np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.starts) - 1)

    def evaluate(self, t):
        """Speed, speed rate, yaw, yaw rate, yaw acceleration at times ``t``."""
        t = np.asarray(t, dtype=float)
        k = self.segment_of(t)
        tau = t - self.starts[k]
        b = self.blend[k]
        u = np.clip(tau / b, 0.0, 1.0)
        s = 3 * u**2 - 2 * u**3
        ds = np.where(tau < b, 6 * u * (1 - u) / b, 0.0)
        dv, dw = self.v1[k] - self.v0[k], self.w1[k] - self.w0[k]
        v = self.v0[k] + dv * s
        w = self.w0[k] + dw * s
        yaw = self.yaw0[k] + self._yaw_increment(k, tau)
        return v, dv * ds, yaw, w, dw * ds


def _vehicle_truth(script: TrajectoryScript, base_rate: float, n_base: int):
    """Odometer-frame planar kinematics on the base clock."""
    prof = _Profile(script)
    h = 1.0 / base_rate
    grid = np.arange(n_base + 1) / base_rate
    # 4-point Gauss-Legendre on every base interval for the position integral
    mids = 0.5 * (grid[:-1] + grid[1:])
    nodes = mids[:, None] + 0.5 * h * _GL_NODES[None, :]
    v_n, _, yaw_n, _, _ = prof.evaluate(nodes.ravel())
    v_n, yaw_n = v_n.reshape(nodes.shape), yaw_n.reshape(nodes.shape)
    wts = 0.5 * h * _GL_WEIGHTS[None, :]
    dx = np.sum(wts * v_n * np.cos(yaw_n), axis=1)
    dy = np.sum(wts * v_n * np.sin(yaw_n), axis=1)
    pos = np.zeros((n_base + 1, 3))
    pos[:, 0] = script.start_xy[0] + np.r_[0.0, np.cumsum(dx)]
    pos[:, 1] = script.start_xy[1] + np.r_[0.0, np.cumsum(dy)]
    pos[:, 2] = script.height
    v, dv, yaw, w, dw = prof.evaluate(grid)
    return prof, grid, pos, v, dv, yaw, w, dw


def _check_bounds(world: SimWorld, prof: _Profile, script: TrajectoryScript, grid, pos):
    lo, hi = np.asarray(world.bounds[0], float), np.asarray(world.bounds[1], float)
    c = world.clearance
    bad = np.any(pos < lo + c, axis=1) | np.any(pos > hi - c, axis=1)
    for olo, ohi in world.obstacles:
        olo, ohi = np.asarray(olo, float), np.asarray(ohi, float)
        bad |= np.all((pos > olo - c) & (pos < ohi + c), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        k = int(prof.segment_of(grid[i]))
        name = script.segments[k].name or f"#{k}"
        raise SimulationError(
            f"trajectory leaves free space in segment {name} at t={grid[i]:.3f}s, p={pos[i].round(3)}"
        )


def _raycast(world: SimWorld, origins: np.ndarray, dirs: np.ndarray, cfg: LidarConfig):
    """Nearest hit range per ray; ``inf`` where nothing is hit within range."""
    best = np.full(dirs.shape[:-1], np.inf)
    o = origins[:, None, :]
    for pl in world.planes:
        n = np.asarray(pl.normal, float)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (pl.offset - o @ n) / denom
            hit = o + r[..., None] * dirs
        lo = np.asarray(pl.lo) - 1e-6
        hi = np.asarray(pl.hi) + 1e-6
        ok = (np.abs(denom) > 1e-9) & (r > cfg.min_range) & (r < cfg.max_range)
        ok &= np.all((hit >= lo) & (hit <= hi), axis=-1)
        best = np.where(ok & (r < best), r, best)
    return best


def simulate(
    script: TrajectoryScript,
    world: SimWorld,
    noise: NoiseConfig,
    seed: int,
    *,
    lidar: LidarConfig = LidarConfig(),
    extrinsics: Extrinsics = Extrinsics(),
    geometry: WheelGeometry = WheelGeometry(),
    imu_rate: int = 100,
    wheel_rate: int = 100,
    track: float = 1.0,
) -> SimOutput:
    """Run a scripted trajectory through the world and synthesise all sensor streams.

    Identical arguments give bit-identical output.
    """
    base_rate = lidar.columns * lidar.rate
    if abs(base_rate / imu_rate - round(base_rate / imu_rate)) > 1e-9:
        raise ValueError("IMU rate must divide the LiDAR column rate")
    if imu_rate % wheel_rate:
        raise ValueError("wheel rate must divide the IMU rate")
    n_sweeps = int(np.floor(script.duration * lidar.rate + 1e-9))
    if n_sweeps < 1:
        raise SimulationError("trajectory shorter than one sweep")
    n_base = n_sweeps * lidar.columns
    prof, grid, pos_k, v, dv, yaw, w, dw = _vehicle_truth(script, base_rate, n_base)
    _check_bounds(world, prof, script, grid, pos_k)

    g_w = world.gravity
    R_ko = extrinsics.R_k_o
    t_ko = extrinsics.t_k_o
    cy, sy = np.cos(yaw), np.sin(yaw)
    nb = len(grid)
    R_k = np.zeros((nb, 3, 3))
    R_k[:, 0, 0], R_k[:, 0, 1], R_k[:, 1, 0], R_k[:, 1, 1], R_k[:, 2, 2] = cy, -sy, sy, cy, 1.0
    R_o = R_k @ R_ko.T
    w_k = np.zeros((nb, 3))
    w_k[:, 2] = w
    dw_k = np.zeros((nb, 3))
    dw_k[:, 2] = dw
    w_o = w_k @ R_ko.T
    dw_o = dw_k @ R_ko.T
    vel_k = np.stack([v * cy, v * sy, np.zeros(nb)], axis=1)
    acc_k = np.stack([dv * cy - v * w * sy, dv * sy + v * w * cy, np.zeros(nb)], axis=1)
    lever = np.cross(w_o, t_ko)
    pos_o = pos_k - np.einsum("nij,j->ni", R_o, t_ko)
    vel_o = vel_k - np.einsum("nij,nj->ni", R_o, lever)
    lever_acc = np.cross(dw_o, t_ko) + np.cross(w_o, lever)
    acc_o = acc_k - np.einsum("nij,nj->ni", R_o, lever_acc)

    step = int(round(base_rate / imu_rate))
    n_imu = n_base // step + 1
    imu_idx = np.arange(n_imu) * step
    imu_stamps = np.arange(n_imu) / imu_rate
    R_i = R_o[imu_idx]
    gyro = w_o[imu_idx]
    accel = np.einsum("nji,nj->ni", R_i, acc_o[imu_idx] + g_w)
    clean_imu = ImuStream(imu_stamps, gyro, accel)

    wstep = imu_rate // wheel_rate
    n_wheel = (n_imu - 1) // wstep + 1
    widx = imu_idx[np.arange(n_wheel) * wstep]
    wheel_stamps = np.arange(n_wheel) / wheel_rate
    v_left = v[widx] - 0.5 * track * w[widx]
    v_right = v[widx] + 0.5 * track * w[widx]
    clean_wheel = WheelStream(wheel_stamps, v_left / geometry.r_left, v_right / geometry.r_right)

    seeds = spawn_seeds(seed)
    imu = add_measurement_noise(clean_imu, noise, seeds.imu)
    wheel = add_measurement_noise(clean_wheel, noise, seeds.wheel, geometry=geometry)

    quats = np.array([rot_to_quat(R) for R in R_i])
    truth = TruthSeries(imu_stamps, pos_o[imu_idx], quats, vel_o[imu_idx], imu.bias_a, imu.bias_w)

    rng = np.random.default_rng(seeds.lidar)
    dirs_l = lidar.ring_directions()
    R_lo, t_lo = extrinsics.R_l_o, extrinsics.t_l_o
    dirs_o = dirs_l @ R_lo.T
    sweeps = []
    for j in range(n_sweeps):
        cols = j * lidar.columns + np.arange(lidar.columns)
        Rc = R_o[cols]
        origins = pos_o[cols] + Rc @ t_lo
        dirs_w = np.einsum("cij,crj->cri", Rc, dirs_o)
        rng_hit = _raycast(world, origins, dirs_w, lidar)
        noise_r = rng.standard_normal(rng_hit.shape) * noise.sigma_range
        ok = np.isfinite(rng_hit)
        ranges = (rng_hit + noise_r)[ok]
        pts = ranges[:, None] * dirs_l[ok]
        stamps = np.broadcast_to((cols / base_rate)[:, None], ok.shape)[ok]
        t_b, t_e = j / lidar.rate, (j + 1) / lidar.rate
        sweeps.append(Sweep(pts, stamps, t_b, t_e, j))

    return SimOutput(
        truth=truth,
        imu=imu,
        wheel=wheel,
        sweeps=sweeps,
        extrinsics=extrinsics,
        geometry=geometry,
        g_w=g_w.copy(),
        imu_rate=float(imu_rate),
        lidar=lidar,
        clean_imu=clean_imu,
        clean_wheel=clean_wheel,
    )


def body_velocity_check(out: SimOutput) -> np.ndarray:
    """Forward speed of the odometer origin from truth, for the wheel comparison."""
    R = np.array([quat_to_rot(q) for q in out.truth.q])
    w_body = out.clean_imu.gyro
    v_odo_w = out.truth.v + np.einsum("nij,nj->ni", R, np.cross(w_body, out.extrinsics.t_k_o))
    v_odo = np.einsum("ji,nj->ni", out.extrinsics.R_k_o, np.einsum("nji,nj->ni", R, v_odo_w))
    return v_odo


__all__ = [
    "GRAVITY",
    "LidarConfig",
    "Plane",
    "Segment",
    "SimOutput",
    "SimWorld",
    "SimulationError",
    "TrajectoryScript",
    "TruthSeries",
    "box_planes",
    "simulate",
]
