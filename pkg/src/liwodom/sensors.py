"""IMU and wheel-encoder measurement models.

IMU:   gyro  = omega + b_w + n_w
       accel = a_body + b_a + R_w^T g_w + n_a
Wheel: v = ((tau_l + n_l) r_l + (tau_r + n_r) r_r) / 2 along the odometer x axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ImuSample(NamedTuple):
    stamp: float
    gyro: np.ndarray
    accel: np.ndarray


class WheelSample(NamedTuple):
    stamp: float
    tau_left: float
    tau_right: float


@dataclass(frozen=True)
class WheelGeometry:
    r_left: float = 0.3
    r_right: float = 0.3

    def __post_init__(self):
        if not (self.r_left > 0 and self.r_right > 0):
            raise ValueError(f"wheel radii must be positive, got {self.r_left}, {self.r_right}")


@dataclass(frozen=True)
class NoiseConfig:
    """Sensor noise levels.

    ``sigma_a``/``sigma_w`` are per-sample white-noise standard deviations,
    ``sigma_ba``/``sigma_bw`` are bias random-walk densities (increments are
    scaled by ``sqrt(dt)``), ``sigma_v`` is the per-wheel linear-speed noise
    and ``sigma_range`` the LiDAR range noise. ``b_a0``/``b_w0`` are the
    biases at the first sample.
    """

    sigma_a: float = 0.0
    sigma_w: float = 0.0
    sigma_ba: float = 0.0
    sigma_bw: float = 0.0
    sigma_v: float = 0.0
    sigma_range: float = 0.0
    b_a0: tuple = (0.0, 0.0, 0.0)
    b_w0: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("sigma_a", "sigma_w", "sigma_ba", "sigma_bw", "sigma_v", "sigma_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def nominal(cls) -> "NoiseConfig":
        return cls(
            sigma_a=0.02,
            sigma_w=0.002,
            sigma_ba=2e-4,
            sigma_bw=2e-5,
            sigma_v=0.02,
            sigma_range=0.01,
            b_a0=(0.02, -0.015, 0.01),
            b_w0=(0.002, -0.001, 0.0015),
        )

    @property
    def wheel_speed_var(self) -> float:
        """Variance of the averaged forward speed (independent wheels)."""
        return 0.5 * self.sigma_v**2


def wheel_linear_velocity(sample: WheelSample, geometry: WheelGeometry) -> np.ndarray:
    """Odometer-frame velocity from the two rear-wheel shaft speeds."""
    vx = 0.5 * (sample.tau_left * geometry.r_left + sample.tau_right * geometry.r_right)
    return np.array([vx, 0.0, 0.0])


def _strictly_increasing(stamps: np.ndarray, what: str):
    if stamps.size > 1 and np.any(np.diff(stamps) <= 0):
        i = int(np.argmax(np.diff(stamps) <= 0))
        raise ValueError(f"{what} stamps not strictly increasing at index {i + 1}")


@dataclass
class ImuStream:
    """Columnar IMU stream, optionally carrying the true bias series."""

    stamps: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    bias_a: np.ndarray | None = None
    bias_w: np.ndarray | None = None

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (len(self.stamps) == len(self.gyro) == len(self.accel)):
            raise ValueError("IMU stream columns have different lengths")
        _strictly_increasing(self.stamps, "IMU")

    def __len__(self):
        return len(self.stamps)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.stamps[i]), self.gyro[i], self.accel[i])

    def window(self, t0: float, t1: float) -> "ImuStream":
        m = (self.stamps >= t0) & (self.stamps <= t1)
        return ImuStream(self.stamps[m], self.gyro[m], self.accel[m])


@dataclass
class WheelStream:
    stamps: np.ndarray
    tau_left: np.ndarray
    tau_right: np.ndarray

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float)
        self.tau_left = np.asarray(self.tau_left, dtype=float)
        self.tau_right = np.asarray(self.tau_right, dtype=float)
        if not (len(self.stamps) == len(self.tau_left) == len(self.tau_right)):
            raise ValueError("wheel stream columns have different lengths")
        _strictly_increasing(self.stamps, "wheel")

    def __len__(self):
        return len(self.stamps)

    def __getitem__(self, i) -> WheelSample:
        return WheelSample(float(self.stamps[i]), float(self.tau_left[i]), float(self.tau_right[i]))

    def speeds(self, geometry: WheelGeometry) -> np.ndarray:
        """Forward speed per sample (vectorised wheel_linear_velocity x component)."""
        return 0.5 * (self.tau_left * geometry.r_left + self.tau_right * geometry.r_right)

    def velocity_at(self, stamps, geometry: WheelGeometry) -> np.ndarray:
        """Odometer-frame velocities linearly interpolated to ``stamps``, ``(N, 3)``."""
        stamps = np.atleast_1d(np.asarray(stamps, dtype=float))
        if len(self.stamps) == 0:
            raise ValueError("empty wheel stream")
        vx = np.interp(stamps, self.stamps, self.speeds(geometry))
        out = np.zeros((len(stamps), 3))
        out[:, 0] = vx
        return out


@dataclass(frozen=True)
class _Seeds:
    imu: np.random.SeedSequence
    wheel: np.random.SeedSequence
    lidar: np.random.SeedSequence


def spawn_seeds(seed: int) -> _Seeds:
    imu, wheel, lidar = np.random.SeedSequence(seed).spawn(3)
    return _Seeds(imu, wheel, lidar)


def add_measurement_noise(stream, noise: NoiseConfig, seed, geometry: WheelGeometry | None = None):
    """Corrupt a clean IMU or wheel stream.

    IMU: adds initial bias plus a random walk (increments ``sigma_b sqrt(dt)``)
    and white noise; the returned stream carries the true bias series.
    Wheel: adds independent white noise to each turning shaft's speed so
    that each wheel's linear speed has std ``sigma_v``; a shaft at rest
    reads exactly zero. Needs ``geometry``.
    """
    rng = np.random.default_rng(seed)
    if isinstance(stream, ImuStream):
        n = len(stream)
        dt = np.diff(stream.stamps, prepend=stream.stamps[:1])
        sq = np.sqrt(dt)[:, None]
        # draw order is fixed so identical seeds give identical corruption
        w_ba = rng.standard_normal((n, 3))
        w_bw = rng.standard_normal((n, 3))
        w_a = rng.standard_normal((n, 3))
        w_w = rng.standard_normal((n, 3))
        bias_a = np.asarray(noise.b_a0, dtype=float) + np.cumsum(noise.sigma_ba * sq * w_ba, axis=0)
        bias_w = np.asarray(noise.b_w0, dtype=float) + np.cumsum(noise.sigma_bw * sq * w_bw, axis=0)
        gyro = stream.gyro + bias_w + noise.sigma_w * w_w
        accel = stream.accel + bias_a + noise.sigma_a * w_a
        return ImuStream(stream.stamps.copy(), gyro, accel, bias_a, bias_w)
    if isinstance(stream, WheelStream):
        if geometry is None:
            raise ValueError("wheel noise needs the wheel geometry")
        n = len(stream)
        w = rng.standard_normal((n, 2))
        # an encoder produces no ticks while its shaft is still
        w[:, 0] *= stream.tau_left != 0.0
        w[:, 1] *= stream.tau_right != 0.0
        tl = stream.tau_left + noise.sigma_v / geometry.r_left * w[:, 0]
        tr = stream.tau_right + noise.sigma_v / geometry.r_right * w[:, 1]
        return WheelStream(stream.stamps.copy(), tl, tr)
    raise TypeError(f"unsupported stream type {type(stream).__name__}")
