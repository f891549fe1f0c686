"""Static initialisation of attitude, biases and velocity from a stationary window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import normalize, quat_to_rot, rot_to_quat
from .sensors import ImuStream, WheelGeometry, WheelStream

GRAVITY_MAGNITUDE = 9.81


class InitializationRejectedError(RuntimeError):
    def __init__(self, statistic: str, value: float, limit: float):
        super().__init__(f"stationarity check failed: {statistic} = {value:.6g} exceeds {limit:.6g}")
        self.statistic = statistic
        self.value = value
        self.limit = limit


@dataclass(frozen=True)
class InitResult:
    g_w: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray
    q0: np.ndarray
    v0: np.ndarray
    t_end: float


def _align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation (as a matrix) taking unit vector ``a`` onto unit vector ``b``."""
    c = float(a @ b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + K + K @ K * ((1.0 - c) / (s * s))


def _zero_yaw(R: np.ndarray) -> np.ndarray:
    yaw = np.arctan2(R[1, 0], R[0, 0])
    c, s = np.cos(-yaw), np.sin(-yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Rz @ R


def static_initialize(
    imu: ImuStream,
    wheel: WheelStream | None,
    window: float = 1.0,
    *,
    geometry: WheelGeometry = WheelGeometry(),
    t0: float | None = None,
    gravity_direction=(0.0, 0.0, -1.0),
    gravity_magnitude: float = GRAVITY_MAGNITUDE,
    max_gyro_std: float = 0.02,
    max_wheel_speed: float = 1e-3,
) -> InitResult:
    """Estimate gravity-aligned attitude, biases and zero velocity while the platform rests.

    Uses IMU and wheel samples stamped in ``[t0, t0 + window]``. The
    accelerometer at rest reads the body-frame gravity vector, so the
    attitude is the rotation taking the mean specific force onto the
    configured gravity direction, with yaw fixed to zero.
    """
    if window < 0.5:
        raise ValueError(f"initialisation window must be at least 0.5 s, got {window}")
    if t0 is None:
        t0 = float(imu.stamps[0])
    t1 = t0 + window
    sel = imu.window(t0, t1)
    if len(sel) < 2 or sel.stamps[-1] - sel.stamps[0] < 0.5 - 1e-9:
        raise InitializationRejectedError("imu window duration", float(sel.stamps[-1] - sel.stamps[0]) if len(sel) else 0.0, 0.5)

    gyro_std = float(np.max(np.std(sel.gyro, axis=0)))
    if gyro_std >= max_gyro_std:
        raise InitializationRejectedError("gyro std", gyro_std, max_gyro_std)
    if wheel is not None and len(wheel):
        m = (wheel.stamps >= t0 - 1e-9) & (wheel.stamps <= t1 + 1e-9)
        if np.any(m):
            speed = float(np.max(np.abs(wheel.speeds(geometry)[m])))
            if speed >= max_wheel_speed:
                raise InitializationRejectedError("wheel speed", speed, max_wheel_speed)

    b_w = sel.gyro.mean(axis=0)
    f = sel.accel.mean(axis=0)
    g_dir = np.asarray(gravity_direction, dtype=float)
    g_dir = g_dir / np.linalg.norm(g_dir)
    g_w = gravity_magnitude * g_dir
    R0 = _zero_yaw(_align(f / np.linalg.norm(f), g_dir))
    q0 = normalize(rot_to_quat(R0))
    b_a = f - quat_to_rot(q0).T @ g_w
    return InitResult(g_w=g_w, b_a=b_a, b_w=b_w, q0=q0, v0=np.zeros(3), t_end=float(sel.stamps[-1]))


__all__ = ["GRAVITY_MAGNITUDE", "InitResult", "InitializationRejectedError", "static_initialize"]
