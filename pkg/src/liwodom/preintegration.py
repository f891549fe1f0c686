"""IMU-odometer pre-integration between sweep end times, and wheel-aided state prediction.

Error-state ordering used by the covariance and the Jacobian matrix:
``[dalpha, dbeta, dtheta, deta, dba, dbw]`` (18 entries). Rotation errors are
right perturbations of the pre-integrated rotation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .geometry import (
    IDENTITY_QUAT,
    Extrinsics,
    NavState,
    SweepStatePair,
    exp_so3_matrix,
    normalize,
    quat_mul,
    quat_to_rot,
    right_jacobian,
    skew,
    so3_exp,
)
from .sensors import ImuStream, NoiseConfig, WheelGeometry, WheelStream

log = logging.getLogger(__name__)

MAX_GAP = 0.05
A, B, TH, ETA, BA, BW = (slice(3 * i, 3 * i + 3) for i in range(6))


class GapError(ValueError):
    """Consecutive samples are further apart than the integrator accepts."""


class OrderingError(ValueError):
    """Sample stamps are not strictly increasing."""


class ImuOdomSample(NamedTuple):
    stamp: float
    gyro: np.ndarray
    accel: np.ndarray
    v_odo: np.ndarray


@dataclass(frozen=True)
class Preintegration:
    """Accumulated relative motion between two instants with its bias Jacobians."""

    b_a_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    R_k_o: np.ndarray = field(default_factory=lambda: np.eye(3))
    dt: float = 0.0
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gamma: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    eta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    jacobian: np.ndarray = field(default_factory=lambda: np.eye(18))
    cov: np.ndarray = field(default_factory=lambda: np.zeros((18, 18)))
    t_start: float | None = None
    count: int = 0

    # bias Jacobians, named after the quantity and the bias
    @property
    def J_ba_alpha(self):
        return self.jacobian[A, BA]

    @property
    def J_bw_alpha(self):
        return self.jacobian[A, BW]

    @property
    def J_ba_beta(self):
        return self.jacobian[B, BA]

    @property
    def J_bw_beta(self):
        return self.jacobian[B, BW]

    @property
    def J_bw_gamma(self):
        return self.jacobian[TH, BW]

    @property
    def J_ba_eta(self):
        return self.jacobian[ETA, BA]

    @property
    def J_bw_eta(self):
        return self.jacobian[ETA, BW]

    @property
    def t_end(self) -> float | None:
        return None if self.t_start is None else self.t_start + self.dt


def _noise_cov(noise: NoiseConfig, dt: float) -> np.ndarray:
    wv = noise.wheel_speed_var
    d = np.concatenate(
        [
            np.full(3, noise.sigma_a**2),
            np.full(3, noise.sigma_w**2),
            np.full(3, noise.sigma_a**2),
            np.full(3, noise.sigma_w**2),
            np.full(3, wv),
            np.full(3, wv),
            np.full(3, noise.sigma_ba**2 * dt),
            np.full(3, noise.sigma_bw**2 * dt),
        ]
    )
    return d


def integrate_step(acc: Preintegration, s_n: ImuOdomSample, s_n1: ImuOdomSample) -> Preintegration:
    """Advance the pre-integration by one mid-point step from ``s_n`` to ``s_n1``."""
    dt = s_n1.stamp - s_n.stamp
    if not dt > 0:
        raise OrderingError(f"samples at {s_n.stamp} and {s_n1.stamp} are not increasing")
    if dt > MAX_GAP + 1e-12:
        raise GapError(f"gap of {dt:.3f}s between {s_n.stamp:.6f} and {s_n1.stamp:.6f}")

    R0 = quat_to_rot(acc.gamma)
    w = 0.5 * (np.asarray(s_n.gyro) + np.asarray(s_n1.gyro)) - acc.b_w_ref
    phi = w * dt
    dR = exp_so3_matrix(phi)
    gamma = normalize(quat_mul(acc.gamma, so3_exp(phi)))
    R1 = quat_to_rot(gamma)
    a0 = np.asarray(s_n.accel) - acc.b_a_ref
    a1 = np.asarray(s_n1.accel) - acc.b_a_ref
    a_mid = 0.5 * (R0 @ a0 + R1 @ a1)
    u0 = acc.R_k_o @ np.asarray(s_n.v_odo)
    u1 = acc.R_k_o @ np.asarray(s_n1.v_odo)

    alpha = acc.alpha + acc.beta * dt + 0.5 * a_mid * dt * dt
    beta = acc.beta + a_mid * dt
    eta = acc.eta + 0.5 * (R0 @ u0 + R1 @ u1) * dt

    # exact linearisation of the recursion above
    Jr = right_jacobian(phi)
    T_th = dR.T
    T_bw = -Jr * dt
    S0 = -R0 @ skew(a0)
    S1 = -R1 @ skew(a1)
    V0 = -R0 @ skew(u0)
    V1 = -R1 @ skew(u1)
    I3 = np.eye(3)

    F = np.eye(18)
    F[TH, TH] = T_th
    F[TH, BW] = T_bw
    da_th = 0.5 * (S0 + S1 @ T_th)
    da_ba = -0.5 * (R0 + R1)
    da_bw = 0.5 * S1 @ T_bw
    F[A, B] = I3 * dt
    F[A, TH] = 0.5 * dt * dt * da_th
    F[A, BA] = 0.5 * dt * dt * da_ba
    F[A, BW] = 0.5 * dt * dt * da_bw
    F[B, TH] = dt * da_th
    F[B, BA] = dt * da_ba
    F[B, BW] = dt * da_bw
    F[ETA, TH] = 0.5 * dt * (V0 + V1 @ T_th)
    F[ETA, BW] = 0.5 * dt * V1 @ T_bw

    # noise inputs: [n_a0, n_w0, n_a1, n_w1, n_v0, n_v1, n_ba, n_bw]
    G = np.zeros((18, 24))
    half_w = 0.5 * T_bw
    for col in (3, 9):
        G[TH, col : col + 3] = half_w
        G[A, col : col + 3] = 0.25 * dt * dt * S1 @ half_w
        G[B, col : col + 3] = 0.5 * dt * S1 @ half_w
        G[ETA, col : col + 3] = 0.5 * dt * V1 @ half_w
    G[A, 0:3] = -0.25 * dt * dt * R0
    G[B, 0:3] = -0.5 * dt * R0
    G[A, 6:9] = -0.25 * dt * dt * R1
    G[B, 6:9] = -0.5 * dt * R1
    G[ETA, 12:15] = 0.5 * dt * R0 @ acc.R_k_o
    G[ETA, 15:18] = 0.5 * dt * R1 @ acc.R_k_o
    G[BA, 18:21] = I3
    G[BW, 21:24] = I3

    Q = _noise_cov(acc.noise, dt)
    cov = F @ acc.cov @ F.T + (G * Q) @ G.T
    cov = 0.5 * (cov + cov.T)

    return replace(
        acc,
        dt=acc.dt + dt,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        eta=eta,
        jacobian=F @ acc.jacobian,
        cov=cov,
        t_start=s_n.stamp if acc.t_start is None else acc.t_start,
        count=acc.count + 1,
    )


def preintegrate(
    samples,
    b_a_ref,
    b_w_ref,
    noise: NoiseConfig = NoiseConfig(),
    extr: Extrinsics = Extrinsics(),
) -> Preintegration:
    """Pre-integrate a whole sample sequence with the given bias linearisation point."""
    acc = Preintegration(
        b_a_ref=np.asarray(b_a_ref, dtype=float).copy(),
        b_w_ref=np.asarray(b_w_ref, dtype=float).copy(),
        noise=noise,
        R_k_o=extr.R_k_o,
    )
    samples = list(samples)
    for s0, s1 in zip(samples[:-1], samples[1:]):
        acc = integrate_step(acc, s0, s1)
    if acc.t_start is None and samples:
        acc = replace(acc, t_start=samples[0].stamp)
    return acc


class CorrectedDeltas(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray


def correct_for_bias(p: Preintegration, b_a_new, b_w_new) -> CorrectedDeltas:
    """First-order update of the pre-integrated values to new biases."""
    dba = np.asarray(b_a_new, dtype=float) - p.b_a_ref
    dbw = np.asarray(b_w_new, dtype=float) - p.b_w_ref
    if max(np.linalg.norm(dba), np.linalg.norm(dbw)) > 0.1:
        warnings.warn("bias moved far from the pre-integration linearisation point", RuntimeWarning, stacklevel=2)
    J = p.jacobian
    alpha = p.alpha + J[A, BA] @ dba + J[A, BW] @ dbw
    beta = p.beta + J[B, BA] @ dba + J[B, BW] @ dbw
    eta = p.eta + J[ETA, BA] @ dba + J[ETA, BW] @ dbw
    gamma = normalize(quat_mul(p.gamma, so3_exp(J[TH, BW] @ dbw)))
    return CorrectedDeltas(alpha, beta, gamma, eta)


def build_samples(
    imu: ImuStream,
    wheel: WheelStream | None,
    geometry: WheelGeometry,
    t0: float,
    t1: float,
) -> list[ImuOdomSample]:
    """IMU samples covering ``[t0, t1]`` with wheel velocity interpolated to each stamp.

    Boundary samples are linearly interpolated when ``t0``/``t1`` fall between
    IMU stamps.
    """
    st = imu.stamps
    if len(st) == 0 or t0 < st[0] - 1e-9 or t1 > st[-1] + 1e-9:
        raise GapError(f"IMU stream does not cover [{t0:.6f}, {t1:.6f}]")
    tol = 1e-9
    inner = np.flatnonzero((st > t0 + tol) & (st < t1 - tol))
    stamps = np.concatenate(([t0], st[inner], [t1]))
    gyro = np.stack([np.interp(stamps, st, imu.gyro[:, i]) for i in range(3)], axis=1)
    accel = np.stack([np.interp(stamps, st, imu.accel[:, i]) for i in range(3)], axis=1)
    # keep exact sample values where stamps coincide with measurements
    for j, t in ((0, t0), (len(stamps) - 1, t1)):
        i = int(np.argmin(np.abs(st - t)))
        if abs(st[i] - t) <= tol:
            gyro[j], accel[j] = imu.gyro[i], imu.accel[i]
    if inner.size:
        gyro[1:-1], accel[1:-1] = imu.gyro[inner], imu.accel[inner]
    if np.any(np.diff(stamps) > MAX_GAP + 1e-12):
        k = int(np.argmax(np.diff(stamps) > MAX_GAP + 1e-12))
        # name the measurements on either side, not the interpolated window edge
        lo = st[np.searchsorted(st, stamps[k] + tol, side="right") - 1]
        hi = st[np.searchsorted(st, stamps[k + 1] - tol, side="left")]
        raise GapError(f"IMU gap between {lo:.6f} and {hi:.6f}")
    if wheel is None or len(wheel) == 0:
        vel = np.zeros((len(stamps), 3))
    else:
        vel = wheel.velocity_at(stamps, geometry)
    return [ImuOdomSample(float(stamps[i]), gyro[i], accel[i], vel[i]) for i in range(len(stamps))]


def predict_states(
    x_prev_end: NavState,
    samples,
    extr: Extrinsics,
    g_w,
    use_wheel: bool = True,
) -> SweepStatePair:
    """Predict the next sweep's begin/end states by integrating samples from ``x_prev_end``.

    With ``use_wheel`` the velocity is replaced by the rotated wheel velocity
    at every step; otherwise it is integrated from the accelerometer.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise GapError("prediction needs at least two samples")
    g_w = np.asarray(g_w, dtype=float)
    R_k = extr.R_k_o
    R = x_prev_end.R
    q = x_prev_end.q
    t = x_prev_end.t.copy()
    v = x_prev_end.v.copy()
    ba, bw = x_prev_end.b_a, x_prev_end.b_w
    for s0, s1 in zip(samples[:-1], samples[1:]):
        dt = s1.stamp - s0.stamp
        if not dt > 0:
            raise OrderingError(f"samples at {s0.stamp} and {s1.stamp} are not increasing")
        if dt > MAX_GAP + 1e-12:
            raise GapError(f"gap of {dt:.3f}s between {s0.stamp:.6f} and {s1.stamp:.6f}")
        dq = so3_exp((0.5 * (s0.gyro + s1.gyro) - bw) * dt)
        q1 = normalize(quat_mul(q, dq))
        R1 = quat_to_rot(q1)
        a_w = 0.5 * (R @ (s0.accel - ba) + R1 @ (s1.accel - ba)) - g_w
        t = t + v * dt + 0.5 * a_w * dt * dt
        if use_wheel:
            v = R1 @ (R_k @ s1.v_odo)
        else:
            v = v + a_w * dt
        q, R = q1, R1
    end = NavState(t, q, v, ba, bw, samples[-1].stamp)
    begin = x_prev_end.replace(stamp=samples[0].stamp)
    return SweepStatePair(begin, end)
