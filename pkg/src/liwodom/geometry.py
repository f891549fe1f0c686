"""Rotation, pose and state arithmetic.

Conventions used throughout the package:

- Quaternions are Hamilton quaternions stored as numpy arrays ``[w, x, y, z]``.
- ``q`` in a :class:`NavState` maps body (IMU) coordinates to world
  coordinates: ``p_w = R(q) @ p_b + t``.
- Rotation perturbations are applied on the right: ``q <- q ⊗ Exp(dtheta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8
_UNIT_TOL = 1e-9

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def _vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def normalize(q) -> np.ndarray:
    """Return ``q`` scaled to unit norm."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"cannot normalize quaternion {q}")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_left(q) -> np.ndarray:
    """Matrix ``L(q)`` with ``q ⊗ p = L(q) @ p``."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def quat_right(q) -> np.ndarray:
    """Matrix ``Rm(q)`` with ``p ⊗ q = Rm(q) @ p``."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ]
    )


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns the representative with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q = normalize(q)
    return q if q[0] >= 0 else -q


def rotations_equal(q0, q1, tol: float = 1e-9) -> bool:
    """True when ``q0`` and ``q1`` represent the same rotation (``q ~ -q``)."""
    return abs(abs(float(np.dot(q0, q1))) - 1.0) < tol


def quat_angle(q0, q1) -> float:
    """Geodesic angle in radians between two rotations."""
    rel = quat_mul(quat_conj(normalize(q0)), normalize(q1))
    return 2.0 * float(np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0])))


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    """Quaternion of the rotation by ``|phi|`` radians about ``phi/|phi|``."""
    phi = _vec3(phi, "rotation vector")
    theta = np.linalg.norm(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        q = np.concatenate(([1.0 - t2 / 8.0], 0.5 * phi * (1.0 - t2 / 24.0)))
        return q / np.linalg.norm(q)
    half = 0.5 * theta
    return np.concatenate(([np.cos(half)], np.sin(half) / theta * phi))


def so3_log(q) -> np.ndarray:
    """Rotation vector of ``q``, angle in ``[0, pi]``."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(s, q[0]) / s * v


def exp_so3_matrix(phi) -> np.ndarray:
    """Rodrigues formula, rotation matrix of a rotation vector."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def _jr_coeffs(theta):
    """Coefficients ``(a, b)`` of ``J_r(x) = I - a [x]x + b [x]x^2`` with ``theta = |x|``."""
    theta = np.asarray(theta, dtype=float)
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / t**2)
    b = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / t**3)
    return a, b


def right_jacobian(phi) -> np.ndarray:
    """SO(3) right Jacobian: ``Exp(phi + d) ~ Exp(phi) Exp(J_r(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    a, b = _jr_coeffs(np.linalg.norm(phi))
    K = skew(phi)
    return np.eye(3) - a * K + b * K @ K


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-4:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * K @ K


def left_jacobian_inv(phi) -> np.ndarray:
    return right_jacobian_inv(-np.asarray(phi, dtype=float))


def slerp(q0, q1, alpha: float) -> np.ndarray:
    """Constant-rate interpolation from ``q0`` (alpha=0) to ``q1`` (alpha=1).

    Follows the shorter arc. Computed as ``q0 ⊗ Exp(alpha * Log(q0^-1 ⊗ q1))``.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"slerp fraction must lie in [0, 1], got {alpha}")
    delta = quat_mul(quat_conj(q0), q1)
    if delta[0] < 0:
        delta = -delta
    return normalize(quat_mul(q0, so3_exp(alpha * so3_log(delta))))


def batch_exp_matrix(phis: np.ndarray) -> np.ndarray:
    """Rodrigues formula for ``(N, 3)`` rotation vectors, returns ``(N, 3, 3)``."""
    theta = np.linalg.norm(phis, axis=1)
    small = theta < 1e-6
    t = np.where(small, 1.0, theta)
    s = np.where(small, 1.0 - theta**2 / 6.0, np.sin(t) / t)
    c = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    K = np.zeros((len(phis), 3, 3))
    K[:, 0, 1] = -phis[:, 2]
    K[:, 0, 2] = phis[:, 1]
    K[:, 1, 0] = phis[:, 2]
    K[:, 1, 2] = -phis[:, 0]
    K[:, 2, 0] = -phis[:, 1]
    K[:, 2, 1] = phis[:, 0]
    return np.eye(3) + s[:, None, None] * K + c[:, None, None] * (K @ K)


@dataclass(frozen=True)
class NavState:
    """Full navigation state at one instant."""

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray
    stamp: float

    def __post_init__(self):
        object.__setattr__(self, "t", _vec3(self.t, "translation"))
        object.__setattr__(self, "v", _vec3(self.v, "velocity"))
        object.__setattr__(self, "b_a", _vec3(self.b_a, "accelerometer bias"))
        object.__setattr__(self, "b_w", _vec3(self.b_w, "gyroscope bias"))
        q = normalize(np.asarray(self.q, dtype=float).reshape(4))
        object.__setattr__(self, "q", q)
        if not np.isfinite(self.stamp) or self.stamp < 0:
            raise ValueError(f"state stamp must be finite and non-negative, got {self.stamp}")
        object.__setattr__(self, "stamp", float(self.stamp))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.q)

    @classmethod
    def identity(cls, stamp: float = 0.0) -> "NavState":
        z = np.zeros(3)
        return cls(z, IDENTITY_QUAT, z, z, z, stamp)

    def replace(self, **changes) -> "NavState":
        values = dict(t=self.t, q=self.q, v=self.v, b_a=self.b_a, b_w=self.b_w, stamp=self.stamp)
        values.update(changes)
        return NavState(**values)

    def boxplus(self, delta: np.ndarray) -> "NavState":
        """Apply a 15-vector increment ``[dt, dtheta, dv, dba, dbw]``."""
        return NavState(
            self.t + delta[0:3],
            quat_mul(self.q, so3_exp(delta[3:6])),
            self.v + delta[6:9],
            self.b_a + delta[9:12],
            self.b_w + delta[12:15],
            self.stamp,
        )


@dataclass(frozen=True)
class SweepStatePair:
    """Begin and end states bounding one sweep."""

    begin: NavState
    end: NavState

    def __post_init__(self):
        if not self.begin.stamp < self.end.stamp:
            raise ValueError(
                f"sweep begin stamp {self.begin.stamp} must precede end stamp {self.end.stamp}"
            )

    @property
    def duration(self) -> float:
        return self.end.stamp - self.begin.stamp

    def boxplus(self, delta: np.ndarray) -> "SweepStatePair":
        return SweepStatePair(self.begin.boxplus(delta[:15]), self.end.boxplus(delta[15:30]))


@dataclass(frozen=True)
class Extrinsics:
    """LiDAR-to-IMU and odometer-to-IMU rigid transforms, constant over a run."""

    q_l_o: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    t_l_o: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_k_o: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    t_k_o: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("q_l_o", "q_k_o"):
            q = np.asarray(getattr(self, name), dtype=float).reshape(4)
            if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                raise ValueError(f"{name} is not a unit quaternion: {q}")
            object.__setattr__(self, name, normalize(q))
        object.__setattr__(self, "t_l_o", _vec3(self.t_l_o, "t_l_o"))
        object.__setattr__(self, "t_k_o", _vec3(self.t_k_o, "t_k_o"))

    @property
    def R_l_o(self) -> np.ndarray:
        return quat_to_rot(self.q_l_o)

    @property
    def R_k_o(self) -> np.ndarray:
        return quat_to_rot(self.q_k_o)


def interpolate_state(pair: SweepStatePair, t_p: float) -> NavState:
    """State at ``t_p`` by linear interpolation of vectors and slerp of attitude."""
    tb, te = pair.begin.stamp, pair.end.stamp
    if not (tb <= t_p <= te):
        raise ValueError(f"stamp {t_p} outside sweep interval [{tb}, {te}]")
    if t_p == tb:
        return pair.begin
    if t_p == te:
        return pair.end
    a = (t_p - tb) / (te - tb)
    b, e = pair.begin, pair.end
    return NavState(
        (1 - a) * b.t + a * e.t,
        slerp(b.q, e.q, a),
        (1 - a) * b.v + a * e.v,
        (1 - a) * b.b_a + a * e.b_a,
        (1 - a) * b.b_w + a * e.b_w,
        t_p,
    )


def interpolate_poses(pair: SweepStatePair, stamps: np.ndarray):
    """Vectorised pose interpolation.

    Returns ``(alpha, R, t)`` with shapes ``(N,)``, ``(N, 3, 3)``, ``(N, 3)``.
    """
    tb, te = pair.begin.stamp, pair.end.stamp
    alpha = (np.asarray(stamps, dtype=float) - tb) / (te - tb)
    if alpha.size and (alpha.min() < -1e-12 or alpha.max() > 1 + 1e-12):
        raise ValueError("point stamps outside the sweep interval")
    alpha = np.clip(alpha, 0.0, 1.0)
    delta = quat_mul(quat_conj(pair.begin.q), pair.end.q)
    if delta[0] < 0:
        delta = -delta
    phi = so3_log(delta)
    Rb = pair.begin.R
    R = Rb @ batch_exp_matrix(alpha[:, None] * phi[None, :])
    t = (1 - alpha)[:, None] * pair.begin.t + alpha[:, None] * pair.end.t
    return alpha, R, t
