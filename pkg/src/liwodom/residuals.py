"""Residual families of the sweep optimisation and their analytic Jacobians.

Jacobians are taken with respect to the 30-dimensional increment
``[dt_b, dtheta_b, dv_b, dba_b, dbw_b, dt_e, dtheta_e, dv_e, dba_e, dbw_e]``
applied through :meth:`SweepStatePair.boxplus` (right rotation perturbations).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .geometry import (
    Extrinsics,
    NavState,
    SweepStatePair,
    left_jacobian_inv,
    quat_conj,
    quat_left,
    quat_mul,
    quat_right,
    quat_to_rot,
    right_jacobian,
    right_jacobian_inv,
    skew,
    so3_exp,
    so3_log,
)
from .preintegration import BA, BW, ETA, Preintegration, correct_for_bias
from .sweep import TimedPoint

# column offsets inside the 30-vector
TB, QB, VB, BAB, BWB = 0, 3, 6, 9, 12
TE, QE, VE, BAE, BWE = 15, 18, 21, 24, 27
POINT_COLUMNS = np.r_[TB : TB + 3, QB : QB + 3, TE : TE + 3, QE : QE + 3]


class InsufficientNeighborsError(ValueError):
    pass


class PlaneFit(NamedTuple):
    n: np.ndarray
    d: float
    planarity: float
    thickness: float = 0.0


def _canonical_sign(normals: np.ndarray) -> np.ndarray:
    nz = np.abs(normals) > 1e-12
    first = np.argmax(nz, axis=-1)
    lead = np.take_along_axis(normals, first[..., None], axis=-1)[..., 0]
    return np.where(lead < 0, -1.0, 1.0)[..., None] * normals


def fit_planes(points: np.ndarray, counts: np.ndarray):
    """Batched total-least-squares plane fits over the first ``counts[i]`` points of each row.

    Returns ``(normals, d, planarity, thickness)`` where ``thickness`` is the
    RMS distance of the points from their plane; rows with fewer than 3
    points get planarity 0.
    """
    n, k, _ = points.shape
    mask = (np.arange(k)[None, :] < counts[:, None]).astype(float)
    cnt = np.maximum(counts, 1).astype(float)
    centroid = np.einsum("nk,nkj->nj", mask, points) / cnt[:, None]
    diff = (points - centroid[:, None, :]) * mask[:, :, None]
    cov = np.einsum("nki,nkj->nij", diff, diff) / cnt[:, None, None]
    evals, evecs = np.linalg.eigh(cov)
    normals = _canonical_sign(evecs[:, :, 0])
    sig = np.sqrt(np.clip(evals, 0.0, None))
    s1, s2, s3 = sig[:, 2], sig[:, 1], sig[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        planarity = np.where(s1 > 0, (s2 - s3) / s1, 0.0)
    planarity = np.where(counts >= 3, np.clip(planarity, 0.0, 1.0), 0.0)
    d = -np.einsum("ni,ni->n", normals, centroid)
    return normals, d, planarity, s3


def fit_plane(pts, min_points: int = 5) -> PlaneFit:
    """Plane through a neighbourhood: smallest-eigenvalue normal, offset and planarity score."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(pts) < min_points:
        raise InsufficientNeighborsError(f"need {min_points} points for a plane, got {len(pts)}")
    normals, d, planarity, thickness = fit_planes(pts[None], np.array([len(pts)]))
    return PlaneFit(normals[0], float(d[0]), float(planarity[0]), float(thickness[0]))


class _SlerpBasis:
    """Quantities shared by every point of a sweep for the interpolated-rotation Jacobians."""

    def __init__(self, pair: SweepStatePair):
        delta = quat_mul(quat_conj(pair.begin.q), pair.end.q)
        if delta[0] < 0:
            delta = -delta
        self.phi = so3_log(delta)
        self.theta = float(np.linalg.norm(self.phi))
        self.K = skew(self.phi)
        self.K2 = self.K @ self.K
        self.Jl_inv = left_jacobian_inv(self.phi)
        self.Jr_inv = right_jacobian_inv(self.phi)
        self.Rb = pair.begin.R

    def coeffs(self, alpha: np.ndarray):
        x = alpha * self.theta
        small = x < 1e-4
        xs = np.where(small, 1.0, x)
        x2 = x * x
        s = np.where(small, 1.0 - x2 / 6.0, np.sin(xs) / xs)
        c = np.where(small, 0.5 - x2 / 24.0, (1.0 - np.cos(xs)) / xs**2)
        b = np.where(small, 1.0 / 6.0 - x2 / 120.0, (xs - np.sin(xs)) / xs**3)
        # Exp(a phi) = I + s a K + c a^2 K^2 ; J_r(a phi) = I - c a K + b a^2 K^2
        return s * alpha, c * alpha**2, c * alpha, b * alpha**2


def point_plane_terms(
    p_body: np.ndarray,
    alpha: np.ndarray,
    normals: np.ndarray,
    d: np.ndarray,
    weights: np.ndarray,
    pair: SweepStatePair,
    jacobians: bool = True,
):
    """Residuals ``w (n . p_w + d)`` and ``(N, 12)`` Jacobians over ``[t_b, theta_b, t_e, theta_e]``."""
    basis = _SlerpBasis(pair)
    e1, e2, j1, j2 = basis.coeffs(alpha)
    K, K2 = basis.K, basis.K2
    Kp = p_body @ K.T
    K2p = p_body @ K2.T
    ep = p_body + e1[:, None] * Kp + e2[:, None] * K2p
    t_p = (1 - alpha)[:, None] * pair.begin.t + alpha[:, None] * pair.end.t
    p_w = ep @ basis.Rb.T + t_p
    r = weights * (np.einsum("ni,ni->n", normals, p_w) + d)
    if not jacobians:
        return r, None
    m = normals @ basis.Rb
    # u = R_p^T n = Exp(-a phi) Rb^T n
    u = m - e1[:, None] * (m @ K.T) + e2[:, None] * (m @ K2.T)
    g = -weights[:, None] * np.cross(u, p_body)
    gK, gK2 = g @ K, g @ K2
    gE_T = g - e1[:, None] * gK + e2[:, None] * gK2
    gJr_l = g @ basis.Jl_inv - j1[:, None] * (gK @ basis.Jl_inv) + j2[:, None] * (gK2 @ basis.Jl_inv)
    gJr_r = g @ basis.Jr_inv - j1[:, None] * (gK @ basis.Jr_inv) + j2[:, None] * (gK2 @ basis.Jr_inv)
    J = np.empty((len(r), 12))
    J[:, 0:3] = (weights * (1 - alpha))[:, None] * normals
    J[:, 3:6] = gE_T - alpha[:, None] * gJr_l
    J[:, 6:9] = (weights * alpha)[:, None] * normals
    J[:, 9:12] = alpha[:, None] * gJr_r
    return r, J


def residual_point_plane(p: TimedPoint, fit: PlaneFit, pair: SweepStatePair, extr: Extrinsics):
    """Point-to-plane residual of one LiDAR point and its 12 Jacobian columns."""
    tb, te = pair.begin.stamp, pair.end.stamp
    if not (tb <= p.stamp <= te):
        raise ValueError(f"point stamp {p.stamp} outside [{tb}, {te}]")
    p_body = extr.R_l_o @ np.asarray(p.p, dtype=float) + extr.t_l_o
    alpha = np.array([(p.stamp - tb) / (te - tb)])
    r, J = point_plane_terms(
        p_body[None], alpha, np.asarray(fit.n)[None], np.array([fit.d]), np.array([fit.planarity]), pair
    )
    return float(r[0]), J[0]


def residual_imu_odom(
    pair: SweepStatePair,
    preint: Preintegration,
    g_w,
    extr: Extrinsics,
    jacobians: bool = False,
):
    """Stacked 18-row pre-integration residual ``[alpha, beta, gamma, eta, ba, bw]``."""
    dt = preint.dt
    if abs(dt - pair.duration) > 1e-6:
        raise ValueError(f"pre-integration spans {dt:.6f}s but the sweep spans {pair.duration:.6f}s")
    g_w = np.asarray(g_w, dtype=float)
    b, e = pair.begin, pair.end
    Rb, Re = b.R, e.R
    RbT = Rb.T
    corr = correct_for_bias(preint, b.b_a, b.b_w)
    t_k = extr.t_k_o

    pa = e.t - b.t + 0.5 * g_w * dt * dt - b.v * dt
    pb = e.v + g_w * dt - b.v
    pe = e.t - b.t + Re @ t_k
    M = quat_mul(quat_conj(b.q), e.q)
    gc_inv = quat_conj(corr.gamma)
    N = quat_mul(M, gc_inv)

    r = np.empty(18)
    r[0:3] = RbT @ pa - corr.alpha
    r[3:6] = RbT @ pb - corr.beta
    r[6:9] = 2.0 * N[1:]
    r[9:12] = RbT @ pe - t_k - corr.eta
    r[12:15] = e.b_a - b.b_a
    r[15:18] = e.b_w - b.b_w
    if not jacobians:
        return r

    J = np.zeros((18, 30))
    I3 = np.eye(3)
    Jac = preint.jacobian
    # alpha row
    J[0:3, TB : TB + 3] = -RbT
    J[0:3, QB : QB + 3] = skew(RbT @ pa)
    J[0:3, VB : VB + 3] = -RbT * dt
    J[0:3, TE : TE + 3] = RbT
    J[0:3, BAB : BAB + 3] = -Jac[0:3, BA]
    J[0:3, BWB : BWB + 3] = -Jac[0:3, BW]
    # beta row
    J[3:6, QB : QB + 3] = skew(RbT @ pb)
    J[3:6, VB : VB + 3] = -RbT
    J[3:6, VE : VE + 3] = RbT
    J[3:6, BAB : BAB + 3] = -Jac[3:6, BA]
    J[3:6, BWB : BWB + 3] = -Jac[3:6, BW]
    # gamma row
    J[6:9, QB : QB + 3] = -quat_right(N)[1:, 1:]
    J[6:9, QE : QE + 3] = (quat_left(M) @ quat_right(gc_inv))[1:, 1:]
    x0 = Jac[6:9, BW] @ (b.b_w - preint.b_w_ref)
    lm = quat_left(quat_mul(M, so3_exp(-x0))) @ quat_right(quat_conj(preint.gamma))
    J[6:9, BWB : BWB + 3] = -lm[1:, 1:] @ right_jacobian(-x0) @ Jac[6:9, BW]
    # eta row
    J[9:12, TB : TB + 3] = -RbT
    J[9:12, QB : QB + 3] = skew(RbT @ pe)
    J[9:12, TE : TE + 3] = RbT
    J[9:12, QE : QE + 3] = -RbT @ Re @ skew(t_k)
    J[9:12, BAB : BAB + 3] = -Jac[ETA, BA]
    J[9:12, BWB : BWB + 3] = -Jac[ETA, BW]
    # bias rows
    J[12:15, BAB : BAB + 3] = -I3
    J[12:15, BAE : BAE + 3] = I3
    J[15:18, BWB : BWB + 3] = -I3
    J[15:18, BWE : BWE + 3] = I3
    return r, J


def residual_velocity(pair: SweepStatePair, v_hat_b, v_hat_e, extr: Extrinsics, jacobians: bool = False):
    """Wheel velocity observation at the sweep's begin and end, 6 rows."""
    R_k = extr.R_k_o
    ub = R_k @ np.asarray(v_hat_b, dtype=float)
    ue = R_k @ np.asarray(v_hat_e, dtype=float)
    Rb, Re = pair.begin.R, pair.end.R
    r = np.concatenate([pair.begin.v - Rb @ ub, pair.end.v - Re @ ue])
    if not jacobians:
        return r
    J = np.zeros((6, 30))
    J[0:3, VB : VB + 3] = np.eye(3)
    J[0:3, QB : QB + 3] = Rb @ skew(ub)
    J[3:6, VE : VE + 3] = np.eye(3)
    J[3:6, QE : QE + 3] = Re @ skew(ue)
    return r, J


def residual_consistency(prev_end: NavState, begin: NavState, jacobians: bool = False):
    """Tie the sweep's begin state to the previous sweep's end state, 15 rows."""
    M = quat_mul(quat_conj(prev_end.q), begin.q)
    r = np.concatenate(
        [
            begin.t - prev_end.t,
            2.0 * M[1:],
            begin.v - prev_end.v,
            begin.b_a - prev_end.b_a,
            begin.b_w - prev_end.b_w,
        ]
    )
    if not jacobians:
        return r
    J = np.zeros((15, 30))
    J[:, 0:15] = np.eye(15)
    J[3:6, QB : QB + 3] = quat_left(M)[1:, 1:]
    return r, J


def world_points(p_body: np.ndarray, alpha: np.ndarray, pair: SweepStatePair) -> np.ndarray:
    """Body-frame points to world frame through the interpolated pose."""
    basis = _SlerpBasis(pair)
    e1, e2, _, _ = basis.coeffs(alpha)
    ep = p_body + e1[:, None] * (p_body @ basis.K.T) + e2[:, None] * (p_body @ basis.K2.T)
    t_p = (1 - alpha)[:, None] * pair.begin.t + alpha[:, None] * pair.end.t
    return ep @ basis.Rb.T + t_p


__all__ = [
    "POINT_COLUMNS",
    "InsufficientNeighborsError",
    "PlaneFit",
    "fit_plane",
    "fit_planes",
    "point_plane_terms",
    "quat_to_rot",
    "residual_consistency",
    "residual_imu_odom",
    "residual_point_plane",
    "residual_velocity",
    "world_points",
]
