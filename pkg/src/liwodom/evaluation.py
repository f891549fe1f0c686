"""Trajectory error metrics after rigid alignment."""

from __future__ import annotations

import numpy as np


class EvaluationError(ValueError):
    pass


def associate(est_stamps, ref_stamps, max_dt: float = 0.01):
    """Match each estimate to the nearest reference stamp within ``max_dt``.

    Returns index arrays ``(i_est, i_ref)``; every reference is used at most once.
    """
    est_stamps = np.asarray(est_stamps, dtype=float)
    ref_stamps = np.asarray(ref_stamps, dtype=float)
    if len(ref_stamps) == 0 or len(est_stamps) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    pos = np.searchsorted(ref_stamps, est_stamps)
    lo = np.clip(pos - 1, 0, len(ref_stamps) - 1)
    hi = np.clip(pos, 0, len(ref_stamps) - 1)
    pick = np.where(np.abs(ref_stamps[hi] - est_stamps) < np.abs(ref_stamps[lo] - est_stamps), hi, lo)
    ok = np.abs(ref_stamps[pick] - est_stamps) <= max_dt + 1e-12
    i_est = np.flatnonzero(ok)
    i_ref = pick[ok]
    _, first = np.unique(i_ref, return_index=True)
    first.sort()
    return i_est[first], i_ref[first]


def align_rigid(src: np.ndarray, dst: np.ndarray):
    """Rotation and translation minimising ``sum |R src + t - dst|^2`` (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, mu_d - R @ mu_s


def _pairs(est, truth, max_dt):
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    i, j = associate(est[:, 0], truth[:, 0], max_dt)
    if len(i) < 3:
        raise EvaluationError(f"only {len(i)} associated poses; need at least 3")
    return est[i], truth[j]


def evaluate_ate(est, truth, max_dt: float = 0.01) -> float:
    """Absolute translational error (RMSE, m) of ``est`` against ``truth``.

    Both are arrays whose first four columns are ``stamp, tx, ty, tz``.
    """
    e, g = _pairs(est, truth, max_dt)
    R, t = align_rigid(e[:, 1:4], g[:, 1:4])
    err = e[:, 1:4] @ R.T + t - g[:, 1:4]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def velocity_rmse(est_v, truth_v, est_pose=None, truth_pose=None, max_dt: float = 0.01) -> float:
    """RMSE of world velocities ``stamp, vx, vy, vz`` after the pose alignment rotation.

    When poses are given, the alignment rotation estimated on positions is
    applied to the estimated velocities first.
    """
    e, g = _pairs(est_v, truth_v, max_dt)
    ve = e[:, 1:4]
    if est_pose is not None and truth_pose is not None:
        ep, gp = _pairs(est_pose, truth_pose, max_dt)
        R, _ = align_rigid(ep[:, 1:4], gp[:, 1:4])
        ve = ve @ R.T
    err = ve - g[:, 1:4]
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


__all__ = ["EvaluationError", "align_rigid", "associate", "evaluate_ate", "velocity_rmse"]
