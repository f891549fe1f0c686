"""Robust damped Gauss-Newton minimisation over one sweep's begin and end states."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Extrinsics, NavState, SweepStatePair
from .preintegration import ETA, Preintegration
from .residuals import (
    POINT_COLUMNS,
    fit_planes,
    point_plane_terms,
    residual_consistency,
    residual_imu_odom,
    residual_velocity,
    world_points,
)
from .sweep import Sweep
from .voxel_map import VoxelMap

log = logging.getLogger(__name__)

MODES = ("liwo", "lio", "lidar-only")


class DegenerateGeometryError(RuntimeError):
    def __init__(self, message: str, report: "ResidualReport | None" = None):
        super().__init__(message)
        self.report = report


class SolverStalledError(RuntimeError):
    """No damping level reduced the cost; carries the best state and the report."""

    def __init__(self, message: str, states: SweepStatePair, report: "ResidualReport"):
        super().__init__(message)
        self.states = states
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    max_outer: int = 5
    max_inner: int = 10
    convergence: float = 1e-4
    max_retries: int = 10
    initial_lambda: float = 1e-4
    # Huber thresholds on whitened residual norms
    huber_point: float = 3.0
    huber_imu: float = 10.0
    huber_velocity: float = 5.0
    huber_consistency: float = 5.0
    point_variance: float = 0.001
    velocity_sigma: float = 0.05
    consistency_sigma_t: float = 0.01
    consistency_sigma_q: float = 0.0005
    consistency_sigma_v: float = 0.05
    consistency_sigma_b: float = 0.001
    min_neighbors: int = 5
    min_planarity: float = 0.1
    max_plane_distance: float = 0.5
    # neighbourhoods straddling an edge fit a thick "plane"; skip them
    max_plane_thickness: float = 0.02
    min_valid_points: int = 30
    use_imu: bool = True
    use_odometer: bool = True
    use_velocity: bool = True

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if isinstance(value, bool):
                continue
            if not value > 0:
                raise ValueError(f"solver setting {name} must be positive, got {value}")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "SolverConfig":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        flags = {
            "liwo": dict(use_imu=True, use_odometer=True, use_velocity=True),
            "lio": dict(use_imu=True, use_odometer=False, use_velocity=False),
            "lidar-only": dict(use_imu=False, use_odometer=False, use_velocity=False),
        }[mode]
        flags.update(overrides)
        return cls(**flags)

    @property
    def consistency_weights(self) -> np.ndarray:
        s = np.concatenate(
            [
                np.full(3, self.consistency_sigma_t),
                np.full(3, self.consistency_sigma_q),
                np.full(3, self.consistency_sigma_v),
                np.full(6, self.consistency_sigma_b),
            ]
        )
        return 1.0 / s**2


@dataclass
class ResidualReport:
    costs: dict = field(default_factory=dict)
    points_total: int = 0
    points_used: int = 0
    points_rejected: int = 0
    initial_cost: float = float("nan")
    final_cost: float = float("nan")
    outer_iterations: int = 0
    inner_iterations: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)


def huber(s: np.ndarray, k: float):
    """Huber loss of squared norms ``s`` and its derivative (the IRLS weight)."""
    s = np.asarray(s, dtype=float)
    root = np.sqrt(s)
    rho = np.where(root <= k, s, 2.0 * k * root - k * k)
    with np.errstate(divide="ignore"):
        w = np.where(root <= k, 1.0, k / np.where(root > 0, root, 1.0))
    return rho, w


@dataclass
class _Association:
    p_body: np.ndarray
    alpha: np.ndarray
    normals: np.ndarray
    d: np.ndarray
    weights: np.ndarray


@dataclass
class SweepProblem:
    """Everything held fixed while the states of one sweep are refined."""

    p_body: np.ndarray
    alpha: np.ndarray
    vmap: VoxelMap
    preint: Preintegration | None
    wheel_obs: tuple | None
    prev_end: NavState
    g_w: np.ndarray
    extr: Extrinsics
    cfg: SolverConfig

    def __post_init__(self):
        cfg = self.cfg
        self._imu_rows = None
        self._imu_chol = None
        if cfg.use_imu and self.preint is not None:
            rows = np.arange(18)
            if not cfg.use_odometer:
                rows = np.setdiff1d(rows, np.arange(ETA.start, ETA.stop))
            P = self.preint.cov[np.ix_(rows, rows)] + 1e-14 * np.eye(len(rows))
            W = np.linalg.inv(P)
            W = 0.5 * (W + W.T)
            self._imu_rows = rows
            self._imu_chol = np.linalg.cholesky(W)
        self._cons_sqrt = np.sqrt(cfg.consistency_weights)
        self._vel_sqrt = 1.0 / cfg.velocity_sigma
        self._pt_sqrt = 1.0 / np.sqrt(cfg.point_variance)

    def associate(self, pair: SweepStatePair) -> tuple[_Association, int]:
        cfg = self.cfg
        pw = world_points(self.p_body, self.alpha, pair)
        nbrs, counts = self.vmap.neighbors_batch(pw)
        normals, d, planarity, thickness = fit_planes(nbrs, counts)
        dist = np.einsum("ni,ni->n", normals, pw) + d
        ok = (counts >= cfg.min_neighbors) & (planarity >= cfg.min_planarity)
        ok &= thickness <= cfg.max_plane_thickness
        ok &= np.abs(dist) <= cfg.max_plane_distance
        idx = np.flatnonzero(ok)
        assoc = _Association(self.p_body[idx], self.alpha[idx], normals[idx], d[idx], planarity[idx])
        return assoc, len(pw) - len(idx)

    def blocks(self, pair: SweepStatePair, assoc: _Association, jacobians: bool):
        """Per-family whitened residuals (and Jacobians)."""
        cfg = self.cfg
        out = {}
        r, J = point_plane_terms(assoc.p_body, assoc.alpha, assoc.normals, assoc.d, assoc.weights, pair, jacobians)
        out["point"] = (r * self._pt_sqrt, None if J is None else J * self._pt_sqrt)
        if self._imu_rows is not None:
            res = residual_imu_odom(pair, self.preint, self.g_w, self.extr, jacobians=jacobians)
            r_i, J_i = (res if jacobians else (res, None))
            C = self._imu_chol.T
            rows = self._imu_rows
            out["imu"] = (C @ r_i[rows], None if J_i is None else C @ J_i[rows])
        if cfg.use_velocity and self.wheel_obs is not None:
            res = residual_velocity(pair, self.wheel_obs[0], self.wheel_obs[1], self.extr, jacobians=jacobians)
            r_v, J_v = (res if jacobians else (res, None))
            out["velocity"] = (r_v * self._vel_sqrt, None if J_v is None else J_v * self._vel_sqrt)
        res = residual_consistency(self.prev_end, pair.begin, jacobians=jacobians)
        r_c, J_c = (res if jacobians else (res, None))
        out["consistency"] = (r_c * self._cons_sqrt, None if J_c is None else J_c * self._cons_sqrt[:, None])
        return out

    def _threshold(self, name):
        cfg = self.cfg
        return {
            "imu": cfg.huber_imu,
            "velocity": cfg.huber_velocity,
            "consistency": cfg.huber_consistency,
        }[name]

    def cost(self, pair: SweepStatePair, assoc: _Association):
        blocks = self.blocks(pair, assoc, jacobians=False)
        return self._robust_cost(blocks)[0]

    def _robust_cost(self, blocks):
        costs = {}
        r_pt = blocks["point"][0]
        rho, _ = huber(r_pt * r_pt, self.cfg.huber_point)
        # fixed-order summation keeps the result independent of thread layout
        costs["point"] = float(np.sum(np.sort(rho)))
        for name in ("imu", "velocity", "consistency"):
            if name in blocks:
                r = blocks[name][0]
                costs[name] = float(huber(np.array(r @ r), self._threshold(name))[0])
        return sum(costs.values()), costs

    def normal_equations(self, pair: SweepStatePair, assoc: _Association):
        blocks = self.blocks(pair, assoc, jacobians=True)
        H = np.zeros((30, 30))
        g = np.zeros(30)
        r_pt, J_pt = blocks["point"]
        if len(r_pt):
            _, w = huber(r_pt * r_pt, self.cfg.huber_point)
            Jw = J_pt * w[:, None]
            H[np.ix_(POINT_COLUMNS, POINT_COLUMNS)] += Jw.T @ J_pt
            g[POINT_COLUMNS] += Jw.T @ r_pt
        for name in ("imu", "velocity", "consistency"):
            if name in blocks:
                r, J = blocks[name]
                _, w = huber(np.array(r @ r), self._threshold(name))
                H += float(w) * (J.T @ J)
                g += float(w) * (J.T @ r)
        total, costs = self._robust_cost(blocks)
        return H, g, total, costs


def optimize_sweep(
    sweep: Sweep,
    vmap: VoxelMap,
    prediction: SweepStatePair,
    preint: Preintegration | None,
    wheel_obs,
    prev_end: NavState,
    cfg: SolverConfig,
    extr: Extrinsics = Extrinsics(),
    g_w=(0.0, 0.0, -9.81),
):
    """Refine the begin/end states of ``sweep`` against the map and the motion constraints.

    ``wheel_obs`` is the pair of odometer-frame wheel velocities at the
    sweep's begin and end (or ``None``). Returns ``(states, report)``.
    """
    p_body = sweep.points @ extr.R_l_o.T + extr.t_l_o
    alpha = np.clip((sweep.stamps - prediction.begin.stamp) / prediction.duration, 0.0, 1.0)
    prob = SweepProblem(p_body, alpha, vmap, preint, wheel_obs, prev_end, np.asarray(g_w, float), extr, cfg)
    report = ResidualReport(points_total=len(sweep))
    state = prediction
    lam = cfg.initial_lambda
    assoc = None
    converged = False
    for outer in range(cfg.max_outer):
        assoc, rejected = prob.associate(state)
        report.points_used = len(assoc.d)
        report.points_rejected = rejected
        if len(assoc.d) < cfg.min_valid_points:
            raise DegenerateGeometryError(
                f"sweep {sweep.index}: only {len(assoc.d)} points with valid plane fits", report
            )
        outer_step = 0.0
        for inner in range(cfg.max_inner):
            H, g, cost0, _ = prob.normal_equations(state, assoc)
            report.inner_iterations += 1
            accepted = False
            step_norm = np.inf
            for _ in range(cfg.max_retries):
                A = H + lam * np.diag(np.diag(H)) + 1e-9 * np.eye(30)
                dx = np.linalg.solve(A, -g)
                step_norm = float(np.linalg.norm(dx))
                if step_norm < cfg.convergence:
                    break
                cand = state.boxplus(dx)
                cost1 = prob.cost(cand, assoc)
                if cost1 < cost0:
                    state = cand
                    lam = max(lam / 10.0, 1e-10)
                    accepted = True
                    outer_step += step_norm
                    break
                lam *= 10.0
            report.trace.append((outer, inner, cost0, step_norm, lam))
            if step_norm < cfg.convergence:
                if step_norm > 0 and not accepted:
                    state = state.boxplus(dx)
                    outer_step += step_norm
                break
            if not accepted:
                report.outer_iterations = outer + 1
                report.final_cost = cost0
                raise SolverStalledError(f"sweep {sweep.index}: cost did not decrease", state, report)
        report.outer_iterations = outer + 1
        if outer_step < cfg.convergence:
            converged = True
            break
    report.converged = converged

    if not cfg.use_imu and not cfg.use_velocity:
        # with neither inertial nor wheel terms the velocity follows the pose change
        v = (state.end.t - state.begin.t) / state.duration
        state = SweepStatePair(state.begin, state.end.replace(v=v))

    _, costs = prob._robust_cost(prob.blocks(state, assoc, jacobians=False))
    report.costs = costs
    report.final_cost = sum(costs.values())
    report.initial_cost = prob.cost(prediction, assoc)
    return state, report
