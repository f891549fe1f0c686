"""Simulated scenes shared by the optimizer and acceptance tests."""

import numpy as np

from liwodom.geometry import SweepStatePair, interpolate_poses
from liwodom.residuals import point_plane_terms
from liwodom.scenarios import room_world
from liwodom.sensors import NoiseConfig
from liwodom.simulation import Segment, TrajectoryScript, simulate

# Straight driving, then turning on the spot; each phase holds a constant
# body twist long enough for several sweeps.
TWIST_SCRIPT = TrajectoryScript(
    (Segment(1.0), Segment(1.5, 1.0, 0.0, "straight"), Segment(1.5, 0.0, 0.5, "spin")),
    start_xy=(4.0, 5.0),
)
# sweeps whose whole span lies in a constant-twist phase
STEADY_SWEEPS = (16, 17, 18, 19, 20, 31, 32, 33, 34, 35)


def twist_run(imu_rate=3000, noise=NoiseConfig(), seed=0):
    return simulate(TWIST_SCRIPT, room_world(), noise, seed, imu_rate=imu_rate, wheel_rate=imu_rate)


def truth_pair(out, sweep):
    return SweepStatePair(out.truth.state_at(sweep.t_b), out.truth.state_at(sweep.t_e))


def true_plane_residuals(out, sweep, pair, world=None):
    """Point-to-plane residuals of a sweep against the nearest true world plane."""
    world = world or room_world()
    extr = out.extrinsics
    p_body = sweep.points @ extr.R_l_o.T + extr.t_l_o
    alpha, R, t = interpolate_poses(pair, sweep.stamps)
    p_w = np.einsum("nij,nj->ni", R, p_body) + t
    normals = np.array([p.normal for p in world.planes], dtype=float)
    offsets = np.array([p.offset for p in world.planes])
    best = np.argmin(np.abs(p_w @ normals.T - offsets), axis=1)
    r, _ = point_plane_terms(p_body, alpha, normals[best], -offsets[best], np.ones(len(best)), pair, jacobians=False)
    return r


def truth_map(out, upto, voxel_map_cls, downsample_fn):
    """Map of the rest and constant-twist sweeps before ``upto``, registered at truth."""
    vm = voxel_map_cls(1.0, 20, 0.1)
    steady = set(range(10)) | set(range(15, 25)) | set(range(30, len(out.sweeps)))
    for k in sorted(steady):
        if k < upto:
            sw = out.sweeps[k]
            vm.register_sweep(downsample_fn(sw, 0.5), truth_pair(out, sw), out.extrinsics)
    return vm
