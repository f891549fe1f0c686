import numpy as np
import pytest

from liwodom.geometry import quat_angle
from liwodom.optimizer import (
    DegenerateGeometryError,
    SolverConfig,
    SolverStalledError,
    optimize_sweep,
)
from liwodom.preintegration import build_samples, preintegrate
from liwodom.sensors import NoiseConfig
from liwodom.sweep import downsample
from liwodom.voxel_map import VoxelMap

from benchmark import closed_loop
from simcases import truth_map, truth_pair, twist_run


@pytest.fixture(scope="module")
def scene():
    return twist_run(3000)


def problem(out, j):
    sw = out.sweeps[j]
    pair = truth_pair(out, sw)
    samples = build_samples(out.imu, out.wheel, out.geometry, sw.t_b, sw.t_e)
    preint = preintegrate(samples, pair.begin.b_a, pair.begin.b_w, NoiseConfig.nominal(), out.extrinsics)
    v = out.wheel.velocity_at([sw.t_b, sw.t_e], out.geometry)
    vmap = truth_map(out, j, VoxelMap, downsample)
    return downsample(sw, 0.5), vmap, pair, preint, (v[0], v[1])


def solve(out, ds, vmap, pred, preint, wheel, prev_end, cfg):
    return optimize_sweep(ds, vmap, pred, preint, wheel, prev_end, cfg, out.extrinsics, out.g_w)


@pytest.mark.parametrize("j", [18, 35])
def test_truth_is_a_fixed_point(scene, j):
    ds, vmap, pair, preint, wheel = problem(scene, j)
    # noiseless map: any neighbourhood that is not exactly flat straddles an edge
    cfg = SolverConfig(max_plane_thickness=1e-6)
    state, report = solve(scene, ds, vmap, pair, preint, wheel, pair.begin, cfg)
    assert report.outer_iterations == 1
    assert report.trace[-1][3] < 1e-8
    for a, b in ((state.begin, pair.begin), (state.end, pair.end)):
        assert np.linalg.norm(a.t - b.t) < 1e-8
        assert quat_angle(a.q, b.q) < 1e-8
        assert np.linalg.norm(a.v - b.v) < 1e-8


def _perturb(pair, rng, meters=0.05, degrees=1.0):
    d = np.zeros(30)
    for off in (0, 15):
        for k, size in ((off, meters), (off + 3, np.radians(degrees))):
            u = rng.normal(size=3)
            d[k : k + 3] = size * u / np.linalg.norm(u)
    return pair.boxplus(d)


@pytest.mark.parametrize("j", [18, 20, 33, 35])
def test_recovers_from_perturbed_prediction(scene, j):
    ds, vmap, pair, preint, wheel = problem(scene, j)
    pred = _perturb(pair, np.random.default_rng(j))
    state, report = solve(scene, ds, vmap, pred, preint, wheel, pair.begin, SolverConfig())
    assert np.linalg.norm(state.end.t - pair.end.t) < 2e-3
    assert np.degrees(quat_angle(state.end.q, pair.end.q)) < 0.05
    assert report.final_cost < report.initial_cost
    assert report.points_used + report.points_rejected == report.points_total == len(ds)


def test_point_order_does_not_matter(scene):
    ds, vmap, pair, preint, wheel = problem(scene, 20)
    pred = _perturb(pair, np.random.default_rng(3))
    perm = np.random.default_rng(4).permutation(len(ds))
    shuffled = type(ds)(ds.points[perm], ds.stamps[perm], ds.t_b, ds.t_e, ds.index)
    a, _ = solve(scene, ds, vmap, pred, preint, wheel, pair.begin, SolverConfig())
    b, _ = solve(scene, shuffled, vmap, pred, preint, wheel, pair.begin, SolverConfig())
    np.testing.assert_allclose(a.end.t, b.end.t, atol=1e-10)
    assert quat_angle(a.end.q, b.end.q) < 1e-10


def test_lidar_only_mode_solves_pose(scene):
    ds, vmap, pair, _, _ = problem(scene, 20)
    pred = _perturb(pair, np.random.default_rng(5), meters=0.02, degrees=0.5)
    state, _ = solve(scene, ds, vmap, pred, None, None, pair.begin, SolverConfig.for_mode("lidar-only"))
    assert np.linalg.norm(state.end.t - pair.end.t) < 2e-3


def test_empty_map_is_degenerate(scene):
    ds, _, pair, preint, wheel = problem(scene, 18)
    with pytest.raises(DegenerateGeometryError) as info:
        solve(scene, ds, VoxelMap(), pair, preint, wheel, pair.begin, SolverConfig())
    assert info.value.report.points_used == 0


def test_stall_carries_report(scene):
    ds, vmap, pair, preint, wheel = problem(scene, 18)
    pred = _perturb(pair, np.random.default_rng(6))
    cfg = SolverConfig(max_retries=1, initial_lambda=1e12, convergence=1e-300)
    with pytest.raises(SolverStalledError) as info:
        solve(scene, ds, vmap, pred, preint, wheel, pair.begin, cfg)
    assert info.value.report.trace
    assert info.value.states is not None


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(huber_point=0.0)
    with pytest.raises(ValueError):
        SolverConfig.for_mode("visual")
    lio = SolverConfig.for_mode("lio")
    assert lio.use_imu and not lio.use_odometer and not lio.use_velocity


def test_noisy_run_reduces_cost_on_almost_every_sweep():
    reports = [r for r in closed_loop(0, True, "liwo")["result"].reports if r is not None]
    better = sum(r.final_cost < r.initial_cost for r in reports)
    assert len(reports) > 500
    assert better / len(reports) >= 0.99
