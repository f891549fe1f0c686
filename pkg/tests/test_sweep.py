import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from liwodom.sweep import Sweep, downsample, pack_keys, unpack_keys, voxel_indices


def make_sweep(points, stamps=None, t_b=0.0, t_e=0.1):
    points = np.asarray(points, float).reshape(-1, 3)
    if stamps is None:
        stamps = np.linspace(t_b, t_e, len(points)) if len(points) else np.zeros(0)
    return Sweep(points, stamps, t_b, t_e, 3)


def occupied_voxels(points, size):
    """Independent count: set of integer floor tuples."""
    return len({tuple(int(np.floor(c / size)) for c in p) for p in points})


def test_three_points_in_one_voxel():
    s = make_sweep([[0.1, 0.1, 0.1], [0.2, 0.3, 0.4], [0.45, 0.05, 0.25]])
    out = downsample(s, 0.5)
    assert len(out) == 1
    np.testing.assert_array_equal(out.points[0], [0.1, 0.1, 0.1])


def test_keeps_first_by_stamp():
    s = make_sweep([[0.2, 0.3, 0.4], [0.1, 0.1, 0.1]], stamps=[0.05, 0.01])
    out = downsample(s, 0.5)
    assert out.stamps[0] == 0.01
    np.testing.assert_array_equal(out.points[0], [0.1, 0.1, 0.1])


def test_well_separated_points_all_retained():
    g = np.arange(5) * 0.9
    pts = np.array([[x, y, z] for x in g for y in g for z in g]) - 1.7
    assert len(downsample(make_sweep(pts), 0.5)) == len(pts)


def test_matches_occupancy_count():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, (10_000, 3))
    out = downsample(make_sweep(pts), 0.5)
    assert len(out) == occupied_voxels(pts, 0.5)


def test_negative_coordinates_floor_down():
    np.testing.assert_array_equal(voxel_indices(np.array([[-0.1, 0.1, -0.6]]), 0.5), [[-1, 0, -2]])
    s = make_sweep([[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]])
    assert len(downsample(s, 0.5)) == 2


def test_empty_sweep():
    out = downsample(make_sweep(np.zeros((0, 3))), 0.5)
    assert len(out) == 0 and out.t_b == 0.0 and out.t_e == 0.1


def test_key_packing_round_trip(rng):
    idx = rng.integers(-(2**19), 2**19, (1000, 3))
    np.testing.assert_array_equal(unpack_keys(pack_keys(idx)), idx)


def test_sweep_validation():
    with pytest.raises(ValueError):
        Sweep(np.zeros((1, 3)), [0.5], 0.0, 0.1)
    with pytest.raises(ValueError):
        Sweep(np.zeros((0, 3)), [], 0.1, 0.1)
    s = Sweep([[1, 0, 0], [2, 0, 0]], [0.05, 0.01], 0.0, 0.1)
    np.testing.assert_array_equal(s.stamps, [0.01, 0.05])
    np.testing.assert_array_equal(s.points[0], [2, 0, 0])


points_strategy = arrays(np.float64, st.tuples(st.integers(0, 300), st.just(3)), elements=st.floats(-20, 20))


@given(points_strategy)
def test_downsample_properties(pts):
    s = make_sweep(pts)
    once = downsample(s, 0.5)
    twice = downsample(once, 0.5)
    np.testing.assert_array_equal(once.points, twice.points)
    np.testing.assert_array_equal(once.stamps, twice.stamps)
    # subset of the input, still ordered, one per voxel
    rows = {tuple(p) for p in s.points}
    assert all(tuple(p) in rows for p in once.points)
    assert np.all(np.diff(once.stamps) >= 0)
    keys = pack_keys(voxel_indices(once.points, 0.5))
    assert len(np.unique(keys)) == len(keys) == occupied_voxels(pts, 0.5)
    again = downsample(make_sweep(pts), 0.5)
    np.testing.assert_array_equal(again.points, once.points)
