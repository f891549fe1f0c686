"""Random operation sequences over the voxel map and the down-sampler."""

import numpy as np

from liwodom.geometry import Extrinsics, NavState, SweepStatePair
from liwodom.sweep import Sweep, downsample
from liwodom.voxel_map import VoxelMap


def max_occupancy(points: np.ndarray, voxel: float) -> int:
    """Largest number of points sharing one voxel, recomputed from coordinates."""
    if len(points) == 0:
        return 0
    _, counts = np.unique(np.floor(points / voxel), axis=0, return_counts=True)
    return int(counts.max())


def run_random_ops(rng, n_ops):
    """Apply ``n_ops`` random add / register / prune / query operations, checking both caps after each.

    Returns the largest map-voxel and down-sampled-voxel occupancies seen.
    """
    m = VoxelMap()
    worst_map = worst_ds = 0
    for _ in range(n_ops):
        op = rng.integers(0, 4)
        if op == 0:
            centre = rng.uniform(-5, 5, 3)
            spread = rng.uniform(0.05, 2.0)
            m.add_points(centre + rng.normal(0, spread, (int(rng.integers(1, 60)), 3)))
        elif op == 1:
            pts = rng.uniform(-4, 4, (int(rng.integers(1, 80)), 3)) * rng.uniform(0.1, 1.0)
            sweep = Sweep(pts, np.sort(rng.uniform(0, 0.1, len(pts))), 0.0, 0.1)
            ds = downsample(sweep, 0.5)
            worst_ds = max(worst_ds, max_occupancy(ds.points, 0.5))
            b = NavState(rng.normal(0, 1, 3), [1, 0, 0, 0], np.zeros(3), np.zeros(3), np.zeros(3), 0.0)
            m.register_sweep(ds, SweepStatePair(b, b.replace(stamp=0.1)), Extrinsics())
        elif op == 2:
            m.prune_far(rng.uniform(-5, 5, 3), rng.uniform(1.0, 10.0))
        else:
            m.neighbors_batch(rng.uniform(-5, 5, (5, 3)))
        worst_map = max(worst_map, max_occupancy(m.points(), 1.0))
    m.check_invariants()
    return worst_map, worst_ds
