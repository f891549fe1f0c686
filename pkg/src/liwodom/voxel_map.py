"""World-frame point map stored in fixed-size voxels with a per-voxel cap."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Extrinsics, SweepStatePair, interpolate_poses
from .sweep import Sweep, pack_keys, unpack_keys, voxel_indices

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=np.int64)


def sweep_to_world(sweep: Sweep, states: SweepStatePair, extr: Extrinsics) -> np.ndarray:
    """LiDAR-frame points to world frame through the interpolated body pose."""
    p_body = sweep.points @ extr.R_l_o.T + extr.t_l_o
    _, R, t = interpolate_poses(states, sweep.stamps)
    return np.einsum("nij,nj->ni", R, p_body) + t


class VoxelMap:
    """Hash map from voxel key to at most ``max_points`` world points.

    The first points to reach a voxel stay; later ones are dropped once the
    voxel is full. Storage is columnar so that neighbour queries for a whole
    sweep can be answered with array operations.
    """

    def __init__(self, voxel_size: float = 1.0, max_points: int = 20, min_distance: float = 0.0):
        if voxel_size <= 0 or max_points <= 0 or min_distance < 0:
            raise ValueError("voxel size and capacity must be positive")
        self.voxel_size = float(voxel_size)
        self.max_points = int(max_points)
        # points closer than this to a point already in their voxel are skipped
        self.min_distance = float(min_distance)
        self._slot_of: dict[int, int] = {}
        self._keys = np.zeros(0, dtype=np.int64)
        self._pts = np.zeros((0, self.max_points, 3))
        self._seq = np.zeros((0, self.max_points), dtype=np.int64)
        self._count = np.zeros(0, dtype=np.int64)
        self._n = 0
        self._next_seq = 0
        self._lookup = None
        self._tree = None

    def __len__(self) -> int:
        return self._n

    @property
    def num_points(self) -> int:
        return int(self._count[: self._n].sum())

    def key_of(self, p) -> tuple[int, int, int]:
        return tuple(int(i) for i in voxel_indices(np.asarray(p, dtype=float)[None], self.voxel_size)[0])

    def voxel(self, key) -> np.ndarray:
        """Points stored in voxel ``key`` (insertion order), possibly empty."""
        slot = self._slot_of.get(int(pack_keys(np.array(key))))
        if slot is None:
            return np.zeros((0, 3))
        return self._pts[slot, : self._count[slot]].copy()

    def items(self):
        """Yield ``(key, points)`` for every voxel in allocation order."""
        idx = unpack_keys(self._keys[: self._n])
        for s in range(self._n):
            yield tuple(int(v) for v in idx[s]), self._pts[s, : self._count[s]].copy()

    def points(self) -> np.ndarray:
        """All stored points, grouped by voxel in allocation order."""
        n = self._n
        mask = np.arange(self.max_points)[None, :] < self._count[:n, None]
        return self._pts[:n][mask]

    def _grow(self, need: int):
        cap = len(self._keys)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 1024)
        keys = np.zeros(new_cap, dtype=np.int64)
        pts = np.zeros((new_cap, self.max_points, 3))
        seq = np.zeros((new_cap, self.max_points), dtype=np.int64)
        count = np.zeros(new_cap, dtype=np.int64)
        keys[:cap], pts[:cap], seq[:cap], count[:cap] = self._keys, self._pts, self._seq, self._count
        self._keys, self._pts, self._seq, self._count = keys, pts, seq, count

    def add_points(self, points_w: np.ndarray) -> int:
        """Append world points in order, honouring the cap. Returns the number stored."""
        points_w = np.asarray(points_w, dtype=float).reshape(-1, 3)
        if len(points_w) == 0:
            return 0
        keys = pack_keys(voxel_indices(points_w, self.voxel_size))
        ukeys, inverse = np.unique(keys, return_inverse=True)
        uslots = np.empty(len(ukeys), dtype=np.int64)
        fresh = []
        for i, k in enumerate(ukeys.tolist()):
            s = self._slot_of.get(k)
            if s is None:
                fresh.append(i)
                s = self._n + len(fresh) - 1
            uslots[i] = s
        if fresh:
            self._grow(self._n + len(fresh))
            for j, i in enumerate(fresh):
                key = int(ukeys[i])
                self._slot_of[key] = self._n + j
                self._keys[self._n + j] = key
            self._n += len(fresh)
            self._lookup = None
        slots = uslots[inverse.reshape(-1)]
        idx = np.arange(len(points_w))
        if self.min_distance > 0:
            admit = self._spaced(points_w, slots)
            idx, slots = idx[admit], slots[admit]
        order = idx[np.argsort(slots, kind="stable")]
        slots_all = np.empty(len(points_w), dtype=np.int64)
        slots_all[idx] = slots
        slots = slots_all
        s_sorted = slots[order]
        if len(order) == 0:
            self._next_seq += len(points_w)
            return 0
        starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
        group_start = np.repeat(starts, np.diff(np.r_[starts, len(s_sorted)]))
        rank = np.arange(len(s_sorted)) - group_start
        pos = self._count[s_sorted] + rank
        keep = pos < self.max_points
        sel = order[keep]
        self._pts[s_sorted[keep], pos[keep]] = points_w[sel]
        self._seq[s_sorted[keep], pos[keep]] = self._next_seq + sel
        self._next_seq += len(points_w)
        self._count[: self._n] += np.bincount(s_sorted[keep], minlength=self._n)[: self._n]
        if keep.any():
            self._tree = None
        return int(keep.sum())

    def _spaced(self, points_w: np.ndarray, slots: np.ndarray) -> np.ndarray:
        """Mask of points at least ``min_distance`` from stored and earlier batch points of their voxel."""
        r2 = self.min_distance**2
        stored = self._pts[slots]
        valid = np.arange(self.max_points)[None, :] < self._count[slots][:, None]
        d2 = np.sum((stored - points_w[:, None, :]) ** 2, axis=2)
        admit = ~np.any(valid & (d2 < r2), axis=1)
        cand = np.flatnonzero(admit)
        order = cand[np.argsort(slots[cand], kind="stable")]
        s_sorted = slots[order]
        starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
        ends = np.r_[starts[1:], len(order)]
        for a, b in zip(starts[ends - starts > 1], ends[ends - starts > 1]):
            members = order[a:b]
            pts = points_w[members]
            close = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2) < r2
            if not np.any(np.triu(close, 1)):
                continue
            kept = []
            for i in range(len(members)):
                if not any(close[i, j] for j in kept):
                    kept.append(i)
                else:
                    admit[members[i]] = False
        return admit

    def register_sweep(self, sweep: Sweep, states: SweepStatePair, extr: Extrinsics) -> int:
        """Project a sweep to the world frame with its estimated states and insert it."""
        if len(sweep) == 0:
            return 0
        return self.add_points(sweep_to_world(sweep, states, extr))

    def _sorted_lookup(self):
        if self._lookup is None:
            keys = self._keys[: self._n]
            order = np.argsort(keys)
            self._lookup = (keys[order], order)
        return self._lookup

    def _block_candidates(self, queries: np.ndarray):
        """Candidate points of the 27-voxel block around each query."""
        vox = voxel_indices(queries, self.voxel_size)
        keys = pack_keys(vox[:, None, :] + _OFFSETS[None, :, :])
        skeys, sslots = self._sorted_lookup()
        if len(skeys) == 0:
            n = len(queries)
            return np.zeros((n, 0, 3)), np.zeros((n, 0), dtype=bool), np.zeros((n, 0), dtype=np.int64)
        pos = np.minimum(np.searchsorted(skeys, keys), len(skeys) - 1)
        found = skeys[pos] == keys
        slots = np.where(found, sslots[pos], 0)
        counts = np.where(found, self._count[slots], 0)
        valid = np.arange(self.max_points)[None, None, :] < counts[:, :, None]
        n = len(queries)
        cand = self._pts[slots].reshape(n, -1, 3)
        seq = self._seq[slots].reshape(n, -1)
        return cand, valid.reshape(n, -1), seq

    def neighbors(self, p_w, k: int | None = None) -> np.ndarray:
        """Up to ``k`` (default: voxel capacity) nearest stored points, ascending distance.

        Candidates come from the voxel of ``p_w`` and its 26 neighbours;
        equal distances keep insertion order.
        """
        k = self.max_points if k is None else k
        q = np.asarray(p_w, dtype=float).reshape(1, 3)
        cand, valid, seq = self._block_candidates(q)
        cand, seq = cand[0][valid[0]], seq[0][valid[0]]
        d2 = np.sum((cand - q) ** 2, axis=1)
        order = np.lexsort((seq, d2))[:k]
        return cand[order]

    def _flat(self):
        """KD-tree over all stored points plus their insertion numbers (cached)."""
        if self._tree is None:
            n = self._n
            mask = np.arange(self.max_points)[None, :] < self._count[:n, None]
            pts = self._pts[:n][mask]
            self._tree = (cKDTree(pts) if len(pts) else None, pts, self._seq[:n][mask])
        return self._tree

    def _neighbors_block(self, queries: np.ndarray, k: int):
        """Exact search over the 27-voxel blocks; returns sorted ``(points, counts)``."""
        n = len(queries)
        cand, valid, seq = self._block_candidates(queries)
        if cand.shape[1] == 0 or n == 0:
            return np.zeros((n, k, 3)), np.zeros(n, dtype=np.int64)
        diff = cand - queries[:, None, :]
        d2 = np.einsum("nmk,nmk->nm", diff, diff)
        d2 = np.where(valid, d2, np.inf)
        m = d2.shape[1]
        if m > k:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
            # rows with a distance tie at the cut need the full (distance, insertion) order
            tied = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > k)
            if len(tied):
                part[tied] = np.lexsort((seq[tied], d2[tied]), axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(m), (n, m))
        sub = np.lexsort((np.take_along_axis(seq, part, axis=1), np.take_along_axis(d2, part, axis=1)), axis=1)
        order = np.take_along_axis(part, sub, axis=1)
        pts = np.take_along_axis(cand, order[:, :, None], axis=1)
        counts = np.isfinite(np.take_along_axis(d2, order, axis=1)).sum(axis=1)
        if pts.shape[1] < k:
            pts = np.concatenate([pts, np.zeros((n, k - pts.shape[1], 3))], axis=1)
        return pts, counts

    def neighbors_batch(self, queries: np.ndarray, k: int | None = None):
        """Vectorised :meth:`neighbors`.

        Returns ``(points, counts)`` where ``points`` is ``(N, k, 3)`` sorted by
        distance per row and only the first ``counts[i]`` entries are valid.

        Every point closer to a query than the faces of its 27-voxel block
        lies inside the block, so a tree query gives the block answer whenever
        its ``k`` nearest points are that close and clearly separated from
        the next one; the remaining queries go through the explicit block
        search.
        """
        k = self.max_points if k is None else k
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(queries)
        tree, flat, seq = self._flat()
        if n == 0 or tree is None:
            return np.zeros((n, k, 3)), np.zeros(n, dtype=np.int64)
        # distance from each query to the outer faces of its block
        rel = queries / self.voxel_size - np.floor(queries / self.voxel_size)
        reach = self.voxel_size * (1.0 + np.minimum(rel, 1.0 - rel).min(axis=1))
        dist, idx = tree.query(queries, k=k + 1, distance_upper_bound=2.0 * self.voxel_size)
        idx = np.where(np.isfinite(dist), idx, 0)
        # re-sort the k nearest by (distance, insertion) to fix tie order
        d_k = dist[:, :k]
        s_k = np.where(np.isfinite(d_k), seq[idx[:, :k]], 0)
        order = np.lexsort((s_k, d_k), axis=1)
        sel = np.take_along_axis(idx[:, :k], order, axis=1)
        pts = flat[sel]
        counts = np.isfinite(d_k).sum(axis=1)
        exact = (d_k[:, -1] < reach) & (dist[:, k] > d_k[:, -1])
        redo = np.flatnonzero(~exact)
        if len(redo):
            pts[redo], counts[redo], done = self._neighbors_wide(queries[redo], k)
            redo = redo[~done]
        if len(redo):
            pts[redo], counts[redo] = self._neighbors_block(queries[redo], k)
        pts[np.arange(k)[None, :] >= counts[:, None]] = 0.0
        return pts, counts

    def _neighbors_wide(self, queries: np.ndarray, k: int, width: int = 3):
        """Tree query over the whole block extent, keeping only in-block hits.

        A row is settled when the query exhausted the block's bounding ball or
        found ``k`` in-block points strictly closer than the farthest hit.
        """
        tree, flat, seq = self._flat()
        n = len(queries)
        kk = width * k
        dist, idx = tree.query(queries, k=kk, distance_upper_bound=2.0 * np.sqrt(3.0) * self.voxel_size + 1e-9)
        found = np.isfinite(dist)
        idx = np.where(found, idx, 0)
        home = voxel_indices(queries, self.voxel_size)
        cell = voxel_indices(flat[idx].reshape(-1, 3), self.voxel_size).reshape(n, kk, 3)
        inside = found & (np.abs(cell - home[:, None, :]).max(axis=2) <= 1)
        d = np.where(inside, dist, np.inf)
        s_ = np.where(inside, seq[idx], 0)
        order = np.lexsort((s_, d), axis=1)[:, :k]
        d_sel = np.take_along_axis(d, order, axis=1)
        pts = flat[np.take_along_axis(idx, order, axis=1)]
        counts = np.isfinite(d_sel).sum(axis=1)
        exhausted = ~found[:, -1]
        done = exhausted | ((counts == k) & (d_sel[:, -1] < dist[:, -1]))
        return pts, counts, done

    def prune_far(self, center, radius: float) -> int:
        """Drop every voxel whose centre is farther than ``radius`` from ``center``."""
        if radius <= 0:
            raise ValueError("prune radius must be positive")
        if self._n == 0:
            return 0
        centres = (unpack_keys(self._keys[: self._n]) + 0.5) * self.voxel_size
        far = np.linalg.norm(centres - np.asarray(center, dtype=float), axis=1) > radius
        removed = int(far.sum())
        if removed == 0:
            return 0
        keep = np.flatnonzero(~far)
        n = len(keep)
        self._keys[:n] = self._keys[keep]
        self._pts[:n] = self._pts[keep]
        self._seq[:n] = self._seq[keep]
        self._count[:n] = self._count[keep]
        self._count[n : self._n] = 0
        self._n = n
        self._slot_of = {int(key): s for s, key in enumerate(self._keys[:n].tolist())}
        self._lookup = None
        self._tree = None
        return removed

    def check_invariants(self):
        """Raise AssertionError if a voxel is over capacity or holds a foreign point."""
        counts = self._count[: self._n]
        assert counts.max(initial=0) <= self.max_points, "voxel over capacity"
        for s in range(self._n):
            pts = self._pts[s, : counts[s]]
            if len(pts):
                keys = pack_keys(voxel_indices(pts, self.voxel_size))
                assert np.all(keys == self._keys[s]), "point stored in the wrong voxel"
