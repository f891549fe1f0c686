"""Sweep containers and one-point-per-voxel down-sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


def voxel_indices(points: np.ndarray, size: float) -> np.ndarray:
    """Integer voxel coordinates ``floor(p / size)`` per axis, ``(N, 3)`` int64."""
    return np.floor(np.asarray(points, dtype=float) / size).astype(np.int64)


def pack_keys(idx: np.ndarray) -> np.ndarray:
    """Pack ``(..., 3)`` voxel coordinates into single int64 keys."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (np.abs(idx).max() >= _KEY_OFFSET):
        raise ValueError("voxel coordinate out of packable range")
    s = idx + _KEY_OFFSET
    return (s[..., 0] << (2 * _KEY_BITS)) | (s[..., 1] << _KEY_BITS) | s[..., 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.stack(
        [(keys >> (2 * _KEY_BITS)) & _KEY_MASK, (keys >> _KEY_BITS) & _KEY_MASK, keys & _KEY_MASK], axis=-1
    )
    return out - _KEY_OFFSET


class TimedPoint(NamedTuple):
    p: np.ndarray
    stamp: float


@dataclass
class Sweep:
    """Points of one LiDAR revolution in the LiDAR frame, sorted by stamp."""

    points: np.ndarray
    stamps: np.ndarray
    t_b: float
    t_e: float
    index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(self.points) != len(self.stamps):
            raise ValueError("sweep points and stamps differ in length")
        if not self.t_b < self.t_e:
            raise ValueError(f"sweep {self.index}: t_b={self.t_b} must precede t_e={self.t_e}")
        if len(self.stamps):
            if self.stamps.min() < self.t_b or self.stamps.max() > self.t_e:
                raise ValueError(f"sweep {self.index}: point stamps outside [t_b, t_e]")
            if np.any(np.diff(self.stamps) < 0):
                order = np.argsort(self.stamps, kind="stable")
                self.points = self.points[order]
                self.stamps = self.stamps[order]

    def __len__(self):
        return len(self.stamps)

    def __getitem__(self, i) -> TimedPoint:
        return TimedPoint(self.points[i], float(self.stamps[i]))

    def subset(self, idx: np.ndarray) -> "Sweep":
        return Sweep(self.points[idx], self.stamps[idx], self.t_b, self.t_e, self.index)


def downsample(sweep: Sweep, voxel: float = 0.5) -> Sweep:
    """Keep the earliest point of every occupied ``voxel``-sized cell."""
    if len(sweep) == 0:
        return sweep.subset(np.arange(0))
    keys = pack_keys(voxel_indices(sweep.points, voxel))
    # np.unique reports the first occurrence; points are already stamp-sorted
    _, first = np.unique(keys, return_index=True)
    return sweep.subset(np.sort(first))
