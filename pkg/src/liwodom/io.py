"""Dataset, trajectory, map and configuration files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .optimizer import SolverConfig
from .pipeline import PipelineConfig
from .sensors import ImuStream, NoiseConfig, WheelGeometry, WheelStream
from .sweep import Sweep

TRAJECTORY_HEADER = "# stamp tx ty tz qx qy qz qw"


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    imu: ImuStream
    wheel: WheelStream | None
    sweeps: list
    truth: np.ndarray | None = None
    truth_velocity: np.ndarray | None = None


def _write_csv(path: Path, header: str, data: np.ndarray, fmt="%.17g"):
    np.savetxt(path, data, fmt=fmt, delimiter=",", header=header, comments="")


def _read_csv(path: Path, columns: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return np.zeros((0, columns))
    if data.shape[1] != columns:
        raise DatasetError(f"{path.name}: expected {columns} columns, found {data.shape[1]}")
    return data


def write_dataset(root, imu: ImuStream, wheel: WheelStream, sweeps, truth=None, truth_velocity=None, binary=True):
    """Write the streams as CSV files; LiDAR points go to ``lidar.npz`` unless ``binary`` is false."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    _write_csv(root / "imu.csv", "stamp,wx,wy,wz,ax,ay,az", np.column_stack([imu.stamps, imu.gyro, imu.accel]))
    _write_csv(
        root / "wheel.csv", "stamp,tau_left,tau_right", np.column_stack([wheel.stamps, wheel.tau_left, wheel.tau_right])
    )
    _write_csv(
        root / "sweeps.csv",
        "index,t_b,t_e",
        np.array([[s.index, s.t_b, s.t_e] for s in sweeps], dtype=float).reshape(-1, 3),
    )
    idx = np.concatenate([np.full(len(s), s.index, dtype=np.int64) for s in sweeps])
    stamps = np.concatenate([s.stamps for s in sweeps])
    pts = np.concatenate([s.points for s in sweeps])
    if binary:
        np.savez(root / "lidar.npz", sweep_index=idx, stamp=stamps, xyz=pts)
    else:
        _write_csv(root / "lidar.csv", "sweep_index,stamp,x,y,z", np.column_stack([idx, stamps, pts]))
    if truth is not None:
        write_trajectory(root / "truth.csv", truth)
    if truth_velocity is not None:
        _write_csv(root / "truth_velocity.csv", "stamp,vx,vy,vz", truth_velocity)


def read_dataset(root) -> Dataset:
    root = Path(root)
    imu = _read_csv(root / "imu.csv", 7)
    imu_stream = ImuStream(imu[:, 0], imu[:, 1:4], imu[:, 4:7])
    wheel_stream = None
    if (root / "wheel.csv").exists():
        w = _read_csv(root / "wheel.csv", 3)
        wheel_stream = WheelStream(w[:, 0], w[:, 1], w[:, 2])
    if (root / "lidar.npz").exists():
        with np.load(root / "lidar.npz") as z:
            idx, stamps, pts = z["sweep_index"], z["stamp"], z["xyz"]
    else:
        raw = _read_csv(root / "lidar.csv", 5)
        idx, stamps, pts = raw[:, 0].astype(np.int64), raw[:, 1], raw[:, 2:5]
    spans = _read_csv(root / "sweeps.csv", 3)
    order = np.argsort(idx, kind="stable")
    idx, stamps, pts = idx[order], stamps[order], pts[order]
    bounds = np.searchsorted(idx, spans[:, 0].astype(np.int64), side="left")
    ends = np.searchsorted(idx, spans[:, 0].astype(np.int64), side="right")
    sweeps = [
        Sweep(pts[a:b], stamps[a:b], float(t_b), float(t_e), int(i))
        for (i, t_b, t_e), a, b in zip(spans, bounds, ends)
    ]
    truth = read_trajectory(root / "truth.csv") if (root / "truth.csv").exists() else None
    tv = _read_csv(root / "truth_velocity.csv", 4) if (root / "truth_velocity.csv").exists() else None
    return Dataset(imu_stream, wheel_stream, sweeps, truth, tv)


def write_trajectory(path, rows: np.ndarray):
    """One pose per line: ``stamp tx ty tz qx qy qz qw``, space separated."""
    rows = np.asarray(rows, dtype=float).reshape(-1, 8)
    with open(path, "w") as f:
        f.write(TRAJECTORY_HEADER + "\n")
        for r in rows:
            f.write("%.6f %.9f %.9f %.9f %.12f %.12f %.12f %.12f\n" % tuple(r))


def read_trajectory(path) -> np.ndarray:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size and data.shape[1] != 8:
        raise DatasetError(f"{path}: trajectory lines need 8 columns, found {data.shape[1]}")
    if len(data) > 1 and np.any(np.diff(data[:, 0]) <= 0):
        raise DatasetError(f"{path}: stamps are not strictly increasing")
    return data.reshape(-1, 8)


def write_ply(path, points: np.ndarray):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write(f"ply\nformat ascii 1.0\nelement vertex {len(points)}\n")
        f.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for p in points:
            f.write("%.6f %.6f %.6f\n" % tuple(p))


def read_ply(path) -> np.ndarray:
    with open(path) as f:
        lines = f.read().splitlines()
    end = lines.index("end_header")
    n = next(int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex"))
    if n == 0:
        return np.zeros((0, 3))
    return np.loadtxt(lines[end + 1 : end + 1 + n], ndmin=2)


# --- flat key = value configuration ---------------------------------------

_SECTIONS = {"solver": SolverConfig, "noise": NoiseConfig, "geometry": WheelGeometry}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list, np.ndarray)):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, (tuple, list, np.ndarray)):
        vals = tuple(float(v) for v in raw.replace(",", " ").split())
        if len(vals) != len(like):
            raise ValueError(f"expected {len(like)} numbers, got {raw!r}")
        return vals
    return raw


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for g in dataclasses.fields(value):
                lines.append(f"{f.name}.{g.name} = {_format(getattr(value, g.name))}")
        elif f.name == "extrinsics":
            for g in dataclasses.fields(value):
                lines.append(f"extrinsics.{g.name} = {_format(getattr(value, g.name))}")
        else:
            lines.append(f"{f.name} = {_format(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) over ``base``."""
    base = base or PipelineConfig()
    top = {}
    nested = {name: {} for name in (*_SECTIONS, "extrinsics")}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        section, _, name = key.rpartition(".")
        if section:
            if section not in nested:
                raise ValueError(f"config line {lineno}: unknown section {section!r}")
            current = getattr(base, section)
            if name not in {f.name for f in dataclasses.fields(current)}:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            nested[section][name] = _parse(raw, getattr(current, name))
        else:
            if name not in {f.name for f in dataclasses.fields(base)} or name in nested:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            top[name] = _parse(raw, getattr(base, name))
    for section, values in nested.items():
        if values:
            top[section] = dataclasses.replace(getattr(base, section), **values)
    if "mode" in top and "solver" not in top:
        top["solver"] = base.solver
    return dataclasses.replace(base, **top)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    return parse_config(Path(path).read_text(), base)


__all__ = [
    "Dataset",
    "DatasetError",
    "dump_config",
    "load_config",
    "parse_config",
    "read_dataset",
    "read_ply",
    "read_trajectory",
    "write_dataset",
    "write_ply",
    "write_trajectory",
]
