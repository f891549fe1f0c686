import dataclasses
import json

import numpy as np
import pytest

from liwodom.cli import main
from liwodom.io import (
    DatasetError,
    dump_config,
    parse_config,
    read_dataset,
    read_ply,
    read_trajectory,
    write_dataset,
    write_ply,
    write_trajectory,
)
from liwodom.optimizer import SolverConfig
from liwodom.pipeline import PipelineConfig, run
from liwodom.scenarios import corridor_loop_world, straight_script
from liwodom.sensors import NoiseConfig
from liwodom.simulation import simulate


@pytest.fixture(scope="module")
def sim():
    return simulate(straight_script(4.0), corridor_loop_world(), NoiseConfig.nominal(), 3)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "straight"
    assert main(["simulate", "--scenario", "straight", "--duration", "4", "--seed", "1", "--out", str(root)]) == 0
    return root


def test_config_round_trip():
    cfg = PipelineConfig(
        mode="lio",
        solver=SolverConfig(huber_point=2.5, max_outer=3),
        noise=NoiseConfig(sigma_a=0.1, b_a0=(0.1, 0.2, 0.3)),
        prune_radius=80.0,
    )
    back = parse_config(dump_config(cfg))
    assert dump_config(back) == dump_config(cfg)
    assert back.solver == cfg.solver and back.noise == cfg.noise and back.mode == "lio"


def test_config_errors():
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("solver.nonsense = 1")
    with pytest.raises(ValueError, match="unknown section"):
        parse_config("camera.fx = 1")
    with pytest.raises(ValueError, match="boolean"):
        parse_config("solver.use_imu = maybe")
    with pytest.raises(ValueError):
        parse_config("prune_radius = -1")
    with pytest.raises(ValueError, match="expected 'key = value'"):
        parse_config("just words")


def test_config_comments_and_partial_override():
    cfg = parse_config("# tuned\nsolver.velocity_sigma = 0.1  # wheel slip\nmode = lio\n")
    assert cfg.solver.velocity_sigma == 0.1
    assert cfg.mode == "lio" and not cfg.solver.use_velocity


def test_trajectory_round_trip(tmp_path, rng):
    rows = np.column_stack([np.arange(5) * 0.1, rng.normal(size=(5, 3)), np.tile([0, 0, 0, 1.0], (5, 1))])
    path = tmp_path / "t.txt"
    write_trajectory(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 6
    assert all(len(l.split()) == 8 for l in lines[1:])
    np.testing.assert_allclose(read_trajectory(path), rows, atol=1e-9)


def test_trajectory_stamps_must_increase(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("0.2 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n")
    with pytest.raises(DatasetError):
        read_trajectory(path)


def test_ply_round_trip(tmp_path, rng):
    pts = rng.uniform(-50, 50, (100, 3))
    write_ply(tmp_path / "m.ply", pts)
    np.testing.assert_allclose(read_ply(tmp_path / "m.ply"), pts, atol=1e-6)
    write_ply(tmp_path / "e.ply", np.zeros((0, 3)))
    assert read_ply(tmp_path / "e.ply").shape == (0, 3)


@pytest.mark.parametrize("binary", [True, False])
def test_dataset_round_trip(tmp_path, sim, binary):
    write_dataset(tmp_path, sim.imu, sim.wheel, sim.sweeps[:5], binary=binary)
    data = read_dataset(tmp_path)
    np.testing.assert_array_equal(data.imu.accel, sim.imu.accel)
    np.testing.assert_array_equal(data.wheel.tau_left, sim.wheel.tau_left)
    assert len(data.sweeps) == 5
    for a, b in zip(data.sweeps, sim.sweeps[:5]):
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.stamps, b.stamps)
        assert (a.t_b, a.t_e, a.index) == (b.t_b, b.t_e, b.index)


def test_dataset_column_check(tmp_path):
    (tmp_path / "imu.csv").write_text("stamp,wx\n0,1\n")
    with pytest.raises(DatasetError, match="columns"):
        read_dataset(tmp_path)


def test_imu_gap_is_reported(sim):
    keep = (sim.imu.stamps < 2.0) | (sim.imu.stamps > 3.0)
    imu = type(sim.imu)(sim.imu.stamps[keep], sim.imu.gyro[keep], sim.imu.accel[keep])
    with pytest.raises(ValueError, match="gap") as info:
        run(PipelineConfig(), imu, sim.wheel, sim.sweeps)
    assert type(info.value).__name__ == "GapError"
    assert "1.990000" in str(info.value) and "3.010000" in str(info.value)


def test_cli_run_and_evaluate(tmp_path, dataset, capsys):
    out = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sweeps"] == 40 and summary["flagged"] == []
    assert summary["ate"] < 0.05
    header = (out / "timing.csv").read_text().splitlines()[0]
    assert header == "sweep,raw_points,optimization_ms,registration_ms,total_ms"
    assert read_ply(out / "map.ply").shape[1] == 3
    capsys.readouterr()
    assert main(["evaluate", "--est", str(out / "trajectory.txt"), "--truth", str(dataset / "truth.csv")]) == 0
    assert abs(json.loads(capsys.readouterr().out)["ate"] - summary["ate"]) < 1e-9


def test_cli_ablate(tmp_path, dataset):
    out = tmp_path / "ablate"
    assert main(["ablate", "--dataset", str(dataset), "--out", str(out), "--modes", "liwo", "lio"]) == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert set(rows) == {"liwo", "lio"}
    assert (out / "lio" / "trajectory.txt").exists()


def test_cli_mode_and_config_file(tmp_path, dataset):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(dump_config(dataclasses.replace(PipelineConfig(), prune_radius=50.0)))
    out = tmp_path / "run"
    assert main(["run", "--dataset", str(dataset), "--out", str(out), "--config", str(cfg), "--mode", "lio"]) == 0
    assert json.loads((out / "summary.json").read_text())["mode"] == "lio"


def test_cli_error_is_machine_readable(tmp_path, capsys):
    code = main(["run", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "o")])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "DatasetError" and "missing" in err["message"]


def test_cli_runs_are_byte_identical(tmp_path, dataset):
    for name in ("a", "b"):
        assert main(["run", "--dataset", str(dataset), "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.txt", "map.ply"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
