import numpy as np
import pytest

from liwodom.geometry import quat_to_rot, so3_exp
from liwodom.initialization import InitializationRejectedError, static_initialize
from liwodom.pipeline import PipelineConfig, run
from liwodom.scenarios import corridor_loop_world, rest_script
from liwodom.sensors import ImuStream, NoiseConfig, WheelStream
from liwodom.simulation import simulate

G = 9.81


def still_imu(n=200, rate=100.0, gyro=(0.0, 0.0, 0.0), accel=(0.0, 0.0, -G), noise_w=0.0, seed=0):
    rng = np.random.default_rng(seed)
    stamps = np.arange(n) / rate
    g = np.tile(gyro, (n, 1)) + noise_w * rng.standard_normal((n, 3))
    return ImuStream(stamps, g, np.tile(accel, (n, 1)))


def still_wheel(n=200, rate=100.0):
    return WheelStream(np.arange(n) / rate, np.zeros(n), np.zeros(n))


def test_constant_gyro_bias_exact():
    b_w = (0.01, -0.02, 0.003)
    res = static_initialize(still_imu(gyro=b_w), still_wheel(), 1.5)
    np.testing.assert_allclose(res.b_w, b_w, rtol=0, atol=1e-12)


def test_level_platform():
    res = static_initialize(still_imu(), still_wheel(), 1.0)
    np.testing.assert_allclose(res.q0, [1, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(res.b_a, 0.0, atol=1e-12)
    np.testing.assert_array_equal(res.v0, 0.0)
    np.testing.assert_allclose(res.g_w, [0, 0, -G])


def test_noisy_gyro_bias_within_standard_error():
    sigma = 0.005
    b_w = np.array([0.004, -0.002, 0.001])
    bound = 3 * sigma / np.sqrt(200)
    res = static_initialize(still_imu(n=201, gyro=b_w, noise_w=sigma, seed=0), still_wheel(201), 2.0)
    assert np.all(np.abs(res.b_w - b_w) < bound)
    # across many seeds a 3-sigma bound is exceeded about 0.3% of the time
    misses = 0
    for seed in range(1, 201):
        res = static_initialize(still_imu(n=201, gyro=b_w, noise_w=sigma, seed=seed), still_wheel(201), 2.0)
        misses += int(np.sum(np.abs(res.b_w - b_w) >= bound))
    assert misses / 600 < 0.01


@pytest.mark.parametrize("seed", range(4))
def test_tilted_platform_removes_gravity(seed):
    rng = np.random.default_rng(seed)
    tilt = so3_exp(np.r_[rng.normal(0, 0.1, 2), rng.uniform(-3, 3)])
    R = quat_to_rot(tilt)
    b_a = rng.normal(0, 0.05, 3)
    # at rest the sensor reads the body-frame gravity vector plus bias
    f = R.T @ np.array([0, 0, -G]) + b_a
    res = static_initialize(still_imu(accel=f), still_wheel(), 1.0)
    R0 = quat_to_rot(res.q0)
    assert abs(np.arctan2(R0[1, 0], R0[0, 0])) < 1e-12
    assert np.linalg.norm(R0 @ (f - res.b_a) - res.g_w) < 1e-9
    assert abs(np.linalg.norm(res.g_w) - G) < 1e-12


def test_moving_gyro_rejected():
    imu = still_imu(noise_w=0.05)
    with pytest.raises(InitializationRejectedError) as info:
        static_initialize(imu, still_wheel(), 1.0)
    assert info.value.statistic == "gyro std"
    assert "gyro std" in str(info.value)


def test_rolling_wheels_rejected():
    wheel = WheelStream(np.arange(200) / 100.0, np.full(200, 0.1), np.full(200, 0.1))
    with pytest.raises(InitializationRejectedError) as info:
        static_initialize(still_imu(), wheel, 1.0)
    assert info.value.statistic == "wheel speed"


def test_short_window_rejected():
    with pytest.raises(ValueError):
        static_initialize(still_imu(), still_wheel(), 0.2)
    with pytest.raises(InitializationRejectedError):
        static_initialize(still_imu(n=30), still_wheel(30), 1.0)


def test_pipeline_holds_still_at_rest():
    out = simulate(rest_script(5.0), corridor_loop_world(), NoiseConfig(), 0)
    res = run(PipelineConfig(noise=NoiseConfig.nominal()), out.imu, out.wheel, out.sweeps)
    start = out.truth.t[0]
    drift = np.linalg.norm(res.trajectory[:, 1:4] - (res.trajectory[0, 1:4]), axis=1)
    assert len(res.trajectory) == 50
    assert drift.max() < 0.01
    assert not res.flagged
    # world frame starts at the platform, so estimate and truth differ only by the start offset
    assert np.linalg.norm(res.trajectory[-1, 1:4] - (out.truth.t[-1] - start)) < 0.01
