import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liwodom.geometry import Extrinsics, quat_mul, quat_to_rot
from liwodom.scenarios import corridor_loop_world, loop_script, rest_script, room_world, straight_script
from liwodom.sensors import (
    ImuStream,
    NoiseConfig,
    WheelGeometry,
    WheelSample,
    WheelStream,
    add_measurement_noise,
    wheel_linear_velocity,
)
from liwodom.simulation import Segment, SimulationError, SimWorld, TrajectoryScript, body_velocity_check, simulate


@pytest.mark.parametrize(
    "tau, radii, expected",
    [((0.0, 0.0), (0.3, 0.4), 0.0), ((2.0, 2.0), (0.5, 0.5), 1.0), ((1.0, 3.0), (0.5, 0.5), 1.0)],
)
def test_wheel_linear_velocity_examples(tau, radii, expected):
    v = wheel_linear_velocity(WheelSample(0.0, *tau), WheelGeometry(*radii))
    np.testing.assert_allclose(v, [expected, 0.0, 0.0], atol=1e-15)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_wheel_velocity_is_non_holonomic(tl, tr, rl, rr):
    v = wheel_linear_velocity(WheelSample(0.0, tl, tr), WheelGeometry(rl, rr))
    assert v[1] == 0.0 and v[2] == 0.0


def test_wheel_geometry_rejects_bad_radius():
    with pytest.raises(ValueError):
        WheelGeometry(0.0, 0.3)
    with pytest.raises(ValueError):
        WheelGeometry(0.3, -1.0)


def test_noise_config_rejects_negative():
    with pytest.raises(ValueError):
        NoiseConfig(sigma_a=-0.1)


def test_streams_require_increasing_stamps():
    with pytest.raises(ValueError):
        ImuStream([0.0, 0.0], np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        WheelStream([0.0, 0.2, 0.1], np.zeros(3), np.zeros(3))


def _clean_imu(n=100_000):
    stamps = np.arange(n) * 0.01
    return ImuStream(stamps, np.zeros((n, 3)), np.tile([0.0, 0.0, -9.81], (n, 1)))


def test_zero_noise_leaves_streams_unchanged():
    imu = _clean_imu(1000)
    out = add_measurement_noise(imu, NoiseConfig(), 3)
    np.testing.assert_array_equal(out.gyro, imu.gyro)
    np.testing.assert_array_equal(out.accel, imu.accel)
    wheel = WheelStream(np.arange(10) * 0.01, np.full(10, 2.0), np.full(10, 3.0))
    w = add_measurement_noise(wheel, NoiseConfig(), 3, geometry=WheelGeometry())
    np.testing.assert_array_equal(w.tau_left, wheel.tau_left)


def test_accel_noise_std_law_of_large_numbers():
    imu = _clean_imu()
    out = add_measurement_noise(imu, NoiseConfig(sigma_a=0.1), 11)
    std = np.std(out.accel - imu.accel, axis=0)
    assert np.all(np.abs(std - 0.1) < 0.03 * 0.1)


def test_wheel_noise_std_per_wheel_linear_speed():
    n = 100_000
    wheel = WheelStream(np.arange(n) * 0.01, np.full(n, 4.0), np.full(n, 5.0))
    g = WheelGeometry(0.25, 0.4)
    out = add_measurement_noise(wheel, NoiseConfig(sigma_v=0.05), 2, geometry=g)
    assert abs(np.std((out.tau_left - wheel.tau_left) * g.r_left) - 0.05) < 0.0015
    assert abs(np.std((out.tau_right - wheel.tau_right) * g.r_right) - 0.05) < 0.0015


def test_still_shaft_reads_zero():
    wheel = WheelStream(np.arange(5) * 0.01, np.zeros(5), np.ones(5))
    out = add_measurement_noise(wheel, NoiseConfig(sigma_v=0.05), 2, geometry=WheelGeometry())
    np.testing.assert_array_equal(out.tau_left, 0.0)
    assert np.all(out.tau_right != 1.0)


def test_bias_random_walk_scales_with_sqrt_dt():
    imu = _clean_imu()
    out = add_measurement_noise(imu, NoiseConfig(sigma_ba=0.2), 5)
    steps = np.diff(out.bias_a, axis=0)
    assert abs(np.std(steps) - 0.2 * np.sqrt(0.01)) < 0.03 * 0.02


def test_noise_is_deterministic_per_seed():
    imu = _clean_imu(500)
    a = add_measurement_noise(imu, NoiseConfig.nominal(), 9)
    b = add_measurement_noise(imu, NoiseConfig.nominal(), 9)
    c = add_measurement_noise(imu, NoiseConfig.nominal(), 10)
    np.testing.assert_array_equal(a.accel, b.accel)
    np.testing.assert_array_equal(a.gyro, b.gyro)
    assert not np.array_equal(a.accel, c.accel)


def test_wheel_noise_needs_geometry():
    wheel = WheelStream([0.0], [1.0], [1.0])
    with pytest.raises(ValueError):
        add_measurement_noise(wheel, NoiseConfig.nominal(), 0)


@pytest.fixture(scope="module")
def rest_run():
    return simulate(rest_script(2.0), room_world(), NoiseConfig(), 0)


def test_rest_measurements(rest_run):
    out = rest_run
    np.testing.assert_allclose(out.imu.gyro, 0.0, atol=0)
    np.testing.assert_allclose(out.imu.accel, np.tile([0.0, 0.0, -9.81], (len(out.imu), 1)), atol=1e-12)
    np.testing.assert_array_equal(out.wheel.tau_left, 0.0)
    np.testing.assert_array_equal(out.wheel.tau_right, 0.0)


def test_sweeps_span_full_periods(rest_run):
    for s in rest_run.sweeps:
        assert s.t_e - s.t_b == pytest.approx(0.1)
        assert s.stamps.min() >= s.t_b and s.stamps.max() < s.t_e
        assert len(s) > 1000


def test_straight_line_wheel_matches_speed():
    out = simulate(straight_script(3.0, rest=1.0, speed=1.0), corridor_loop_world(), NoiseConfig(), 0)
    speed = np.linalg.norm(out.truth.v, axis=1)
    v = out.wheel.speeds(out.geometry)
    idx = np.searchsorted(out.truth.stamps, out.wheel.stamps)
    np.testing.assert_allclose(v, speed[idx], atol=1e-12)


@pytest.fixture(scope="module")
def loop_run():
    return simulate(loop_script(duration=12.0), corridor_loop_world(), NoiseConfig(), 0)


def _fine_run(seconds, **kw):
    # simulate on the base clock so central differences are not dominated by
    # ramp jerk (h^2/6 times jerk is ~6e-4 m/s at 100 Hz)
    return simulate(loop_script(duration=seconds), corridor_loop_world(), NoiseConfig(), 0, imu_rate=9000, **kw)


def _central_difference_error(tr, every=90):
    h = tr.stamps[1] - tr.stamps[0]
    fd = (tr.t[2:] - tr.t[:-2]) / (2 * h)
    idx = np.arange(every, len(tr) - 1, every)  # the 100 Hz stamps
    return np.max(np.abs(fd[idx - 1] - tr.v[idx]))


def test_truth_velocity_is_derivative_of_position():
    assert _central_difference_error(_fine_run(12.0).truth) < 1e-6


def _rk4_imu(imu, q0, t0, v0, g):
    """Classic RK4 over double sample steps; the odd sample is the midpoint node."""
    def rhs(q, v, w, f):
        dq = 0.5 * quat_mul(q, np.concatenate(([0.0], w)))
        return dq, quat_to_rot(q / np.linalg.norm(q)) @ f - g, v

    q, t, v = np.array(q0, float), np.array(t0, float), np.array(v0, float)
    out = [t.copy()]
    for n in range(0, len(imu) - 2, 2):
        h = imu.stamps[n + 2] - imu.stamps[n]
        nodes = [(imu.gyro[n], imu.accel[n]), (imu.gyro[n + 1], imu.accel[n + 1]), (imu.gyro[n + 2], imu.accel[n + 2])]
        k1 = rhs(q, v, *nodes[0])
        k2 = rhs(q + 0.5 * h * k1[0], v + 0.5 * h * k1[1], *nodes[1])
        k3 = rhs(q + 0.5 * h * k2[0], v + 0.5 * h * k2[1], *nodes[1])
        k4 = rhs(q + h * k3[0], v + h * k3[1], *nodes[2])
        q = q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        q /= np.linalg.norm(q)
        t = t + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        v = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append(t.copy())
    return np.array(out)


TURNING = TrajectoryScript(
    (Segment(1.0), Segment(2.0, 1.0), Segment(3.0, 1.0, 0.4), Segment(2.0, 1.2), Segment(2.0, 0.8, -0.3)),
    start_xy=(4.0, 3.0),
)


@pytest.mark.parametrize("script", [loop_script(duration=10.0), TURNING], ids=["loop", "turning"])
def test_integrating_noiseless_imu_recovers_truth(script):
    out = simulate(script, corridor_loop_world() if script is not TURNING else room_world(), NoiseConfig(), 0)
    tr = out.truth
    pos = _rk4_imu(out.clean_imu, tr.q[0], tr.t[0], tr.v[0], out.g_w)
    err = np.linalg.norm(pos - tr.t[::2][: len(pos)], axis=1)
    assert tr.stamps[2 * (len(pos) - 1)] >= 9.98
    assert err.max() < 1e-4


def test_wheel_equals_odometer_forward_speed(loop_run):
    fwd = body_velocity_check(loop_run)[:, 0]
    idx = np.searchsorted(loop_run.truth.stamps, loop_run.wheel.stamps)
    np.testing.assert_allclose(loop_run.wheel.speeds(loop_run.geometry), fwd[idx], atol=1e-9)


def test_noisy_wheel_within_sigma_bounds():
    noise = NoiseConfig.nominal()
    out = simulate(loop_script(duration=12.0), corridor_loop_world(), noise, 4)
    fwd = body_velocity_check(out)[:, 0]
    idx = np.searchsorted(out.truth.stamps, out.wheel.stamps)
    err = out.wheel.speeds(out.geometry) - fwd[idx]
    # averaged speed of two independent wheels has std sigma_v / sqrt(2)
    assert np.max(np.abs(err)) < 5 * noise.sigma_v / np.sqrt(2)
    moving = fwd[idx] != 0
    assert abs(np.std(err[moving]) - noise.sigma_v / np.sqrt(2)) < 0.1 * noise.sigma_v


def test_lever_arm_extrinsics_stay_consistent():
    extr = Extrinsics(t_k_o=(0.2, 0.1, -0.3), t_l_o=(0.1, 0.0, 0.2))
    out = _fine_run(6.0, extrinsics=extr)
    assert _central_difference_error(out.truth) < 1e-6
    fwd = body_velocity_check(out)
    idx = np.searchsorted(out.truth.stamps, out.wheel.stamps)
    np.testing.assert_allclose(out.wheel.speeds(out.geometry), fwd[idx, 0], atol=1e-9)
    np.testing.assert_allclose(fwd[:, 1:], 0.0, atol=1e-9)


def test_simulation_is_bit_identical():
    a = simulate(loop_script(duration=3.0), corridor_loop_world(), NoiseConfig.nominal(), 7)
    b = simulate(loop_script(duration=3.0), corridor_loop_world(), NoiseConfig.nominal(), 7)
    np.testing.assert_array_equal(a.imu.accel, b.imu.accel)
    np.testing.assert_array_equal(a.wheel.tau_left, b.wheel.tau_left)
    for sa, sb in zip(a.sweeps, b.sweeps):
        np.testing.assert_array_equal(sa.points, sb.points)
        np.testing.assert_array_equal(sa.stamps, sb.stamps)


def test_leaving_world_names_segment():
    script = TrajectoryScript((Segment(1.0), Segment(30.0, 2.0, 0.0, "runaway")), start_xy=(5.0, 5.0))
    with pytest.raises(SimulationError, match="runaway"):
        simulate(script, room_world(), NoiseConfig(), 0)


def test_world_gravity_bounds():
    with pytest.raises(ValueError):
        SimWorld((), ((0, 0, 0), (1, 1, 1)), g_w=(0.0, 0.0, -5.0))
