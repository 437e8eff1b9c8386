import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telebalance.control import (
    DEFAULT_GAINS,
    ControllerGains,
    StaleFrameError,
    TuningFailureError,
    closed_loop_matrix,
    compute_command,
    estimate_tilt,
    make_controller_state,
    spectral_radius,
    tune_default_gains,
)
from telebalance.plant import (
    PlantParams,
    PlantState,
    SensorFrame,
    SensorNoise,
    is_fallen,
    sample_sensors,
    step_dynamics,
)


def frame(gyro=0.0, accel=0.0, enc=0, t=0.0, seq=0):
    return SensorFrame(gyro_pitch_rate=gyro, accel_tilt=accel, encoder_left=enc,
                       encoder_right=enc, sample_time=t, seq=seq)


class TestEstimateTilt:
    def test_alpha_zero_is_pure_accelerometer(self, params):
        cs = make_controller_state(params)
        cs = estimate_tilt(cs, frame(gyro=99.0, accel=0.07), dt=0.002, alpha=0.0)
        assert cs.tilt_estimate == 0.07

    def test_alpha_one_is_pure_gyro_integration(self, params):
        cs = make_controller_state(params)
        cs = estimate_tilt(cs, frame(gyro=0.2, accel=123.0), dt=0.005, alpha=1.0)
        assert cs.tilt_estimate == pytest.approx(0.001, rel=1e-12)

    def test_stale_frame_rejected_and_state_unchanged(self, params):
        cs = make_controller_state(params)
        cs = estimate_tilt(cs, frame(accel=0.1, seq=5), dt=0.002)
        before = cs
        with pytest.raises(StaleFrameError):
            estimate_tilt(cs, frame(accel=0.5, seq=5), dt=0.002)
        with pytest.raises(StaleFrameError):
            estimate_tilt(cs, frame(accel=0.5, seq=4), dt=0.002)
        assert cs == before

    def test_alpha_and_dt_validated(self, params):
        cs = make_controller_state(params)
        with pytest.raises(ValueError):
            estimate_tilt(cs, frame(), dt=0.002, alpha=1.5)
        with pytest.raises(ValueError):
            estimate_tilt(cs, frame(), dt=0.0)

    def test_tracks_true_tilt_on_noiseless_trajectory(self, params):
        # closed loop against plant ground truth: estimate within 5 mrad after 1 s
        state = PlantState(tilt=math.radians(2))
        cs = make_controller_state(params)
        rng = np.random.default_rng(0)
        gains = DEFAULT_GAINS
        cycle = 0.005
        torque = 0.0
        for k in range(400):
            f = sample_sensors(state, SensorNoise(), params, rng, seq=k)
            cs = estimate_tilt(cs, f, cycle)
            cs, act = compute_command(cs, gains, f, cycle, now=k * cycle)
            torque = act.motor_command_left * params.motor_max_torque
            for _ in range(10):
                state = step_dynamics(state, params, torque, cycle / 10)
            if k * cycle > 1.0:
                assert abs(cs.tilt_estimate - state.tilt) < 0.005


class TestComputeCommand:
    def test_all_zero_gives_zero_command(self, params):
        cs = make_controller_state(params)
        cs = estimate_tilt(cs, frame(), dt=0.002)
        cs, act = compute_command(cs, ControllerGains(), frame(), dt=0.002)
        assert act.motor_command_left == 0.0
        assert act.motor_command_right == 0.0

    def test_p_only_tilt_term(self, params):
        gains = ControllerGains(kp_tilt=1.0)
        cs = replace(make_controller_state(params), tilt_estimate=0.1,
                     last_frame_seq=0)
        cs, act = compute_command(cs, gains, frame(seq=0), dt=0.002)
        assert act.motor_command_left == pytest.approx(0.1, rel=1e-12)

    def test_saturation_at_command_limit(self, params):
        gains = ControllerGains(kp_tilt=20.0, command_limit=1.0)
        cs = replace(make_controller_state(params), tilt_estimate=0.1,
                     last_frame_seq=0)
        cs, act = compute_command(cs, gains, frame(seq=0), dt=0.002)
        assert act.motor_command_left == 1.0

    def test_requires_estimate_for_this_frame(self, params):
        cs = make_controller_state(params)  # last_frame_seq == -1
        with pytest.raises(StaleFrameError):
            compute_command(cs, DEFAULT_GAINS, frame(seq=0), dt=0.002)

    def test_seq_echoed_and_both_wheels_equal(self, params):
        cs = make_controller_state(params)
        f = frame(accel=0.05, seq=3)
        cs = estimate_tilt(cs, f, dt=0.002)
        cs, act = compute_command(cs, DEFAULT_GAINS, f, dt=0.002, now=1.5)
        assert act.seq == 3
        assert act.issue_time == 1.5
        assert act.motor_command_left == act.motor_command_right

    def test_identical_frame_sequences_give_identical_commands(self, params):
        def run():
            cs = make_controller_state(params)
            out = []
            rng = np.random.default_rng(11)
            for k in range(50):
                f = frame(gyro=rng.normal(), accel=rng.normal() * 0.1,
                          enc=int(rng.integers(-500, 500)), t=k * 0.002, seq=k)
                cs2 = estimate_tilt(cs, f, 0.002)
                cs, act = compute_command(cs2, DEFAULT_GAINS, f, 0.002)
                out.append(act.motor_command_left)
            return out

        assert run() == run()

    @settings(max_examples=200, deadline=None)
    @given(gyro=st.floats(-1e6, 1e6), accel=st.floats(-1e6, 1e6),
           enc=st.integers(-10**9, 10**9), seq=st.integers(0, 1000))
    def test_commands_always_clamped(self, gyro, accel, enc, seq):
        params = PlantParams()
        gains = ControllerGains(kp_tilt=50.0, kd_tilt=5.0, ki_tilt=3.0,
                                kp_position=2.0, kd_position=1.0)
        cs = make_controller_state(params)
        f = frame(gyro=gyro, accel=accel, enc=enc, seq=seq)
        cs = estimate_tilt(cs, f, dt=0.002, alpha=0.5)
        cs, act = compute_command(cs, gains, f, dt=0.002)
        assert -1.0 <= act.motor_command_left <= 1.0
        assert -1.0 <= act.motor_command_right <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(tilts=st.lists(st.floats(-10, 10), min_size=1, max_size=80))
    def test_integral_never_exceeds_limit(self, tilts):
        params = PlantParams()
        gains = ControllerGains(ki_tilt=4.0, integral_limit=0.3)
        cs = make_controller_state(params)
        for k, tilt in enumerate(tilts):
            f = frame(accel=tilt, seq=k)
            cs = estimate_tilt(cs, f, dt=0.01, alpha=0.0)
            cs, _ = compute_command(cs, gains, f, dt=0.01)
            assert abs(cs.integral_accum) <= 0.3


class TestTuning:
    def test_default_gains_stabilize_default_cycle(self, params):
        gains = tune_default_gains(params, 0.005)
        assert gains == DEFAULT_GAINS
        assert spectral_radius(closed_loop_matrix(params, gains, 0.005)) < 1.0

    def test_gallop_and_ble_cycles_are_stable(self, params):
        for cycle in (0.002, 0.0075):
            gains = tune_default_gains(params, cycle)
            assert spectral_radius(closed_loop_matrix(params, gains, cycle)) < 1.0

    def test_long_cycle_fails(self, params):
        with pytest.raises(TuningFailureError):
            tune_default_gains(params, 0.2)

    def test_zero_gains_leave_loop_unstable(self, params):
        zero = ControllerGains()
        assert spectral_radius(closed_loop_matrix(params, zero, 0.005)) >= 1.0

    def test_cycle_must_be_positive(self, params):
        with pytest.raises(ValueError):
            tune_default_gains(params, 0.0)

    def test_shipped_gains_converge_in_time_domain(self, params):
        # 2 deg initial tilt, noiseless and delay-free at the tuning cycle:
        # |tilt| < 0.2 deg within 3 s and never near the fall threshold
        state = PlantState(tilt=math.radians(2))
        cs = make_controller_state(params)
        rng = np.random.default_rng(0)
        cycle = 0.005
        converged_at = None
        for k in range(round(4.0 / cycle)):
            f = sample_sensors(state, SensorNoise(), params, rng, seq=k)
            cs = estimate_tilt(cs, f, cycle)
            cs, act = compute_command(cs, DEFAULT_GAINS, f, cycle)
            torque = act.motor_command_left * params.motor_max_torque
            for _ in range(10):
                state = step_dynamics(state, params, torque, cycle / 10)
            assert not is_fallen(state)
            assert abs(state.tilt) < math.radians(4.0)
            t = (k + 1) * cycle
            if abs(state.tilt) >= math.radians(0.2):
                converged_at = None
            elif converged_at is None:
                converged_at = t
        assert converged_at is not None and converged_at <= 3.0
