import math

import numpy as np
import pytest

from swarmwind.control import (
    ControlConfigError,
    ControlGains,
    ControllerState,
    allocate,
    allocation_matrix,
    attitude_map,
    attitude_pd,
    controller_update,
    controller_update_batch,
    horizontal_accel,
    thrust_command,
    vertical_accel,
)
from swarmwind.vehicle import VehicleParams, VehicleState, pack_states, rotor_wrench, step

GAINS = ControlGains()
PARAMS = VehicleParams()


def test_horizontal_one_tick():
    a, cs = horizontal_accel((1.0, 0.0), (0.0, 0.0), ControllerState(), GAINS, 0.01)
    # integral updated before the output term is formed
    assert a[0] == pytest.approx(1.3015, abs=1e-12)
    assert a[1] == 0.0
    assert cs.integ_x == pytest.approx(0.01)
    assert cs.integ_y == 0.0


def test_horizontal_derivative_term():
    a, _ = horizontal_accel((0.0, 0.0), (0.5, -0.25), ControllerState(), GAINS, 0.01)
    assert a[0] == pytest.approx(-1.4 * 0.5)
    assert a[1] == pytest.approx(1.4 * 0.25)


def test_horizontal_saturation_magnitude_and_direction():
    a, _ = horizontal_accel((10.0, 0.0), (0.0, 0.0), ControllerState(), GAINS, 0.01)
    assert np.hypot(a[0], a[1]) == pytest.approx(6.525584152345389, rel=1e-12)

    a2, _ = horizontal_accel((6.0, 8.0), (0.0, 0.0), ControllerState(), GAINS, 0.01)
    # direction of the unsaturated command survives the magnitude clamp
    raw = np.array([1.3 * 6.0 + 0.15 * 0.06, 1.3 * 8.0 + 0.08 * 0.08])
    assert a2[0] * raw[1] - a2[1] * raw[0] == pytest.approx(0.0, abs=1e-9)
    assert np.hypot(*a2) == pytest.approx(GAINS.a_xy_max)


def test_horizontal_anti_windup_back_calculation():
    _, cs = horizontal_accel((10.0, 0.0), (0.0, 0.0), ControllerState(), GAINS, 0.01)
    # integ = 0.1 - 0.5*(13.015 - a_max)/0.15
    assert cs.integ_x == pytest.approx(-21.531386158848704, rel=1e-12)
    assert cs.integ_y == 0.0


def test_horizontal_no_correction_below_limit():
    _, cs = horizontal_accel((0.5, -0.2), (0.0, 0.0), ControllerState(), GAINS, 0.01)
    assert cs.integ_x == pytest.approx(0.005)
    assert cs.integ_y == pytest.approx(-0.002)


def test_horizontal_integrator_settles_under_sustained_error():
    cs = ControllerState()
    mags = []
    for _ in range(2000):
        a, cs = horizontal_accel((100.0, 0.0), (0.0, 0.0), cs, GAINS, 0.01)
        mags.append(np.hypot(*a))
    # back-calculation pins the command at the limit instead of winding up
    assert mags[-1] == pytest.approx(GAINS.a_xy_max)
    assert abs(cs.integ_x) < 1e4
    tail = [abs(m - GAINS.a_xy_max) for m in mags[-100:]]
    assert max(tail) < 1e-6


def test_vertical_saturated_oracle():
    a, cs = vertical_accel(0.0, 10.0, 0.0, ControllerState(), GAINS, 0.01)
    assert a == pytest.approx(5.0)
    assert cs.integ_z == pytest.approx(-112.43, rel=1e-12)


def test_vertical_velocity_reference_cap():
    # e_z = 10 caps v_ref at 4 m/s: a_temp = 5*(4 - 3.9) + i - d stays small
    a, _ = vertical_accel(0.0, 10.0, 3.9, ControllerState(), GAINS, 0.01)
    expect = 5.0 * (4.0 - 3.9) + 0.04 * 0.1 - 0.20 * 3.9
    assert a == pytest.approx(expect)


def test_vertical_linear_region():
    a, cs = vertical_accel(0.0, 0.1, 0.0, ControllerState(), GAINS, 0.01)
    assert a == pytest.approx(5.0 * 0.11 + 0.04 * 0.001, rel=1e-12)
    assert cs.integ_z == pytest.approx(0.001)


def test_attitude_map_pitch_only():
    g = PARAMS.g
    phi, theta = attitude_map((g * math.tan(math.radians(10.0)), 0.0, 0.0), g)
    assert math.degrees(theta) == pytest.approx(10.0, abs=1e-10)
    assert phi == pytest.approx(0.0, abs=1e-12)


def test_attitude_map_roll_sign():
    g = PARAMS.g
    phi, theta = attitude_map((0.0, -g * math.tan(math.radians(15.0)), 0.0), g)
    # accelerating toward -y needs positive roll
    assert math.degrees(phi) == pytest.approx(15.0, abs=1e-10)
    assert theta == pytest.approx(0.0, abs=1e-12)


def test_attitude_map_rejects_degenerate_direction():
    with pytest.raises(ControlConfigError):
        attitude_map((0.0, 0.0, -PARAMS.g), PARAMS.g)


def test_attitude_pd_oracle_and_clip():
    tau = attitude_pd((0.1, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), GAINS)
    assert tau[0] == pytest.approx(0.13, rel=1e-12)
    assert tau[1] == 0.0 and tau[2] == 0.0

    big = attitude_pd((10.0, -10.0, 10.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), GAINS)
    assert np.allclose(big, [4.0, -4.0, 3.0])

    damped = attitude_pd((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), GAINS)
    assert np.allclose(damped, [-0.9, -0.9, -0.7])


def test_thrust_command_cases():
    assert thrust_command(0.0, 1.0, PARAMS.mass, PARAMS.g) == pytest.approx(25.4079)
    assert thrust_command(2.0, 0.95, PARAMS.mass, PARAMS.g) == pytest.approx(
        32.19778947368421, rel=1e-12
    )
    # denominator floored: near-horizontal attitude cannot blow up the demand
    assert thrust_command(0.0, 0.05, PARAMS.mass, PARAMS.g) == pytest.approx(
        PARAMS.mass * PARAMS.g / 0.2
    )


def test_allocate_symmetric_hover():
    omega = allocate(PARAMS.mass * PARAMS.g, (0.0, 0.0, 0.0), PARAMS)
    assert np.allclose(omega, 759.9028047897131, rtol=1e-12)


def test_allocate_yaw_split():
    t_hover = PARAMS.mass * PARAMS.g
    omega = allocate(t_hover, (0.0, 0.0, 0.1), PARAMS)
    forces = PARAMS.k_t * omega**2
    assert forces[0] == pytest.approx(6.351975 + 0.4545454545454546, rel=1e-10)
    assert forces[1] == pytest.approx(6.351975 - 0.4545454545454546, rel=1e-10)


def test_allocate_round_trip_against_wrench():
    rng = np.random.default_rng(5)
    for _ in range(50):
        forces = rng.uniform(0.5, 9.0, size=4)
        a = allocation_matrix(PARAMS)
        t_ref, *tau_ref = a @ forces
        omega = allocate(t_ref, tau_ref, PARAMS)
        t_back, tau_back = rotor_wrench(omega, PARAMS)
        assert t_back == pytest.approx(t_ref, rel=1e-9)
        assert np.allclose(tau_back, tau_ref, atol=1e-9)


def test_allocate_clips_negative_forces_and_speed():
    omega = allocate(1.0, (3.9, 0.0, 0.0), PARAMS)
    assert np.all(omega >= 0.0)
    assert np.all(omega <= PARAMS.omega_max)
    forces = PARAMS.k_t * omega**2
    # the demanded roll torque wants a negative front/rear pair; clipped to zero
    assert np.min(forces) == 0.0

    huge = allocate(4.0 * PARAMS.k_t * PARAMS.omega_max**2 * 2.0, (0.0, 0.0, 0.0), PARAMS)
    assert np.allclose(huge, PARAMS.omega_max)


def test_controller_update_exact_hover():
    state = VehicleState.hover((0.0, 0.0, 50.0), PARAMS)
    omega, cs = controller_update(state, (0.0, 0.0, 50.0), ControllerState(), GAINS, PARAMS, 0.01)
    assert np.allclose(omega, PARAMS.hover_rotor_speed(), rtol=1e-12)
    assert cs.integ_x == 0.0 and cs.integ_y == 0.0 and cs.integ_z == 0.0


def test_controller_update_batch_matches_single():
    rng = np.random.default_rng(9)
    states = []
    refs = rng.normal(size=(3, 3)) * np.array([5.0, 5.0, 2.0]) + np.array([0, 0, 40.0])
    for i in range(3):
        s = VehicleState.hover(rng.normal(size=3) * 2 + np.array([0, 0, 40.0]), PARAMS)
        s.velocity = rng.normal(size=3) * 0.5
        s.attitude = rng.normal(size=3) * 0.05
        s.body_rates = rng.normal(size=3) * 0.1
        states.append(s)
    y = pack_states(states)
    integ = rng.normal(size=(3, 3)) * 0.2
    omega_b, t_b, integ_b = controller_update_batch(y, refs, integ.copy(), GAINS, PARAMS, 0.01)
    for i, s in enumerate(states):
        cs = ControllerState(*integ[i])
        omega_s, cs_out = controller_update(s, refs[i], cs, GAINS, PARAMS, 0.01)
        assert np.allclose(omega_b[i], omega_s, rtol=1e-12)
        assert np.allclose(integ_b[i], cs_out.as_array(), rtol=1e-12)
    assert t_b.shape == (3,)


def test_closed_loop_rest_at_origin():
    # equilibrium start: rotors at hover speed, reference at the start point
    state = VehicleState.hover((0.0, 0.0, 0.0), PARAMS)
    ref = np.array([0.0, 0.0, 0.0])
    cs = ControllerState()
    wind_fn = lambda p: np.zeros(3)
    worst = 0.0
    for _ in range(1000):
        omega_cmd, cs = controller_update(state, ref, cs, GAINS, PARAMS, 0.01)
        assert np.all(omega_cmd >= 0.0) and np.all(omega_cmd <= PARAMS.omega_max)
        state = step(state, omega_cmd, wind_fn, 0.01, PARAMS)
        worst = max(worst, float(np.linalg.norm(state.position - ref)))
    assert worst < 0.05


def test_closed_loop_recovers_hover_offset():
    state = VehicleState.hover((0.4, -0.3, 20.0), PARAMS)
    state.rotor_speeds = state.rotor_speeds * 0.9
    ref = np.array([0.0, 0.0, 20.0])
    cs = ControllerState()
    wind_fn = lambda p: np.zeros(3)
    for _ in range(2500):
        omega_cmd, cs = controller_update(state, ref, cs, GAINS, PARAMS, 0.01)
        state = step(state, omega_cmd, wind_fn, 0.01, PARAMS)
    # the integral of the initial error loads a slow closed-loop mode
    # (tau ~ 7.5 s), so 25 s leaves a small but nonzero residual
    assert np.linalg.norm(state.position - ref) < 0.03
    assert np.linalg.norm(state.velocity) < 0.02


def test_closed_loop_spoolup_stays_bounded():
    # rotors fully stopped: the dip saturates the vertical loop, and the
    # back-calculation leaves an integrator offset that bleeds off slowly
    state = VehicleState.hover((0.0, 0.0, 0.0), PARAMS)
    state.rotor_speeds = np.zeros(4)
    ref = np.array([0.0, 0.0, 0.0])
    cs = ControllerState()
    wind_fn = lambda p: np.zeros(3)
    low = 0.0
    for _ in range(1000):
        omega_cmd, cs = controller_update(state, ref, cs, GAINS, PARAMS, 0.01)
        state = step(state, omega_cmd, wind_fn, 0.01, PARAMS)
        low = min(low, float(state.position[2]))
    assert low > -0.5
    assert np.linalg.norm(state.position - ref) < 0.2
    assert abs(state.velocity[2]) < 0.01


def test_closed_loop_step_response_settles():
    state = VehicleState.hover((0.0, 0.0, 20.0), PARAMS)
    ref = np.array([1.0, 0.0, 20.0])
    cs = ControllerState()
    wind_fn = lambda p: np.zeros(3)
    peak = 0.0
    tail = []
    for k in range(3000):
        omega_cmd, cs = controller_update(state, ref, cs, GAINS, PARAMS, 0.01)
        state = step(state, omega_cmd, wind_fn, 0.01, PARAMS)
        peak = max(peak, float(state.position[0]))
        if k >= 2700:
            tail.append(abs(float(state.position[0]) - 1.0))
    # the listed gains give an oscillatory but convergent lateral response
    assert peak < 1.75
    assert max(tail) < 0.08
    assert abs(state.position[2] - 20.0) < 0.02


def test_gain_validation():
    with pytest.raises(ControlConfigError):
        ControlGains(kp_xy=(-1.0, 1.3))
    with pytest.raises(ControlConfigError):
        ControlGains(az_max=0.0)
    with pytest.raises(ControlConfigError):
        horizontal_accel((0.0, 0.0), (0.0, 0.0), ControllerState(), GAINS, 0.0)


def test_controller_state_defaults():
    cs = ControllerState()
    assert cs.as_array().tolist() == [0.0, 0.0, 0.0]
