"""Cascaded flight controller: position loops, attitude mapping, allocation.

Outer loops turn position errors into commanded inertial accelerations (a
horizontal PID with magnitude saturation and back-calculation anti-windup,
and a velocity-limited vertical loop).  The commanded acceleration plus
gravity defines the desired body z-axis, an attitude PD law produces body
torques, and the allocation matrix inverse converts thrust and torques into
per-rotor speed commands.  Yaw is held at zero throughout.

All operations are vectorized over a leading batch axis, with scalar
wrappers for single-vehicle use.
"""

import math
from dataclasses import dataclass

import numpy as np

from .vehicle import VehicleParams, rotation_matrices


class ControlConfigError(ValueError):
    pass


_A_XY_MAX_DEFAULT = 0.95 * 9.81 * math.tan(math.radians(35.0))


@dataclass(frozen=True)
class ControlGains:
    kp_xy: tuple = (1.3, 1.3)
    ki_xy: tuple = (0.15, 0.08)
    kd_xy: tuple = (1.4, 1.4)
    a_xy_max: float = _A_XY_MAX_DEFAULT
    aw_xy: float = 0.5
    k_v: float = 1.1
    vz_max: float = 4.0
    kp_v: float = 5.0
    kd_v: float = 0.20
    ki_v: float = 0.04
    az_max: float = 5.0
    aw_z: float = 0.3
    kp_att: tuple = (1.3, 1.3, 1.2)
    kd_att: tuple = (0.9, 0.9, 0.7)
    tau_max: tuple = (4.0, 4.0, 3.0)

    def __post_init__(self):
        flat = (
            *self.kp_xy, *self.ki_xy, *self.kd_xy, self.aw_xy, self.k_v,
            self.kp_v, self.kd_v, self.ki_v, self.aw_z,
            *self.kp_att, *self.kd_att,
        )
        if any(g < 0 for g in flat):
            raise ControlConfigError("gains must be non-negative")
        limits = (self.a_xy_max, self.vz_max, self.az_max, *self.tau_max)
        if any(not v > 0 for v in limits):
            raise ControlConfigError("limits must be positive")


@dataclass
class ControllerState:
    integ_x: float = 0.0
    integ_y: float = 0.0
    integ_z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.integ_x, self.integ_y, self.integ_z])


def horizontal_accel_batch(e_xy, v_xy, integ_xy, gains: ControlGains, dt: float):
    """PID with vector-magnitude saturation; returns (a_cmd, new integrals)."""
    if not dt > 0:
        raise ControlConfigError("dt must be positive")
    kp = np.asarray(gains.kp_xy)
    ki = np.asarray(gains.ki_xy)
    kd = np.asarray(gains.kd_xy)
    integ = integ_xy + e_xy * dt
    a_pid = kp * e_xy + ki * integ - kd * v_xy
    mag = np.linalg.norm(a_pid, axis=1, keepdims=True)
    over = mag[:, 0] > gains.a_xy_max
    scale = np.where(over, gains.a_xy_max / np.maximum(mag[:, 0], 1e-300), 1.0)
    a_cmd = a_pid * scale[:, None]
    # back-calculate only where the integral gain gives the correction meaning
    live = ki > 0
    correction = np.where(live, gains.aw_xy * (a_pid - a_cmd) / np.where(live, ki, 1.0), 0.0)
    integ = integ - correction * over[:, None]
    return a_cmd, integ


def vertical_accel_batch(z, z_ref, v_z, integ_z, gains: ControlGains, dt: float):
    """Velocity-limited altitude loop; returns (a_z_cmd, new integral)."""
    if not dt > 0:
        raise ControlConfigError("dt must be positive")
    e_z = z_ref - z
    integ = integ_z + e_z * dt
    v_ref = np.clip(gains.k_v * e_z, -gains.vz_max, gains.vz_max)
    a_temp = gains.kp_v * (v_ref - v_z) + gains.ki_v * integ - gains.kd_v * v_z
    a_cmd = np.clip(a_temp, -gains.az_max, gains.az_max)
    if gains.ki_v > 0:
        integ = integ - gains.aw_z * (a_temp - a_cmd) / gains.ki_v
    return a_cmd, integ


def attitude_map_batch(a_des, g: float):
    """Desired roll and pitch whose body z-axis matches thrust direction."""
    vec = np.stack([a_des[:, 0], a_des[:, 1], g + a_des[:, 2]], axis=1)
    norm = np.linalg.norm(vec, axis=1)
    if np.any(norm <= 0):
        raise ControlConfigError("degenerate thrust direction")
    t = vec / norm[:, None]
    theta = np.arctan2(t[:, 0], t[:, 2])
    phi = np.arcsin(np.clip(-t[:, 1], -1.0, 1.0))
    return phi, theta


def attitude_pd_batch(eta_des, eta, body_rates, gains: ControlGains):
    kp = np.asarray(gains.kp_att)
    kd = np.asarray(gains.kd_att)
    lim = np.asarray(gains.tau_max)
    tau = kp * (eta_des - eta) - kd * body_rates
    return np.clip(tau, -lim, lim)


def thrust_command(a_z_cmd, z_bz, mass: float, g: float):
    """Collective thrust with the tilt-compensation denominator floored."""
    return mass * (g + np.asarray(a_z_cmd, dtype=float)) / np.maximum(0.2, z_bz)


def allocation_matrix(params: VehicleParams) -> np.ndarray:
    arm = params.arm
    spin = np.asarray(params.spin, dtype=float)
    return np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [0.0, -arm, 0.0, arm],
            [arm, 0.0, -arm, 0.0],
            list(params.k_m_ratio * spin),
        ]
    )


def allocate_batch(t_cmd, tau_cmd, params: VehicleParams):
    a = allocation_matrix(params)
    try:
        a_inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as err:
        raise ControlConfigError("allocation matrix is singular") from err
    rhs = np.concatenate([np.asarray(t_cmd)[:, None], tau_cmd], axis=1)
    forces = rhs @ a_inv.T
    forces = np.maximum(forces, 0.0)
    return np.clip(np.sqrt(forces / params.k_t), 0.0, params.omega_max)


def controller_update_batch(y, ref, integ, gains: ControlGains, params: VehicleParams, dt: float):
    """Full cascade over packed vehicle states (n, 16); yaw reference zero."""
    pos = y[:, 0:3]
    vel = y[:, 3:6]
    att = y[:, 6:9]
    rates = y[:, 9:12]

    a_xy, integ_xy = horizontal_accel_batch(
        ref[:, 0:2] - pos[:, 0:2], vel[:, 0:2], integ[:, 0:2], gains, dt
    )
    a_z, integ_z = vertical_accel_batch(pos[:, 2], ref[:, 2], vel[:, 2], integ[:, 2], gains, dt)

    a_des = np.concatenate([a_xy, a_z[:, None]], axis=1)
    phi_des, theta_des = attitude_map_batch(a_des, params.g)
    eta_des = np.stack([phi_des, theta_des, np.zeros_like(phi_des)], axis=1)
    tau = attitude_pd_batch(eta_des, att, rates, gains)

    z_bz = rotation_matrices(att)[:, 2, 2]
    t_cmd = thrust_command(a_z, z_bz, params.mass, params.g)
    omega_cmd = allocate_batch(t_cmd, tau, params)
    new_integ = np.concatenate([integ_xy, integ_z[:, None]], axis=1)
    return omega_cmd, t_cmd, new_integ


def horizontal_accel(e_xy, v_xy, cstate: ControllerState, gains: ControlGains, dt: float):
    a, integ = horizontal_accel_batch(
        np.asarray(e_xy, dtype=float)[None, :],
        np.asarray(v_xy, dtype=float)[None, :],
        np.array([[cstate.integ_x, cstate.integ_y]]),
        gains,
        dt,
    )
    new = ControllerState(float(integ[0, 0]), float(integ[0, 1]), cstate.integ_z)
    return a[0], new


def vertical_accel(z, z_ref, v_z, cstate: ControllerState, gains: ControlGains, dt: float):
    a, integ = vertical_accel_batch(
        np.array([z], dtype=float), np.array([z_ref], dtype=float),
        np.array([v_z], dtype=float), np.array([cstate.integ_z]), gains, dt,
    )
    new = ControllerState(cstate.integ_x, cstate.integ_y, float(integ[0]))
    return float(a[0]), new


def attitude_map(a_des, g: float):
    phi, theta = attitude_map_batch(np.asarray(a_des, dtype=float)[None, :], g)
    return float(phi[0]), float(theta[0])


def attitude_pd(eta_des, eta, body_rates, gains: ControlGains):
    return attitude_pd_batch(
        np.asarray(eta_des, dtype=float)[None, :],
        np.asarray(eta, dtype=float)[None, :],
        np.asarray(body_rates, dtype=float)[None, :],
        gains,
    )[0]


def allocate(t_cmd: float, tau_cmd, params: VehicleParams):
    return allocate_batch(
        np.array([t_cmd], dtype=float), np.asarray(tau_cmd, dtype=float)[None, :], params
    )[0]


def controller_update(state, ref, cstate: ControllerState, gains: ControlGains,
                      params: VehicleParams, dt: float):
    from .vehicle import pack_states

    y = pack_states([state])
    omega_cmd, _t_cmd, integ = controller_update_batch(
        y, np.asarray(ref, dtype=float)[None, :], cstate.as_array()[None, :], gains, params, dt
    )
    new = ControllerState(float(integ[0, 0]), float(integ[0, 1]), float(integ[0, 2]))
    return omega_cmd[0], new
