"""Six-degree-of-freedom multirotor dynamics with drag and motor lag.

The equations of motion use a z-up inertial frame (altitude positive up):
gravity enters as -[0, 0, m g], thrust as +T z_b.  Wind is passed in NED
labels (V_N, V_E, V_D with down positive), and the air-relative velocity is
v - [V_N, V_E, -V_D].  Conversion to NED logging labels happens at the
logging boundary, not here.

The core math is written over a leading batch axis so a whole swarm can be
stepped as one array; the public single-vehicle API wraps batch size one.
"""

from dataclasses import dataclass

import numpy as np


class VehicleConfigError(ValueError):
    pass


class SimulationAbort(RuntimeError):
    """Integration left the validity envelope (pitch reached +/- pi/2)."""


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 2.59
    inertia: tuple = (0.078, 0.082, 0.14)
    arm: float = 0.25
    k_t: float = 1.1e-5
    k_m_ratio: float = 0.055
    spin: tuple = (1.0, -1.0, 1.0, -1.0)
    tau_motor: float = 0.10
    omega_max: float = 1200.0
    rho: float = 1.225
    cd_xy: float = 0.072
    cd_z: float = 0.10
    g: float = 9.81

    def __post_init__(self):
        positive = (
            self.mass, self.arm, self.k_t, self.k_m_ratio, self.tau_motor,
            self.omega_max, self.rho, self.cd_xy, self.cd_z, self.g,
        )
        if any(not v > 0 for v in positive) or any(not j > 0 for j in self.inertia):
            raise VehicleConfigError("physical constants must be positive")
        if len(self.spin) != 4 or any(s not in (1.0, -1.0, 1, -1) for s in self.spin):
            raise VehicleConfigError("spin must be four entries of +/-1")

    def hover_rotor_speed(self) -> float:
        return float(np.sqrt(self.mass * self.g / (4.0 * self.k_t)))


@dataclass
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    body_rates: np.ndarray
    rotor_speeds: np.ndarray

    @classmethod
    def hover(cls, position, params: VehicleParams) -> "VehicleState":
        return cls(
            position=np.asarray(position, dtype=float).copy(),
            velocity=np.zeros(3),
            attitude=np.zeros(3),
            body_rates=np.zeros(3),
            rotor_speeds=np.full(4, params.hover_rotor_speed()),
        )


def rotation_matrix(attitude) -> np.ndarray:
    """Body-to-inertial rotation for the 3-2-1 (yaw-pitch-roll) sequence."""
    return rotation_matrices(np.asarray(attitude, dtype=float)[None, :])[0]


def rotation_matrices(attitudes) -> np.ndarray:
    att = np.asarray(attitudes, dtype=float)
    cph, sph = np.cos(att[:, 0]), np.sin(att[:, 0])
    cth, sth = np.cos(att[:, 1]), np.sin(att[:, 1])
    cps, sps = np.cos(att[:, 2]), np.sin(att[:, 2])
    r = np.empty(att.shape[:1] + (3, 3))
    r[:, 0, 0] = cps * cth
    r[:, 0, 1] = cps * sth * sph - sps * cph
    r[:, 0, 2] = cps * sth * cph + sps * sph
    r[:, 1, 0] = sps * cth
    r[:, 1, 1] = sps * sth * sph + cps * cph
    r[:, 1, 2] = sps * sth * cph - cps * sph
    r[:, 2, 0] = -sth
    r[:, 2, 1] = cth * sph
    r[:, 2, 2] = cth * cph
    return r


def rotor_wrench(rotor_speeds, params: VehicleParams):
    """Total thrust and body torques from the four rotor speeds."""
    w = np.asarray(rotor_speeds, dtype=float)
    single = w.ndim == 1
    f = params.k_t * np.atleast_2d(w) ** 2
    thrust = f.sum(axis=1)
    spin = np.asarray(params.spin, dtype=float)
    tau = np.stack(
        [
            params.arm * (f[:, 3] - f[:, 1]),
            params.arm * (f[:, 0] - f[:, 2]),
            params.k_m_ratio * (f * spin).sum(axis=1),
        ],
        axis=1,
    )
    if single:
        return float(thrust[0]), tau[0]
    return thrust, tau


def drag_force(velocity, wind, params: VehicleParams):
    """Quadratic drag on the air-relative velocity, inertial components."""
    v = np.atleast_2d(np.asarray(velocity, dtype=float))
    w = np.atleast_2d(np.asarray(wind, dtype=float))
    v_air = v - np.stack([w[:, 0], w[:, 1], -w[:, 2]], axis=1)
    coeff = np.array([params.cd_xy, params.cd_xy, params.cd_z])
    mag = np.linalg.norm(v_air, axis=1, keepdims=True)
    force = -0.5 * params.rho * coeff * mag * v_air
    return force[0] if np.asarray(velocity).ndim == 1 else force


_PITCH_LIMIT = 0.5 * np.pi


def batch_derivatives(y, rotor_cmd, wind, params: VehicleParams) -> np.ndarray:
    """Time derivative of packed states (n, 16): pos, vel, att, rates, rotors."""
    att = y[:, 6:9]
    if np.any(np.abs(att[:, 1]) >= _PITCH_LIMIT):
        raise SimulationAbort("pitch magnitude reached pi/2")
    vel = y[:, 3:6]
    rates = y[:, 9:12]
    rotors = y[:, 12:16]

    rot = rotation_matrices(att)
    thrust, tau = rotor_wrench(rotors, params)
    drag = drag_force(vel, wind, params)
    accel = (thrust[:, None] * rot[:, :, 2] + drag) / params.mass
    accel[:, 2] -= params.g

    inertia = np.asarray(params.inertia)
    j_omega = rates * inertia
    gyro = np.cross(rates, j_omega)
    rates_dot = (tau - gyro) / inertia

    cph, sph = np.cos(att[:, 0]), np.sin(att[:, 0])
    cth = np.cos(att[:, 1])
    tth = np.tan(att[:, 1])
    p, q, r = rates[:, 0], rates[:, 1], rates[:, 2]
    att_dot = np.stack(
        [
            p + sph * tth * q + cph * tth * r,
            cph * q - sph * r,
            (sph * q + cph * r) / cth,
        ],
        axis=1,
    )

    out = np.empty_like(y)
    out[:, 0:3] = vel
    out[:, 3:6] = accel
    out[:, 6:9] = att_dot
    out[:, 9:12] = rates_dot
    out[:, 12:16] = (rotor_cmd - rotors) / params.tau_motor
    return out


def pack_states(states) -> np.ndarray:
    rows = [
        np.concatenate([s.position, s.velocity, s.attitude, s.body_rates, s.rotor_speeds])
        for s in states
    ]
    return np.array(rows, dtype=float)


def unpack_state(row) -> VehicleState:
    return VehicleState(
        position=row[0:3].copy(),
        velocity=row[3:6].copy(),
        attitude=row[6:9].copy(),
        body_rates=row[9:12].copy(),
        rotor_speeds=row[12:16].copy(),
    )


def _wrap_angle(a):
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


def batch_step(y, rotor_cmd, wind_fn, dt: float, params: VehicleParams) -> np.ndarray:
    """One RK4 step of the packed batch; wind_fn maps (n,3) positions to wind."""
    if not dt > 0:
        raise VehicleConfigError("dt must be positive")
    k1 = batch_derivatives(y, rotor_cmd, wind_fn(y[:, 0:3]), params)
    y2 = y + 0.5 * dt * k1
    k2 = batch_derivatives(y2, rotor_cmd, wind_fn(y2[:, 0:3]), params)
    y3 = y + 0.5 * dt * k2
    k3 = batch_derivatives(y3, rotor_cmd, wind_fn(y3[:, 0:3]), params)
    y4 = y + dt * k3
    k4 = batch_derivatives(y4, rotor_cmd, wind_fn(y4[:, 0:3]), params)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[:, 12:16] = np.clip(out[:, 12:16], 0.0, params.omega_max)
    out[:, 6:9] = _wrap_angle(out[:, 6:9])
    return out


def derivatives(state: VehicleState, rotor_cmd, wind, params: VehicleParams) -> VehicleState:
    """Single-vehicle state derivative; fields hold the field derivatives."""
    y = pack_states([state])
    cmd = np.asarray(rotor_cmd, dtype=float)[None, :]
    w = np.asarray(wind, dtype=float)[None, :]
    d = batch_derivatives(y, cmd, w, params)[0]
    return unpack_state(d)


def step(state: VehicleState, rotor_cmd, wind_fn, dt: float, params: VehicleParams) -> VehicleState:
    """Advance one vehicle by dt with RK4; rotor speeds clamped, angles wrapped."""
    y = pack_states([state])
    cmd = np.asarray(rotor_cmd, dtype=float)[None, :]

    def batch_wind(positions):
        return np.atleast_2d(wind_fn(positions[0]))

    return unpack_state(batch_step(y, cmd, batch_wind, dt, params)[0])
