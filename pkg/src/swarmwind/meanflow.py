"""Mean wind profile and composition into the total ground-truth wind.

The mean flow stacks three analytic ingredients: a power-law shear profile,
a linear directional veer in height, and a slow sinusoidal speed bias
standing in for gust cycles.  Horizontal mean components follow the
meteorological from-direction convention, so a wind with direction 0 deg
blows toward the south: U_N = -U_eff cos(gamma), U_E = -U_eff sin(gamma).
The mean vertical wind is identically zero; every vertical signal in the
composed wind is turbulent.  Down is positive in the returned D component.
"""

from dataclasses import dataclass

import numpy as np

from .turbulence import TurbulentField, sample_fluctuation


class MeanWindConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeanWindParams:
    u_ref: float = 5.0
    z_ref: float = 10.0
    alpha: float = 0.14
    gamma0_deg: float = 10.0
    veer_deg_per_100m: float = 3.0
    gust_amplitude: float = 0.5
    gust_period: float = 60.0

    def __post_init__(self):
        if not self.z_ref > 0:
            raise MeanWindConfigError("z_ref must be positive")
        if not self.gust_period > 0:
            raise MeanWindConfigError("gust period must be positive")
        if self.u_ref < 0:
            raise MeanWindConfigError("u_ref must be non-negative")


def power_law_speed(z, params: MeanWindParams):
    """Gust-free mean speed U(z); constant below z_ref."""
    zz = np.maximum(np.asarray(z, dtype=float), params.z_ref)
    return params.u_ref * (zz / params.z_ref) ** params.alpha


def mean_speed(z, params: MeanWindParams, t=0.0):
    """Effective mean speed including the sinusoidal gust bias."""
    gust = params.gust_amplitude * np.sin(2.0 * np.pi * np.asarray(t, dtype=float) / params.gust_period)
    return power_law_speed(z, params) + gust


def direction_deg(z, params: MeanWindParams):
    """Wind from-direction in degrees at height z."""
    return params.gamma0_deg + params.veer_deg_per_100m * np.asarray(z, dtype=float) / 100.0


def mean_wind_ne(z, params: MeanWindParams, t=0.0):
    """Horizontal mean wind components (U_N, U_E) at height z and time t."""
    u_eff = mean_speed(z, params, t)
    gamma = np.deg2rad(direction_deg(z, params))
    return -u_eff * np.cos(gamma), -u_eff * np.sin(gamma)


@dataclass(frozen=True)
class WindModel:
    mean: MeanWindParams
    field: TurbulentField


def total_wind(model: WindModel, position, t: float):
    """Ground-truth wind (V_N, V_E, V_D) at one or many positions.

    position is (3,) or (n, 3) as (north, east, height).  The fluctuation
    field is advected past the query point under the frozen-field
    hypothesis, using the gust-free horizontal mean wind at the query
    height, so the turbulent pattern drifts with the local mean flow.
    """
    pos = np.asarray(position, dtype=float)
    single = pos.ndim == 1
    pts = pos[None, :] if single else pos
    lz = model.field.spec.domain_size[2]
    z = pts[:, 2]
    if np.any(z < 0.0) or np.any(z > lz):
        raise MeanWindConfigError("query height outside the wind column")

    base = power_law_speed(z, model.mean)
    gamma = np.deg2rad(direction_deg(z, model.mean))
    shift_n = -base * np.cos(gamma) * t
    shift_e = -base * np.sin(gamma) * t
    frozen = np.stack([pts[:, 0] - shift_n, pts[:, 1] - shift_e, z], axis=1)
    fluct = sample_fluctuation(model.field, frozen)
    fluct = np.atleast_2d(fluct)

    u_n, u_e = mean_wind_ne(z, model.mean, t)
    out = np.stack(
        [u_n + fluct[:, 0], u_e + fluct[:, 1], -fluct[:, 2]], axis=1
    )
    return out[0] if single else out
