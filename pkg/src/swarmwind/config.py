"""Experiment configuration: nested JSON in, validated typed sections out.

Every section maps onto the owning module's parameter dataclass, so a
config file can only say things the code actually honors; unknown keys
raise instead of being silently dropped.  The top-level seed feeds any
section that does not pin its own: turbulence uses it directly, the
estimator gets seed+1, the reconstruction net seed+2, so stages stay
decorrelated but reproducible from one number.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .control import ControlGains
from .meanflow import MeanWindParams
from .turbulence import TurbulenceSpec
from .vehicle import VehicleParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MissionSection:
    n_uas: int = 9
    spacing: float = 50.0
    center: tuple = (0.0, 0.0)
    duration: float = 400.0
    log_rate: int = 10
    sim_rate: int = 100


@dataclass(frozen=True)
class EstimatorSection:
    hidden: int = 256
    head_width: int = 64
    window: int = 40
    filter_width: int = 21
    weights: tuple = (1.0, 1.0, 0.3)
    lr: float = 2e-3
    batch_size: int = 128
    epochs: int = 12
    clip_norm: float = 5.0
    val_fraction: float = 0.2
    seed: int = 1


@dataclass(frozen=True)
class PinnSection:
    width: int = 128
    depth: int = 4
    harmonics: int = 4
    steps: int = 2000
    lr: float = 2e-3
    obs_batch: int = 512
    fd_step: float = 1.0
    lambda_phys: float = 1e-3
    lambda_smooth: float = 1e-3
    z_smooth_threshold: float = 50.0
    collocation: int = 1024
    seed: int = 2


@dataclass(frozen=True)
class EvalSection:
    grid: tuple = (21, 21, 41)
    n_times: int = 5
    uas_counts: tuple = (4, 5, 6, 7, 9, 12)


_SECTIONS = {
    "turbulence": TurbulenceSpec,
    "mean_wind": MeanWindParams,
    "vehicle": VehicleParams,
    "control": ControlGains,
    "mission": MissionSection,
    "estimator": EstimatorSection,
    "pinn": PinnSection,
    "eval": EvalSection,
}

# keys that inherit from the global seed when a section leaves them out
_SEED_DERIVATION = {
    "turbulence": ("rng_seed", 0),
    "estimator": ("seed", 1),
    "pinn": ("seed", 2),
}


@dataclass(frozen=True)
class ExperimentConfig:
    turbulence: TurbulenceSpec
    mean_wind: MeanWindParams
    vehicle: VehicleParams
    control: ControlGains
    mission: MissionSection
    estimator: EstimatorSection
    pinn: PinnSection
    eval: EvalSection
    seed: int = 0


def _coerce(value):
    return tuple(value) if isinstance(value, list) else value


def _build_section(name, cls, data: dict, seed: int):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(v) for k, v in data.items()}
    if name in _SEED_DERIVATION:
        key, offset = _SEED_DERIVATION[name]
        kwargs.setdefault(key, seed + offset)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    sections = {}
    for name, cls in _SECTIONS.items():
        payload = data.get(name, {})
        if not isinstance(payload, dict):
            raise ConfigError(f"{name}: section must be a JSON object")
        sections[name] = _build_section(name, cls, payload, seed)
    return ExperimentConfig(seed=seed, **sections)


def to_dict(config: ExperimentConfig) -> dict:
    out = {"seed": config.seed}
    for name in _SECTIONS:
        section = getattr(config, name)
        out[name] = dataclasses.asdict(section)
    return out


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(data)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=1) + "\n")


def default_config(seed: int = 0) -> ExperimentConfig:
    return from_dict({"seed": seed})
