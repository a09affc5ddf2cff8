"""Swarm mission orchestration and training-data assembly.

A mission flies n vehicles in a fixed horizontal formation through a shared
wind model: hold at ground level, a constant-rate climb to 1000 m, then hover.
The 100 Hz control/integration loop is logged at 10 Hz into per-vehicle
flight logs carrying kinematics, controller outputs, and the ground-truth
wind at each vehicle.  Logs are turned into normalized sliding-window
datasets for sequence-model training; wind labels are median filtered first.

Vertical quantities in the logs are altitude-positive-up; the wind columns
use north/east/down labels with UD the negated upward component.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .control import ControlGains, controller_update_batch
from .meanflow import WindModel, total_wind
from .vehicle import (
    SimulationAbort,
    VehicleParams,
    VehicleState,
    batch_derivatives,
    batch_step,
    pack_states,
)


class MissionConfigError(ValueError):
    pass


LOG_COLUMNS = (
    "t", "X", "Y", "Z", "VX", "VY", "VZ", "AX", "AY", "AZ",
    "Tcmd", "phi", "theta", "dX", "dY", "UN", "UE", "UD",
)
FEATURE_COLUMNS = LOG_COLUMNS[4:15]
LABEL_COLUMNS = LOG_COLUMNS[15:18]

CLIMB_START = 10.0
CLIMB_END = 350.0
CLIMB_TOP = 1000.0


@dataclass
class FlightLog:
    uas_id: int
    flight_id: int
    data: np.ndarray  # (rows, 18) in LOG_COLUMNS order

    def column(self, name: str) -> np.ndarray:
        return self.data[:, LOG_COLUMNS.index(name)]

    def feature_matrix(self) -> np.ndarray:
        return self.data[:, 4:15]

    def label_matrix(self) -> np.ndarray:
        return self.data[:, 15:18]


@dataclass(frozen=True)
class MissionConfig:
    wind: WindModel
    n_uas: int = 9
    spacing: float = 50.0
    center: tuple = (0.0, 0.0)
    duration: float = 400.0
    log_rate: int = 10
    sim_rate: int = 100
    flight_id: int = 0
    seeds: tuple = ()

    def __post_init__(self):
        if self.n_uas < 1:
            raise MissionConfigError("n_uas must be at least 1")
        if self.duration <= 0:
            raise MissionConfigError("duration must be positive")
        if self.log_rate < 1 or self.sim_rate < 1:
            raise MissionConfigError("rates must be positive")
        if self.sim_rate % self.log_rate != 0:
            raise MissionConfigError("sim_rate must be a multiple of log_rate")


def reference_altitude(t):
    """Piecewise climb profile: hold, constant-rate ramp, hold at the top."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise MissionConfigError("time must be non-negative")
    ramp = (arr - CLIMB_START) / (CLIMB_END - CLIMB_START) * CLIMB_TOP
    out = np.where(arr < CLIMB_START, 0.0, np.where(arr < CLIMB_END, ramp, CLIMB_TOP))
    return float(out) if np.isscalar(t) or arr.ndim == 0 else out


def swarm_layout(n_uas: int, spacing: float, center=(0.0, 0.0)):
    """Centered, near-square grid; row-major fill, surplus slots dropped."""
    if n_uas < 1:
        raise MissionConfigError("n_uas must be at least 1")
    rows = int(np.floor(np.sqrt(n_uas)))
    cols = int(np.ceil(n_uas / rows))
    pts = []
    for idx in range(n_uas):
        r, c = divmod(idx, cols)
        x = (c - (cols - 1) / 2.0) * spacing + center[0]
        y = (r - (rows - 1) / 2.0) * spacing + center[1]
        pts.append((x, y))
    return pts


def run_mission(config: MissionConfig, params: VehicleParams = None,
                gains: ControlGains = None):
    """Fly the formation through the shared wind; one 10 Hz log per vehicle."""
    params = params or VehicleParams()
    gains = gains or ControlGains()
    layout = swarm_layout(config.n_uas, config.spacing, config.center)
    n = config.n_uas
    dt = 1.0 / config.sim_rate
    per_log = config.sim_rate // config.log_rate
    total_steps = int(round(config.duration * config.sim_rate))
    n_rows = total_steps // per_log

    lz = config.wind.field.spec.domain_size[2]

    def wind_at(positions, t):
        # near-ground dips sample the column floor instead of faulting
        pts = np.array(positions, dtype=float)
        pts[:, 2] = np.clip(pts[:, 2], 0.0, lz)
        return total_wind(config.wind, pts, t)

    states = [VehicleState.hover((x, y, 0.0), params) for x, y in layout]
    y = pack_states(states)
    integ = np.zeros((n, 3))
    ref_xy = np.array(layout)
    logs = np.empty((n, n_rows, len(LOG_COLUMNS)))

    row = 0
    for k in range(total_steps):
        t = k * dt
        refs = np.column_stack([ref_xy, np.full(n, reference_altitude(t))])
        omega_cmd, t_cmd, integ = controller_update_batch(y, refs, integ, gains, params, dt)

        if k % per_log == 0:
            wind_ned = wind_at(y[:, 0:3], t)
            deriv = batch_derivatives(y, omega_cmd, wind_ned, params)
            logs[:, row, 0] = t
            logs[:, row, 1:4] = y[:, 0:3]
            logs[:, row, 4:7] = y[:, 3:6]
            logs[:, row, 7:10] = deriv[:, 3:6]
            logs[:, row, 10] = t_cmd
            logs[:, row, 11:13] = y[:, 6:8]
            logs[:, row, 13:15] = y[:, 0:2] - ref_xy
            logs[:, row, 15:18] = wind_ned
            row += 1

        try:
            y = batch_step(y, omega_cmd, lambda p: wind_at(p, t), dt, params)
        except SimulationAbort as err:
            worst = int(np.argmax(np.abs(y[:, 7])))
            raise SimulationAbort(
                f"vehicle {worst} aborted near t={t:.2f} s: {err}"
            ) from err

    return [FlightLog(uas_id=i, flight_id=config.flight_id, data=logs[i]) for i in range(n)]


def median_filter(series, width: int = 21):
    """Centered median; windows shrink symmetrically toward the ends."""
    if width < 1 or width % 2 == 0:
        raise MissionConfigError("filter width must be odd and positive")
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise MissionConfigError("series must be one-dimensional")
    n = arr.size
    half = width // 2
    out = np.empty(n)
    if n >= width:
        view = np.lib.stride_tricks.sliding_window_view(arr, width)
        out[half:n - half] = np.median(view, axis=1)
        edge = half
    else:
        edge = n
    for i in range(min(edge, n)):
        h = min(half, i, n - 1 - i)
        out[i] = np.median(arr[i - h:i + h + 1])
        j = n - 1 - i
        h = min(half, j, n - 1 - j)
        out[j] = np.median(arr[j - h:j + h + 1])
    return out


@dataclass
class SequenceDataset:
    windows: np.ndarray        # (N, L, 11) float32, normalized
    targets: np.ndarray        # (N, 3) float64, normalized
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    provenance: np.ndarray = field(repr=False)  # (N, 2) int: flight, uas

    def normalize_features(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.feature_mean) / self.feature_std

    def denormalize_targets(self, normed) -> np.ndarray:
        return np.asarray(normed, dtype=float) * self.target_std + self.target_mean

    def stats_dict(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
        }


def stats_from_dict(d: dict):
    return (
        np.asarray(d["feature_mean"], dtype=float),
        np.asarray(d["feature_std"], dtype=float),
        np.asarray(d["target_mean"], dtype=float),
        np.asarray(d["target_std"], dtype=float),
    )


def build_dataset(logs, window: int = 40, filter_width: int = 21) -> SequenceDataset:
    """Sliding windows over features, next-step filtered wind as the target."""
    if window < 1:
        raise MissionConfigError("window length must be positive")
    win_parts, tgt_parts, prov_parts = [], [], []
    for log in logs:
        feats = log.feature_matrix()
        n = feats.shape[0]
        if n < window + 1:
            warnings.warn(
                f"flight {log.flight_id} uas {log.uas_id}: "
                f"{n} rows < window {window}+1, skipped"
            )
            continue
        labels = np.column_stack(
            [median_filter(log.label_matrix()[:, j], filter_width) for j in range(3)]
        )
        view = np.lib.stride_tricks.sliding_window_view(feats, window, axis=0)
        win_parts.append(view[:-1].transpose(0, 2, 1).astype(np.float32))
        tgt_parts.append(labels[window:])
        prov = np.empty((n - window, 2), dtype=np.int32)
        prov[:, 0] = log.flight_id
        prov[:, 1] = log.uas_id
        prov_parts.append(prov)
    if not win_parts:
        raise MissionConfigError("no log is long enough to window")

    windows = np.concatenate(win_parts, axis=0)
    targets = np.concatenate(tgt_parts, axis=0)
    provenance = np.concatenate(prov_parts, axis=0)

    flat = windows.reshape(-1, windows.shape[2])
    f_mean = flat.mean(axis=0, dtype=np.float64)
    f_std = flat.std(axis=0, dtype=np.float64)
    f_std = np.where(f_std < 1e-12, 1.0, f_std)
    t_mean = targets.mean(axis=0)
    t_std = targets.std(axis=0)
    t_std = np.where(t_std < 1e-12, 1.0, t_std)

    np.subtract(windows, f_mean.astype(np.float32), out=windows)
    np.divide(windows, f_std.astype(np.float32), out=windows)
    targets = (targets - t_mean) / t_std
    return SequenceDataset(windows, targets, f_mean, f_std, t_mean, t_std, provenance)


def thin_dataset(dataset: SequenceDataset, stride: int) -> SequenceDataset:
    """Every stride-th window, keeping the full-corpus normalization stats."""
    if stride < 1:
        raise MissionConfigError("stride must be positive")
    return SequenceDataset(
        dataset.windows[::stride], dataset.targets[::stride],
        dataset.feature_mean, dataset.feature_std,
        dataset.target_mean, dataset.target_std,
        dataset.provenance[::stride],
    )


def write_log(log: FlightLog, path) -> None:
    """CSV with the fixed 18-column header, 9 significant digits."""
    with open(path, "w") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for r in log.data:
            fh.write(",".join(f"{v:.9g}" for v in r) + "\n")


def read_log(path, uas_id: int = 0, flight_id: int = 0) -> FlightLog:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != ",".join(LOG_COLUMNS):
            raise MissionConfigError(f"unexpected log header in {path}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(LOG_COLUMNS):
        raise MissionConfigError(f"wrong column count in {path}")
    return FlightLog(uas_id=uas_id, flight_id=flight_id, data=data)
