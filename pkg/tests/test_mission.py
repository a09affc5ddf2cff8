import numpy as np
import pytest

from swarmwind.meanflow import MeanWindParams, WindModel, total_wind
from swarmwind.mission import (
    FlightLog,
    LOG_COLUMNS,
    MissionConfig,
    MissionConfigError,
    build_dataset,
    median_filter,
    read_log,
    thin_dataset,
    reference_altitude,
    run_mission,
    swarm_layout,
    write_log,
)
from swarmwind.turbulence import TurbulenceSpec, TurbulentField, synthesize_field


def zero_field(spec=None):
    spec = spec or TurbulenceSpec(
        domain_size=(80.0, 80.0, 1200.0), grid=(8, 8, 8), n_modes=1, target_sigma=0.0
    )
    shape = tuple(spec.grid)
    z = np.zeros(shape, dtype=np.float32)
    return TurbulentField(spec, z, z.copy(), z.copy(), 0.0)


def calm_model():
    mean = MeanWindParams(u_ref=0.0, gust_amplitude=0.0)
    return WindModel(mean=mean, field=zero_field())


def test_reference_altitude_profile():
    assert reference_altitude(5.0) == 0.0
    assert reference_altitude(10.0) == 0.0
    assert reference_altitude(350.0) == 1000.0
    assert reference_altitude(400.0) == 1000.0
    assert reference_altitude(200.0) == pytest.approx(558.8235294117647, rel=1e-12)
    ts = np.array([5.0, 200.0, 360.0])
    assert np.allclose(reference_altitude(ts), [0.0, 558.8235294117647, 1000.0])
    with pytest.raises(MissionConfigError):
        reference_altitude(-1.0)


def test_swarm_layout_shapes():
    assert swarm_layout(1, 50.0) == [(0.0, 0.0)]

    nine = swarm_layout(9, 50.0)
    assert len(nine) == 9
    assert sorted(nine) == sorted((x, y) for y in (-50.0, 0.0, 50.0) for x in (-50.0, 0.0, 50.0))

    five = swarm_layout(5, 50.0)
    # 2 x 3 grid, row-major, last slot dropped
    assert five == [(-50.0, -25.0), (0.0, -25.0), (50.0, -25.0), (-50.0, 25.0), (0.0, 25.0)]

    shifted = swarm_layout(1, 50.0, center=(7.0, -3.0))
    assert shifted == [(7.0, -3.0)]


def test_mission_config_validation():
    with pytest.raises(MissionConfigError):
        MissionConfig(wind=calm_model(), n_uas=0)
    with pytest.raises(MissionConfigError):
        MissionConfig(wind=calm_model(), sim_rate=105, log_rate=10)
    with pytest.raises(MissionConfigError):
        MissionConfig(wind=calm_model(), duration=0.0)


def test_zero_wind_mission_logs():
    cfg = MissionConfig(wind=calm_model(), n_uas=2, duration=15.0)
    logs = run_mission(cfg)
    assert len(logs) == 2
    for i, log in enumerate(logs):
        assert log.uas_id == i
        assert log.data.shape == (150, 18)
        assert np.allclose(log.column("t"), np.arange(150) / 10.0)
        assert np.all(log.column("UN") == 0.0)
        assert np.all(log.column("UE") == 0.0)
        assert np.all(log.column("UD") == 0.0)
        # per-row reference offsets are consistent with the layout
        xr, yr = swarm_layout(2, cfg.spacing)[i]
        assert np.allclose(log.column("dX"), log.column("X") - xr)
        assert np.allclose(log.column("dY"), log.column("Y") - yr)
        # hover equilibrium start: stays put until the climb begins
        pre = log.data[log.column("t") < 10.0]
        assert np.max(np.abs(pre[:, 3])) < 1e-6
        # climbing by the end of the window
        assert log.column("Z")[-1] > 5.0


def test_mission_determinism():
    spec = TurbulenceSpec(
        domain_size=(80.0, 80.0, 300.0), grid=(16, 16, 16), n_modes=48,
        target_sigma=0.3, rng_seed=4,
    )
    model = WindModel(mean=MeanWindParams(u_ref=2.0), field=synthesize_field(spec))
    cfg = MissionConfig(wind=model, n_uas=2, duration=6.0)
    logs_a = run_mission(cfg)
    logs_b = run_mission(cfg)
    for a, b in zip(logs_a, logs_b):
        assert np.array_equal(a.data, b.data)


def test_logged_wind_matches_model():
    spec = TurbulenceSpec(
        domain_size=(80.0, 80.0, 300.0), grid=(16, 16, 16), n_modes=48,
        target_sigma=0.2, rng_seed=7,
    )
    model = WindModel(mean=MeanWindParams(u_ref=1.5), field=synthesize_field(spec))
    cfg = MissionConfig(wind=model, n_uas=3, duration=8.0)
    for log in run_mission(cfg):
        pts = log.data[:, 1:4].copy()
        pts[:, 2] = np.clip(pts[:, 2], 0.0, spec.domain_size[2])
        for r in range(0, log.data.shape[0], 7):
            w = total_wind(model, pts[r], log.column("t")[r])
            assert np.allclose(log.data[r, 15:18], w, atol=1e-12)


def test_median_filter_basics():
    const = np.full(50, 3.7)
    assert np.array_equal(median_filter(const), const)

    spiky = np.zeros(60)
    spiky[30] = 100.0
    assert np.all(median_filter(spiky) == 0.0)

    ramp = np.arange(1.0, 22.0)
    out = median_filter(ramp, 21)
    assert out[10] == 11.0
    assert out[0] == 1.0   # edge window shrinks to a single sample
    assert out[1] == 2.0   # then three samples
    assert out[-1] == 21.0

    with pytest.raises(MissionConfigError):
        median_filter(np.zeros(10), 4)


def synthetic_log(n_rows: int, uas_id: int = 0, flight_id: int = 0, base: float = 0.0):
    data = np.zeros((n_rows, 18))
    data[:, 0] = np.arange(n_rows) / 10.0
    for j in range(4, 15):
        data[:, j] = base + j + 0.01 * np.arange(n_rows)
    data[:, 15] = base + np.sin(np.arange(n_rows) / 5.0)
    data[:, 16] = base - 1.0
    data[:, 17] = 0.1 * base
    return FlightLog(uas_id=uas_id, flight_id=flight_id, data=data)


def test_build_dataset_window_geometry():
    log = synthetic_log(100)
    ds = build_dataset([log], window=40)
    assert ds.windows.shape == (60, 40, 11)
    assert ds.targets.shape == (60, 3)
    assert ds.windows.dtype == np.float32
    assert ds.targets.dtype == np.float64

    # window i covers rows i..i+39 of the features
    raw = log.feature_matrix()
    got = ds.windows[5] * ds.feature_std.astype(np.float32) + ds.feature_mean.astype(np.float32)
    assert np.allclose(got, raw[5:45], rtol=1e-5)

    # target i is the filtered wind at row i+40
    filt = np.column_stack([median_filter(log.label_matrix()[:, j]) for j in range(3)])
    back = ds.denormalize_targets(ds.targets)
    assert np.allclose(back, filt[40:], atol=1e-10)


def test_thin_dataset_strides_with_shared_stats():
    log = synthetic_log(100)
    ds = build_dataset([log], window=40)
    thin = thin_dataset(ds, 3)
    assert thin.windows.shape[0] == 20
    assert np.array_equal(thin.windows, ds.windows[::3])
    assert np.array_equal(thin.targets, ds.targets[::3])
    assert np.array_equal(thin.provenance, ds.provenance[::3])
    assert thin.feature_mean is ds.feature_mean
    assert thin.target_std is ds.target_std
    with pytest.raises(MissionConfigError):
        thin_dataset(ds, 0)


def test_build_dataset_normalization_and_provenance():
    logs = [synthetic_log(80, uas_id=0, flight_id=1), synthetic_log(90, uas_id=2, flight_id=1, base=5.0)]
    ds = build_dataset(logs, window=40)
    assert ds.windows.shape[0] == (80 - 40) + (90 - 40)
    flat = ds.windows.reshape(-1, 11)
    assert np.max(np.abs(flat.mean(axis=0))) < 1e-4
    assert np.max(np.abs(flat.std(axis=0) - 1.0)) < 1e-3
    assert np.max(np.abs(ds.targets.mean(axis=0))) < 1e-10
    assert set(map(tuple, ds.provenance[:40])) == {(1, 0)}
    assert set(map(tuple, ds.provenance[40:])) == {(1, 2)}


def test_build_dataset_skips_short_logs():
    good = synthetic_log(100)
    short = synthetic_log(30, uas_id=1)
    with pytest.warns(UserWarning):
        ds = build_dataset([good, short], window=40)
    assert ds.windows.shape[0] == 60

    with pytest.warns(UserWarning), pytest.raises(MissionConfigError):
        build_dataset([short], window=40)


def test_log_csv_round_trip(tmp_path):
    cfg = MissionConfig(wind=calm_model(), n_uas=1, duration=3.0)
    log = run_mission(cfg)[0]
    path = tmp_path / "flight.csv"
    write_log(log, path)

    first = path.read_text().splitlines()[0]
    assert first == "t,X,Y,Z,VX,VY,VZ,AX,AY,AZ,Tcmd,phi,theta,dX,dY,UN,UE,UD"

    back = read_log(path, uas_id=log.uas_id)
    assert back.data.shape == log.data.shape
    assert np.allclose(back.data, log.data, rtol=1e-8, atol=1e-12)

    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(MissionConfigError):
        read_log(bad)


def test_feature_label_column_slices():
    assert LOG_COLUMNS[4:15] == ("VX", "VY", "VZ", "AX", "AY", "AZ", "Tcmd", "phi", "theta", "dX", "dY")
    assert LOG_COLUMNS[15:18] == ("UN", "UE", "UD")
