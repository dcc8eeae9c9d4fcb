import numpy as np
import pytest

from crowding_core.config import ApcModel, LineConfig
from crowding_core.randomness import Stream, derive_rng
from crowding_core.reports import write_csv
from crowding_core.simulator import (
    ODM_FILE,
    SIMRUN_FILE,
    apc_measure,
    load_simrun,
    odm_frame,
    run_scenario,
    sample_boarding,
    simrun_frame,
)
from crowding_core.transit import OdmIndex, car_level_rates, flow_accounting

LINE = LineConfig()


def test_same_seed_same_run():
    a = run_scenario(LINE, ApcModel(), 42, 3)
    b = run_scenario(LINE, ApcModel(), 42, 3)
    assert np.array_equal(a.odms, b.odms)
    assert np.array_equal(a.measurements, b.measurements)


def test_neighbouring_seeds_differ():
    a = run_scenario(LINE, ApcModel(), 42)
    b = run_scenario(LINE, ApcModel(), 43)
    assert not np.array_equal(a.odms, b.odms)


def test_run_shapes_and_terminal():
    run = run_scenario(LINE, ApcModel(), 1)
    assert run.odms.shape == (6, 10)
    assert run.measurements.shape == (6, 4)
    assert np.all(run.trace.crowding[:, -1] == 0)
    assert run.trace.boarded.sum() == run.trace.alighted.sum()


def test_noise_free_measurements_equal_onboard():
    run = run_scenario(LINE, ApcModel(noise_sigma=0.0), 9)
    assert np.array_equal(run.measurements, run.trace.onboard[:, 1:].astype(float))


def test_bias_shifts_measurements():
    run = run_scenario(LINE, ApcModel(noise_sigma=0.0, bias=10.0), 9)
    assert np.array_equal(run.measurements, run.trace.onboard[:, 1:] + 10.0)


def test_apc_noise_statistics():
    trace = flow_accounting(np.zeros((1, 10), dtype=np.int64), 5)
    rng = derive_rng(3, Stream.APC, 0)
    errors = np.concatenate([apc_measure(trace, ApcModel(noise_sigma=5.0), rng).ravel() for _ in range(2500)])
    assert errors.size == 10_000
    assert 4.8 <= errors.std(ddof=1) <= 5.2
    assert abs(errors.mean()) < 5 * 5.0 / np.sqrt(errors.size)


def test_measurements_not_clamped():
    trace = flow_accounting(np.zeros((6, 10), dtype=np.int64), 5)
    m = apc_measure(trace, ApcModel(noise_sigma=20.0), derive_rng(4, Stream.APC, 0))
    assert np.any(m < 0)
    assert not np.allclose(m, np.round(m))


def test_boarding_moments_match_rates():
    rates = car_level_rates(LINE)
    rng = derive_rng(11, Stream.BOARDING, 0)
    draws = np.stack([sample_boarding(LINE, rng) for _ in range(10_000)])
    mean = draws.mean(axis=0)
    var = draws.var(axis=0, ddof=1)
    se_mean = np.sqrt(rates / draws.shape[0])
    assert np.all(np.abs(mean - rates) <= 5 * se_mean + 1e-12)
    # Var of the sample variance of a Poisson(r) is about (r + 2 r^2) / n.
    se_var = np.sqrt((rates + 2 * rates**2) / draws.shape[0])
    assert np.all(np.abs(var - rates) <= 5 * se_var + 1e-12)


def test_station_one_boarders_mean():
    index = OdmIndex(LINE.n_stations)
    totals = []
    for seed in range(1000):
        run = run_scenario(LINE, ApcModel(), seed)
        assert run.trace.boarded.sum() == run.trace.alighted.sum()
        assert np.all(run.trace.crowding[:, -1] == 0)
        totals.append(run.odms[:, index.origins == 1].sum())
    totals = np.array(totals)
    assert abs(totals.mean() - 270.0) <= 5 * np.sqrt(270.0 / totals.size)


def test_zero_rate_entries_always_zero():
    line = LineConfig(odm_probs=((0.0, 0.4, 0.3, 0.3), (0.2, 0.4, 0.4), (0.6, 0.4), (1.0,)))
    rng = derive_rng(2, Stream.BOARDING, 0)
    for _ in range(50):
        assert not sample_boarding(line, rng)[:, 0].any()


def test_frames_schema():
    run = run_scenario(LINE, ApcModel(), 5)
    frame = simrun_frame(run)
    assert list(frame.columns) == ["car", "station", "boarded", "alighted", "onboard", "crowding", "apc_measurement"]
    assert len(frame) == 30
    first = frame[(frame.car == 1) & (frame.station == 1)].iloc[0]
    assert np.isnan(first.apc_measurement)
    row = frame[(frame.car == 2) & (frame.station == 3)].iloc[0]
    assert row.apc_measurement == run.measurements[1, 1]
    assert list(odm_frame(run).columns) == ["car", "origin", "destination", "count"]


def test_simrun_export_reloads(tmp_path):
    run = run_scenario(LINE, ApcModel(), 5)
    write_csv(simrun_frame(run), tmp_path / SIMRUN_FILE)
    write_csv(odm_frame(run), tmp_path / ODM_FILE)
    loaded = load_simrun(tmp_path, master_seed=5)
    assert np.array_equal(loaded.odms, run.odms)
    assert np.array_equal(loaded.trace.crowding, run.trace.crowding)
    assert loaded.measurements == pytest.approx(run.measurements, rel=1e-15)


def test_measurements_through():
    run = run_scenario(LINE, ApcModel(), 5)
    assert run.measurements_through(2).shape == (6, 2)
    assert run.measurements_through(0).shape == (6, 0)
    with pytest.raises(ValueError):
        run.measurements_through(5)
