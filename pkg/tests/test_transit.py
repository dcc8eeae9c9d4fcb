import numpy as np
import pytest

from crowding_core.config import LineConfig, StationLayout
from crowding_core.transit import (
    OdmIndex,
    alighting_row,
    boarding_row,
    build_A_matrix,
    car_level_rate,
    car_level_rates,
    committed_position_probs,
    crowding_row,
    flow_accounting,
    noncommitted_position_probs,
    onboard_row,
)


def _three_station_line(committed_prob=0.3):
    layouts = (
        StationLayout(n_positions=2, access=(1,), exits=(1,)),
        StationLayout(n_positions=2, access=(2,), exits=(2,)),
        StationLayout(n_positions=2, access=(1,), exits=()),
    )
    return LineConfig(
        n_stations=3, n_cars=2, layouts=layouts,
        arrival_rates=(0.1, 0.05), headways=(100.0, 100.0),
        odm_probs=((0.5, 0.5), (1.0,)), committed_prob=committed_prob,
    )


def test_noncommitted_single_access():
    probs = noncommitted_position_probs(StationLayout(n_positions=6, access=(3,)))
    assert probs == pytest.approx([0.09375, 0.1875, 0.375, 0.1875, 0.09375, 0.0625])


def test_noncommitted_symmetric_access():
    probs = noncommitted_position_probs(StationLayout(n_positions=6, access=(1, 2, 3, 4, 5, 6)))
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert probs == pytest.approx(probs[::-1])


def test_noncommitted_concentrates_with_large_decay():
    probs = noncommitted_position_probs(StationLayout(n_positions=6, access=(2,), xi=8.0))
    assert probs[1] > 0.9 * probs.max()
    assert probs[1] > 0.99


def test_noncommitted_steep_decay_stays_finite():
    probs = noncommitted_position_probs(StationLayout(n_positions=6, access=(3, 5), xi=5000.0))
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0)
    assert probs == pytest.approx([0, 0, 0.5, 0, 0.5, 0], abs=1e-12)


def test_noncommitted_needs_access():
    with pytest.raises(ValueError):
        noncommitted_position_probs(StationLayout(n_positions=6))


def test_committed_probs():
    assert committed_position_probs(StationLayout(n_positions=6, exits=(2, 4))) == pytest.approx(
        [0, 0.5, 0, 0.5, 0, 0]
    )
    assert committed_position_probs(StationLayout(n_positions=6, exits=(1,))) == pytest.approx([1, 0, 0, 0, 0, 0])
    assert committed_position_probs(StationLayout(n_positions=6)) == pytest.approx([1 / 6] * 6)


def test_position_probs_are_distributions():
    for layout in LineConfig().layouts:
        for probs in (committed_position_probs(layout), noncommitted_position_probs(layout)):
            assert np.all(probs >= 0)
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_rates_without_committed_passengers():
    cfg = LineConfig(committed_prob=0.0)
    nc = noncommitted_position_probs(cfg.layouts[0])
    for k in range(1, 7):
        assert car_level_rate(cfg, 1, 2, k) == pytest.approx(270 * 0.2 * nc[k - 1])
    assert sum(car_level_rate(cfg, 1, 2, k) for k in range(1, 7)) == pytest.approx(54.0)


def test_rates_conserve_arrival_mass():
    cfg = LineConfig()
    index = OdmIndex(cfg.n_stations)
    rates = car_level_rates(cfg)
    for i in range(1, cfg.n_stations):
        total = rates[:, index.origins == i].sum()
        assert total == pytest.approx(cfg.arrival_rates[i - 1] * cfg.headways[i - 1], abs=1e-9)
    assert rates[:, index.origins == 1].sum() == pytest.approx(270.0)


def test_vectorised_rates_match_scalar():
    cfg = LineConfig()
    index = OdmIndex(cfg.n_stations)
    rates = car_level_rates(cfg)
    for idx, (i, j) in enumerate(index.pairs()):
        for k in range(1, cfg.n_cars + 1):
            assert rates[k - 1, idx] == pytest.approx(car_level_rate(cfg, i, j, k), rel=1e-12)


def test_rate_arguments_checked():
    cfg = LineConfig()
    with pytest.raises(ValueError):
        car_level_rate(cfg, 2, 2, 1)
    with pytest.raises(ValueError):
        car_level_rate(cfg, 1, 6, 1)
    with pytest.raises(ValueError):
        car_level_rate(cfg, 1, 2, 7)


def test_odm_index_order():
    index = OdmIndex(4)
    assert index.pairs() == [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    assert index.flat(2, 4) == 4
    with pytest.raises(ValueError):
        index.flat(3, 2)


def test_A_matrix_worked_example():
    assert build_A_matrix(3, 3).tolist() == [[1, 1, 0], [0, 1, 1]]
    assert build_A_matrix(2, 2).tolist() == [[1]]


def test_A_matrix_row_sums():
    A = build_A_matrix(5, 5)
    assert A.shape == (4, 10)
    for r in range(1, 5):
        assert A[r - 1].sum() == r * (5 - r)


def test_A_matrix_station_checked():
    with pytest.raises(ValueError):
        build_A_matrix(1, 5)


def test_flow_accounting_worked_example():
    trace = flow_accounting(np.array([[5, 2, 3]]), 3)
    assert trace.onboard[0].tolist() == [0, 7, 5]
    assert trace.alighted[0].tolist() == [0, 5, 5]
    assert trace.crowding[0].tolist() == [0, 2, 0]
    assert trace.boarded[0].tolist() == [7, 3, 0]


def test_flow_accounting_zero():
    trace = flow_accounting(np.zeros((2, 10), dtype=int), 5)
    for counts in (trace.boarded, trace.alighted, trace.onboard, trace.crowding):
        assert not counts.any()


def test_flow_identities_on_random_odms():
    rng = np.random.default_rng(5)
    M = 5
    odms = rng.integers(0, 20, size=(6, 10))
    trace = flow_accounting(odms, M)
    assert np.all(trace.crowding[:, -1] == 0)
    assert np.array_equal(trace.alighted.sum(axis=1), odms.sum(axis=1))
    assert np.array_equal(trace.boarded.sum(axis=1), odms.sum(axis=1))
    for j in range(1, M):
        assert np.array_equal(trace.crowding[:, j - 1], trace.onboard[:, j] - trace.boarded[:, j - 1])
    for j in range(2, M + 1):
        assert np.array_equal(odms @ build_A_matrix(j, M).T, trace.onboard[:, 1:j])


def test_selector_rows_are_disjoint_where_expected():
    M = 5
    for j in range(1, M + 1):
        assert np.array_equal(onboard_row(j, M), alighting_row(j, M) + crowding_row(j, M))
        assert not np.any(boarding_row(j, M) & onboard_row(j, M))


def test_flow_accounting_rejects_bad_shapes():
    with pytest.raises(ValueError):
        flow_accounting(np.zeros((1, 4), dtype=int), 3)
    with pytest.raises(ValueError):
        flow_accounting(np.array([[1, -1, 0]]), 3)


def test_small_line_fallback_exits():
    cfg = _three_station_line()
    rates = car_level_rates(cfg)
    assert rates.sum() == pytest.approx(15.0)
    # Destination 3 has no exits, so committed passengers spread evenly.
    assert car_level_rate(cfg, 2, 3, 1) == pytest.approx(5.0 * (0.7 / 3 + 0.5 * 0.3))
