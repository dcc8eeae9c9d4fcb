"""
Rail line model: where passengers stand, how many board each car, and the
deterministic bookkeeping from car-level ODMs to on-board and crowding counts.

Stations and cars are 1-based everywhere in this module's API. A car-level ODM
is a flat integer vector over the upper-triangular (origin, destination) pairs
in the order [b_12, ..., b_1M, b_23, ..., b_2M, ...]; several cars stack into a
(K, P) array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .config import LineConfig, StationLayout

# Floor on |k - l| so that standing at an access point has finite weight.
DISTANCE_FLOOR = 0.5


class OdmIndex:
    """Map between (origin, destination) pairs and flat ODM positions."""

    def __init__(self, n_stations: int):
        if n_stations < 2:
            raise ValueError(f"n_stations must be >= 2, got {n_stations}")
        self.n_stations = n_stations
        self._pairs = [(i, j) for i in range(1, n_stations) for j in range(i + 1, n_stations + 1)]
        self._flat = {pair: idx for idx, pair in enumerate(self._pairs)}
        self.origins = np.array([i for i, _ in self._pairs])
        self.destinations = np.array([j for _, j in self._pairs])

    @property
    def size(self) -> int:
        return len(self._pairs)

    def flat(self, i: int, j: int) -> int:
        try:
            return self._flat[(i, j)]
        except KeyError:
            raise ValueError(f"no ODM entry for origin {i}, destination {j} with M={self.n_stations}") from None

    def pairs(self) -> list[tuple[int, int]]:
        return list(self._pairs)


# --------------------------------------------------------------------------- position choice


def noncommitted_position_probs(layout: StationLayout) -> np.ndarray:
    if not layout.access:
        raise ValueError("station layout has no access points")
    k = np.arange(1, layout.n_positions + 1)[:, None]
    dist = np.abs(k - np.array(layout.access)[None, :]).astype(float)
    # Normalised in log space: steep decays overflow the raw weights.
    log_weights = logsumexp(-layout.xi * np.log(np.maximum(dist, DISTANCE_FLOOR)), axis=1)
    return np.exp(log_weights - logsumexp(log_weights))


def committed_position_probs(dest_layout: StationLayout) -> np.ndarray:
    k = dest_layout.n_positions
    if not dest_layout.exits:
        return np.full(k, 1.0 / k)
    probs = np.zeros(k)
    exits = sorted(set(dest_layout.exits))
    probs[np.array(exits) - 1] = 1.0 / len(exits)
    return probs


def _check_pair(cfg: LineConfig, i: int, j: int):
    if not 1 <= i < j <= cfg.n_stations:
        raise ValueError(f"invalid origin/destination ({i}, {j}) for M={cfg.n_stations}")


def car_level_rate(cfg: LineConfig, i: int, j: int, k: int) -> float:
    """Expected number of passengers from station i to j boarding car k."""
    _check_pair(cfg, i, j)
    if not 1 <= k <= cfg.n_cars:
        raise ValueError(f"car {k} outside 1..{cfg.n_cars}")
    p_nc = noncommitted_position_probs(cfg.layouts[i - 1])[k - 1]
    p_c = committed_position_probs(cfg.layouts[j - 1])[k - 1]
    arrivals = cfg.arrival_rates[i - 1] * cfg.headways[i - 1]
    p_ij = cfg.odm_probs[i - 1][j - i - 1]
    pc = cfg.committed_prob
    return float(arrivals * p_ij * (p_nc * (1 - pc) + p_c * pc))


def car_level_rates(cfg: LineConfig) -> np.ndarray:
    """Rates for every car and flat ODM index, shape (K, P)."""
    index = OdmIndex(cfg.n_stations)
    pc = cfg.committed_prob
    nc = [noncommitted_position_probs(cfg.layouts[i - 1]) for i in range(1, cfg.n_stations)]
    c = [committed_position_probs(layout) for layout in cfg.layouts]
    rates = np.zeros((cfg.n_cars, index.size))
    for idx, (i, j) in enumerate(index.pairs()):
        mass = cfg.arrival_rates[i - 1] * cfg.headways[i - 1] * cfg.odm_probs[i - 1][j - i - 1]
        rates[:, idx] = mass * (nc[i - 1] * (1 - pc) + c[j - 1] * pc)
    return rates


# --------------------------------------------------------------------------- accounting


def _row(n_stations: int, mask) -> np.ndarray:
    index = OdmIndex(n_stations)
    return mask(index.origins, index.destinations).astype(np.int64)


def _check_station(j: int, n_stations: int):
    if not 1 <= j <= n_stations:
        raise ValueError(f"station {j} outside 1..{n_stations}")


def onboard_row(j: int, n_stations: int) -> np.ndarray:
    """Selects b_{i,j'} with i < j <= j': passengers on board arriving at j."""
    _check_station(j, n_stations)
    return _row(n_stations, lambda o, d: (o < j) & (d >= j))


def alighting_row(j: int, n_stations: int) -> np.ndarray:
    _check_station(j, n_stations)
    return _row(n_stations, lambda o, d: (o < j) & (d == j))


def crowding_row(j: int, n_stations: int) -> np.ndarray:
    """Selects passengers still in the car once alighting at j completes."""
    _check_station(j, n_stations)
    return _row(n_stations, lambda o, d: (o < j) & (d > j))


def boarding_row(j: int, n_stations: int) -> np.ndarray:
    _check_station(j, n_stations)
    return _row(n_stations, lambda o, d: o == j)


def build_A_matrix(j: int, n_stations: int) -> np.ndarray:
    """Rows map an ODM to on-board counts o_2..o_j (the train is empty before station 1)."""
    if not 2 <= j <= n_stations:
        raise ValueError(f"station {j} outside 2..{n_stations}")
    return np.vstack([onboard_row(r + 1, n_stations) for r in range(1, j)])


@dataclass(frozen=True)
class FlowTrace:
    """Per-car counts, arrays of shape (K, M) indexed [car - 1, station - 1]."""
    boarded: np.ndarray
    alighted: np.ndarray
    onboard: np.ndarray
    crowding: np.ndarray

    @property
    def n_cars(self) -> int:
        return self.onboard.shape[0]

    @property
    def n_stations(self) -> int:
        return self.onboard.shape[1]


def flow_accounting(odms: np.ndarray, n_stations: int) -> FlowTrace:
    odms = np.atleast_2d(np.asarray(odms))
    index = OdmIndex(n_stations)
    if odms.shape[1] != index.size:
        raise ValueError(f"ODM has {odms.shape[1]} entries, expected {index.size} for M={n_stations}")
    if np.any(odms < 0):
        raise ValueError("ODM entries must be non-negative")
    stations = range(1, n_stations + 1)

    def select(row):
        return odms @ np.vstack([row(j, n_stations) for j in stations]).T

    return FlowTrace(
        boarded=select(boarding_row),
        alighted=select(alighting_row),
        onboard=select(onboard_row),
        crowding=select(crowding_row),
    )
