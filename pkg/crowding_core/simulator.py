"""Synthetic ground truth: Poisson boardings, the board/alight process and noisy APC readings."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .config import ApcModel, LineConfig
from .randomness import Stream, derive_rng
from .transit import FlowTrace, OdmIndex, car_level_rates, flow_accounting

logger = logging.getLogger(__name__)

SIMRUN_FILE = "simrun.csv"
ODM_FILE = "odm.csv"


@dataclass(frozen=True)
class SimRun:
    """
    One traversal of the line.

    ``measurements[k - 1, j - 1]`` is the APC reading of car k after the train
    leaves station j, i.e. a noisy copy of o_{j+1}; shape (K, M - 1).
    """
    master_seed: Optional[int]
    run_index: int
    odms: np.ndarray
    trace: FlowTrace
    measurements: np.ndarray

    @property
    def n_stations(self) -> int:
        return self.trace.n_stations

    @property
    def n_cars(self) -> int:
        return self.trace.n_cars

    def measurements_through(self, station: int) -> np.ndarray:
        """Readings available once the train has left ``station``, shape (K, station)."""
        if not 0 <= station <= self.n_stations - 1:
            raise ValueError(f"station {station} outside 0..{self.n_stations - 1}")
        return self.measurements[:, :station]


def sample_boarding(cfg: LineConfig, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson draw per (car, flat ODM index), shape (K, P)."""
    return rng.poisson(car_level_rates(cfg)).astype(np.int64)


def apc_from_noise(trace: FlowTrace, apc: ApcModel, noise: np.ndarray) -> np.ndarray:
    """Readings of o_2..o_M given standard-normal draws of shape (K, M - 1)."""
    truth = trace.onboard[:, 1:].astype(float)
    if noise.shape != truth.shape:
        raise ValueError(f"noise shape {noise.shape} does not match {truth.shape}")
    return truth + apc.bias + apc.noise_sigma * noise


def apc_measure(trace: FlowTrace, apc: ApcModel, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal((trace.n_cars, trace.n_stations - 1))
    return apc_from_noise(trace, apc, noise)


def run_scenario(cfg: LineConfig, apc: ApcModel, master_seed: int, run_index: int = 0) -> SimRun:
    odms = sample_boarding(cfg, derive_rng(master_seed, Stream.BOARDING, run_index))
    trace = flow_accounting(odms, cfg.n_stations)
    measurements = apc_measure(trace, apc, derive_rng(master_seed, Stream.APC, run_index))
    logger.debug("run %d: %d passengers boarded", run_index, int(trace.boarded.sum()))
    return SimRun(master_seed, run_index, odms, trace, measurements)


# --------------------------------------------------------------------------- export


def simrun_frame(run: SimRun) -> pd.DataFrame:
    """One row per (car, station); the APC column holds the reading of that row's ``onboard``."""
    K, M = run.n_cars, run.n_stations
    apc = np.full((K, M), np.nan)
    apc[:, 1:] = run.measurements
    t = run.trace
    return pd.DataFrame({
        "car": np.repeat(np.arange(1, K + 1), M),
        "station": np.tile(np.arange(1, M + 1), K),
        "boarded": t.boarded.ravel(),
        "alighted": t.alighted.ravel(),
        "onboard": t.onboard.ravel(),
        "crowding": t.crowding.ravel(),
        "apc_measurement": apc.ravel(),
    })


def odm_frame(run: SimRun) -> pd.DataFrame:
    index = OdmIndex(run.n_stations)
    K, P = run.odms.shape
    return pd.DataFrame({
        "car": np.repeat(np.arange(1, K + 1), P),
        "origin": np.tile(index.origins, K),
        "destination": np.tile(index.destinations, K),
        "count": run.odms.ravel(),
    })


def load_simrun(directory: str | Path, master_seed: Optional[int] = None, run_index: int = 0) -> SimRun:
    """Rebuild a SimRun from ``simrun.csv`` and ``odm.csv`` written by the simulate command."""
    directory = Path(directory)
    odm = pd.read_csv(directory / ODM_FILE)
    flow = pd.read_csv(directory / SIMRUN_FILE).sort_values(["car", "station"])
    n_stations = int(odm["destination"].max())
    n_cars = int(odm["car"].max())
    index = OdmIndex(n_stations)
    odms = np.zeros((n_cars, index.size), dtype=np.int64)
    for car, origin, dest, count in odm[["car", "origin", "destination", "count"]].itertuples(index=False):
        odms[int(car) - 1, index.flat(int(origin), int(dest))] = int(count)
    trace = flow_accounting(odms, n_stations)

    onboard = flow["onboard"].to_numpy().reshape(n_cars, n_stations)
    if not np.array_equal(onboard, trace.onboard):
        raise ValueError(f"{directory}: onboard counts in {SIMRUN_FILE} disagree with {ODM_FILE}")
    apc = flow["apc_measurement"].to_numpy(dtype=float).reshape(n_cars, n_stations)
    return SimRun(master_seed, run_index, odms, trace, apc[:, 1:])
