"""
Monte Carlo evaluation of the crowding predictor.

Each run simulates one line traversal, re-estimates every car's ODM after each
station and compares predicted against true crowding differences between all
ordered car pairs. The truth of run r (boardings and the standard-normal APC
noise) is shared by every noise level, so the levels differ only in sigma.

A lookahead run instead fixes one target station and forecasts it from the
readings through each earlier station.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import AppConfig, ApcModel
from .estimator import DistortionLevel, PriorSpec, distort_prior, estimate_at_station, prior_for_car, prior_prediction
from .randomness import Stream, derive_rng
from .simulator import apc_from_noise, sample_boarding
from .transit import FlowTrace, flow_accounting

logger = logging.getLogger(__name__)

PAIRWISE_COLUMNS = ["run", "station", "k", "kprime", "true_diff", "pred_diff"]
BOX_COLUMNS = ["station", "bin_lo", "bin_hi", "q1", "median", "q3", "whisker_lo", "whisker_hi", "n"]


def sigma_key(sigma: float) -> str:
    return f"{sigma:g}"


@dataclass(frozen=True)
class ExperimentSpec:
    config: AppConfig
    master_seed: int
    n_runs: int
    sigmas: tuple[float, ...]
    distortion: DistortionLevel = "none"
    workers: int = 1
    progress: bool = False

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError(f"n_runs must be >= 1, got {self.n_runs}")
        if not self.sigmas or any(s <= 0 for s in self.sigmas):
            raise ValueError(f"sigmas must be a non-empty list of positive values, got {self.sigmas}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    @classmethod
    def from_config(cls, config: AppConfig, master_seed: int, **overrides) -> "ExperimentSpec":
        mc = config.montecarlo
        values = dict(
            n_runs=mc.n_runs,
            sigmas=tuple(mc.sigmas),
            distortion=mc.distortion,
            workers=mc.workers,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        values["sigmas"] = tuple(values["sigmas"])
        return cls(config=config, master_seed=master_seed, **values)


@dataclass(frozen=True)
class PairwiseRecord:
    run: int
    station: int
    k: int
    kprime: int
    true_diff: float
    pred_diff: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PAIRWISE_COLUMNS}


def pairwise_records(run: int, station: int, omega_true, omega_hat) -> list[PairwiseRecord]:
    """Every ordered pair of distinct cars; cars are 1-based."""
    omega_true = np.asarray(omega_true, dtype=float)
    omega_hat = np.asarray(omega_hat, dtype=float)
    n = omega_true.size
    return [
        PairwiseRecord(
            run, station, k + 1, kp + 1,
            float(omega_true[k] - omega_true[kp]),
            float(omega_hat[k] - omega_hat[kp]),
        )
        for k in range(n) for kp in range(n) if k != kp
    ]


def records_frame(records: Iterable[PairwiseRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.as_dict() for r in records], columns=PAIRWISE_COLUMNS)


def _diffs(records) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(records, pd.DataFrame):
        return records["true_diff"].to_numpy(float), records["pred_diff"].to_numpy(float)
    records = list(records)
    return (np.array([r.true_diff for r in records], dtype=float),
            np.array([r.pred_diff for r in records], dtype=float))


def sign_accuracy(records, threshold: float) -> Optional[float]:
    """
    Fraction of records with |true_diff| >= threshold whose predicted sign is right.

    A zero predicted difference never counts as right. Returns None when no
    record reaches the threshold.
    """
    true, pred = _diffs(records)
    mask = np.abs(true) >= threshold
    if not mask.any():
        return None
    return float(np.mean(true[mask] * pred[mask] > 0))


def box_stats(values) -> tuple[float, float, float, float, float]:
    """(whisker_lo, q1, median, q3, whisker_hi) with whiskers at the last datum within 1.5 IQR."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("box_stats needs at least one value")
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    whisker_lo = values[values >= q1 - 1.5 * iqr].min()
    whisker_hi = values[values <= q3 + 1.5 * iqr].max()
    return float(whisker_lo), float(q1), float(median), float(q3), float(whisker_hi)


def box_summary(records: pd.DataFrame, bin_width: float = 5.0) -> pd.DataFrame:
    """Box statistics of pred_diff per station and true_diff bin; bins are centred on multiples of the width."""
    if records.empty:
        return pd.DataFrame(columns=BOX_COLUMNS)
    centre = bin_width * np.floor(records["true_diff"].to_numpy(float) / bin_width + 0.5)
    binned = records.assign(bin_lo=centre - bin_width / 2)
    rows = []
    for (station, lo), group in binned.groupby(["station", "bin_lo"], sort=True):
        wl, q1, med, q3, wh = box_stats(group["pred_diff"].to_numpy(float))
        rows.append({
            "station": int(station), "bin_lo": float(lo), "bin_hi": float(lo + bin_width),
            "q1": q1, "median": med, "q3": q3, "whisker_lo": wl, "whisker_hi": wh, "n": len(group),
        })
    return pd.DataFrame(rows, columns=BOX_COLUMNS)


def mean_abs_error(errors: dict[int, list[float]]) -> dict[int, float]:
    return {station: float(np.mean(values)) for station, values in sorted(errors.items()) if values}


@dataclass
class RunOutcome:
    run: int
    records: dict[float, list[PairwiseRecord]] = field(default_factory=dict)
    errors: dict[float, dict[int, list[float]]] = field(default_factory=dict)
    prior_errors: dict[int, list[float]] = field(default_factory=dict)
    covered: dict[float, list[bool]] = field(default_factory=dict)
    ess: dict[float, dict[int, list[float]]] = field(default_factory=dict)


@dataclass
class _RunSetup:
    trace: FlowTrace
    noise: np.ndarray
    priors: list[PriorSpec]


def _mcmc_rng(master_seed: int, run: int, station: int, car: int) -> np.random.Generator:
    return derive_rng(master_seed, Stream.MCMC, run, station, car)


def _run_setup(spec: ExperimentSpec, run: int) -> _RunSetup:
    cfg = spec.config
    line = cfg.line
    seed = spec.master_seed
    # Same streams as simulator.run_scenario, so run r reproduces the simulate command.
    odms = sample_boarding(line, derive_rng(seed, Stream.BOARDING, run))
    trace = flow_accounting(odms, line.n_stations)
    noise = derive_rng(seed, Stream.APC, run).standard_normal((line.n_cars, line.n_stations - 1))
    priors = [
        distort_prior(prior_for_car(line, k), spec.distortion, derive_rng(seed, Stream.DISTORTION, run, k), cfg.distortion)
        for k in range(1, line.n_cars + 1)
    ]
    return _RunSetup(trace, noise, priors)


def simulate_run(spec: ExperimentSpec, run: int) -> RunOutcome:
    cfg = spec.config
    line = cfg.line
    M = line.n_stations
    setup = _run_setup(spec, run)
    trace, priors = setup.trace, setup.priors

    outcome = RunOutcome(run)
    # The terminal station is skipped: crowding there is zero for every ODM.
    stations = range(1, M - 1)
    for j in stations:
        truth = trace.crowding[:, j]
        baseline = np.array([prior_prediction(p, j + 1, M).omega_hat for p in priors])
        outcome.prior_errors[j + 1] = np.abs(baseline - truth).tolist()

    for sigma in spec.sigmas:
        apc = ApcModel(noise_sigma=sigma, bias=cfg.apc.bias)
        measurements = apc_from_noise(trace, apc, setup.noise)
        records, errors, covered, ess = [], {}, [], {}
        for j in stations:
            estimate = estimate_at_station(
                measurements, j, line, apc, priors, cfg.mcmc, partial(_mcmc_rng, spec.master_seed, run, j)
            )
            truth = trace.crowding[:, j]
            records.extend(pairwise_records(run, j + 1, truth, estimate.omega_hat))
            errors[j + 1] = np.abs(estimate.omega_hat - truth).tolist()
            covered.extend(bool(p.omega_lo <= t <= p.omega_hi) for p, t in zip(estimate.predictions, truth))
            ess[j + 1] = estimate.effective_sample_sizes()
        outcome.records[sigma] = records
        outcome.errors[sigma] = errors
        outcome.covered[sigma] = covered
        outcome.ess[sigma] = ess
    return outcome


def _check_target(n_stations: int, target: int):
    if not 2 <= target <= n_stations - 1:
        raise ValueError(f"target station {target} outside 2..{n_stations - 1}")


def lookahead_errors(spec: ExperimentSpec, target: int, run: int) -> list[dict]:
    """
    Absolute errors of crowding predicted at the fixed ``target`` station from
    readings through each earlier station; station 0 is the prior-only forecast.
    """
    cfg = spec.config
    line = cfg.line
    _check_target(line.n_stations, target)
    setup = _run_setup(spec, run)
    truth = setup.trace.crowding[:, target - 1]
    rows = []
    for sigma in spec.sigmas:
        apc = ApcModel(noise_sigma=sigma, bias=cfg.apc.bias)
        measurements = apc_from_noise(setup.trace, apc, setup.noise)
        for j in range(target):
            estimate = estimate_at_station(
                measurements, j, line, apc, setup.priors, cfg.mcmc,
                partial(_mcmc_rng, spec.master_seed, run, j), target=target,
            )
            errors = np.abs(estimate.omega_hat - truth)
            rows.extend(
                {"run": run, "sigma": sigma, "through": j, "car": k + 1, "abs_error": float(e)}
                for k, e in enumerate(errors)
            )
    return rows


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    pairwise: dict[float, pd.DataFrame]
    boxes: dict[float, pd.DataFrame]
    metrics: dict


def aggregate(spec: ExperimentSpec, outcomes: Sequence[RunOutcome]) -> ExperimentResult:
    """Fold run outcomes in run-id order into record tables, box summaries and metrics."""
    outcomes = sorted(outcomes, key=lambda o: o.run)
    thresholds = list(spec.config.montecarlo.thresholds)
    pairwise, boxes = {}, {}
    accuracy, n_pairs, mae, coverage, ess = {}, {}, {}, {}, {}
    for sigma in spec.sigmas:
        frame = records_frame(r for o in outcomes for r in o.records[sigma])
        pairwise[sigma] = frame
        boxes[sigma] = box_summary(frame, spec.config.montecarlo.bin_width)
        key = sigma_key(sigma)
        accuracy[key] = {sigma_key(t): sign_accuracy(frame, t) for t in thresholds}
        n_pairs[key] = {sigma_key(t): int((frame["true_diff"].abs() >= t).sum()) for t in thresholds}
        merged: dict[int, list[float]] = {}
        for o in outcomes:
            for station, errs in o.errors[sigma].items():
                merged.setdefault(station, []).extend(errs)
        mae[key] = {str(s): v for s, v in mean_abs_error(merged).items()}
        covered = [c for o in outcomes for c in o.covered[sigma]]
        coverage[key] = float(np.mean(covered)) if covered else None
        per_station: dict[int, list[float]] = {}
        for o in outcomes:
            for station, values in o.ess[sigma].items():
                per_station.setdefault(station, []).extend(values)
        ess[key] = {str(s): float(np.median(v)) for s, v in sorted(per_station.items()) if v}

    prior_merged: dict[int, list[float]] = {}
    for o in outcomes:
        for station, errs in o.prior_errors.items():
            prior_merged.setdefault(station, []).extend(errs)

    metrics = {
        "master_seed": spec.master_seed,
        "n_runs": spec.n_runs,
        "distortion": spec.distortion,
        "sigmas": [sigma_key(s) for s in spec.sigmas],
        "thresholds": [sigma_key(t) for t in thresholds],
        "sign_accuracy": accuracy,
        "n_qualifying_pairs": n_pairs,
        "mean_abs_error": mae,
        "prior_mean_abs_error": {str(s): v for s, v in mean_abs_error(prior_merged).items()},
        "interval_coverage": coverage,
        "median_effective_sample_size": ess,
    }
    return ExperimentResult(spec, pairwise, boxes, metrics)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    logger.info(
        "experiment: %d runs, sigmas %s, distortion %s, %d worker(s)",
        spec.n_runs, list(spec.sigmas), spec.distortion, spec.workers,
    )
    worker = partial(simulate_run, spec)
    runs = range(spec.n_runs)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(tqdm(pool.map(worker, runs), total=spec.n_runs, desc="runs", disable=not spec.progress))
    else:
        outcomes = [worker(r) for r in tqdm(runs, desc="runs", disable=not spec.progress)]
    return aggregate(spec, outcomes)


LOOKAHEAD_COLUMNS = ["run", "sigma", "through", "car", "abs_error"]


def run_lookahead(spec: ExperimentSpec, target: int) -> pd.DataFrame:
    """``lookahead_errors`` for every run of ``spec``, one row per (run, sigma, station, car)."""
    _check_target(spec.config.line.n_stations, target)
    worker = partial(lookahead_errors, spec, target)
    runs = range(spec.n_runs)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(tqdm(pool.map(worker, runs), total=spec.n_runs, desc="runs", disable=not spec.progress))
    else:
        chunks = [worker(r) for r in tqdm(runs, desc="runs", disable=not spec.progress)]
    return pd.DataFrame([row for chunk in chunks for row in chunk], columns=LOOKAHEAD_COLUMNS)
