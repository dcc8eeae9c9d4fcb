"""
Bayesian estimation of car-level ODMs from accumulated APC readings.

The posterior over a car's ODM entries combines independent Poisson priors
(the car-level rates) with a Gaussian likelihood of the on-board readings. It is
explored by a random-walk Metropolis-Hastings chain on the non-negative
integer lattice; the best state visited is the MAP estimate, and crowding at
the next station is predicted from the retained samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import poisson

from .config import ApcModel, DistortionScales, LineConfig, McmcSettings
from .transit import build_A_matrix, car_level_rates, crowding_row

logger = logging.getLogger(__name__)

DistortionLevel = Literal["none", "moderate", "severe"]
INTERVAL = (0.05, 0.95)


class SamplerError(RuntimeError):
    """The target density could not be evaluated."""


@dataclass(frozen=True)
class PriorSpec:
    rates: np.ndarray
    factors: Optional[np.ndarray] = None

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("prior rates must be finite and non-negative")
        object.__setattr__(self, "rates", rates)
        if self.factors is not None:
            factors = np.asarray(self.factors, dtype=float)
            if factors.shape != rates.shape or np.any(factors <= 0):
                raise ValueError("distortion factors must be positive and match the rates")
            object.__setattr__(self, "factors", factors)

    @property
    def effective_rates(self) -> np.ndarray:
        return self.rates if self.factors is None else self.rates * self.factors


def prior_for_car(cfg: LineConfig, k: int) -> PriorSpec:
    if not 1 <= k <= cfg.n_cars:
        raise ValueError(f"car {k} outside 1..{cfg.n_cars}")
    return PriorSpec(car_level_rates(cfg)[k - 1])


def distort_prior(
    prior: PriorSpec,
    level: DistortionLevel,
    rng: np.random.Generator,
    scales: DistortionScales = DistortionScales(),
) -> PriorSpec:
    """Multiply every rate by an independent lognormal factor exp(N(0, s^2))."""
    if level == "none":
        return prior
    try:
        s = {"moderate": scales.moderate, "severe": scales.severe}[level]
    except KeyError:
        raise ValueError(f"unknown distortion level {level!r}") from None
    factors = np.exp(rng.normal(0.0, s, size=prior.rates.shape))
    if prior.factors is not None:
        factors = factors * prior.factors
    return PriorSpec(prior.rates, factors)


class LogPosterior:
    """
    Unnormalised log posterior of one car's ODM given readings ``A b + noise``.

    Calling the object evaluates the full density; ``increment`` gives the exact
    change from moving one coordinate, which is what the sampler uses.
    """

    def __init__(self, A: np.ndarray, measurements: np.ndarray, sigma: float, prior: PriorSpec):
        if sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {sigma}")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        measurements = np.asarray(measurements, dtype=float).ravel()
        rates = prior.effective_rates
        if A.shape != (measurements.size, rates.size):
            raise ValueError(f"A has shape {A.shape}, expected ({measurements.size}, {rates.size})")
        self.A = A
        self.measurements = measurements
        self.sigma = float(sigma)
        self.rates = rates
        self.free_indices = np.flatnonzero(rates > 0)
        with np.errstate(divide="ignore"):
            self._log_rates = np.log(rates).tolist()
        self._inv_two_var = 1.0 / (2.0 * self.sigma**2)
        self.columns = [
            [(r, float(A[r, c])) for r in np.flatnonzero(A[:, c]).tolist()] for c in range(rates.size)
        ]

    def residual(self, b: np.ndarray) -> np.ndarray:
        return self.measurements - self.A @ b

    def __call__(self, b) -> float:
        b = np.asarray(b)
        if np.any(b < 0) or np.any((b > 0) & (self.rates == 0)):
            return -math.inf
        r = self.residual(b)
        log_lik = -float(r @ r) * self._inv_two_var
        log_prior = float(np.sum(xlogy(b, self.rates) - self.rates - gammaln(b + 1)))
        return log_lik + log_prior

    def increment(self, value: int, idx: int, step: int, residual: list[float]) -> float:
        """Change in log posterior when entry ``idx`` moves from ``value`` to ``value + step``."""
        d_prior = step * self._log_rates[idx] - (math.lgamma(value + step + 1) - math.lgamma(value + 1))
        d_sq = 0.0
        for r, a in self.columns[idx]:
            d_sq += step * a * (step * a - 2.0 * residual[r])
        return d_prior - d_sq * self._inv_two_var


def log_posterior(b, measurements: np.ndarray, A: np.ndarray, sigma: float, prior: PriorSpec) -> float:
    return LogPosterior(A, measurements, sigma, prior)(b)


@dataclass(frozen=True)
class CrowdingPrediction:
    station: int
    omega_hat: float
    omega_lo: float
    omega_hi: float
    omega_map: float
    omega_ess: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "station": self.station,
            "omega_hat": self.omega_hat,
            "omega_lo": self.omega_lo,
            "omega_hi": self.omega_hi,
            "omega_map": self.omega_map,
            "omega_ess": self.omega_ess,
        }


@dataclass
class PosteriorSummary:
    samples: np.ndarray
    best_state: np.ndarray
    best_log_posterior: float
    log_posterior_trace: np.ndarray
    acceptance_rate: float
    prediction: Optional[CrowdingPrediction] = None

    def as_dict(self) -> dict:
        return {
            "n_samples": int(self.samples.shape[0]),
            "best_state": self.best_state.tolist(),
            "best_log_posterior": self.best_log_posterior,
            "acceptance_rate": self.acceptance_rate,
            "prediction": None if self.prediction is None else self.prediction.as_dict(),
        }


def metropolis_hastings(
    init,
    target: Callable[[np.ndarray], float],
    settings: McmcSettings,
    rng: np.random.Generator,
) -> PosteriorSummary:
    """Random-walk MH on the non-negative integer lattice with +-{1..max_step} single-entry moves."""
    b = np.array(init, dtype=np.int64)
    if np.any(b < 0):
        raise ValueError("initial state must be non-negative")
    current = float(target(b))
    if math.isnan(current):
        raise SamplerError("target returned NaN at the initial state")
    if current == -math.inf:
        raise ValueError("initial state has zero posterior density")

    incremental = isinstance(target, LogPosterior)
    free = target.free_indices if incremental else np.arange(b.size)
    n = settings.iterations
    trace = np.empty(n)
    samples = []
    best, best_state = current, b.copy()
    accepted = 0

    if free.size == 0:
        trace.fill(current)
        samples = [b.copy() for _ in range(settings.burn_in, n, settings.thin)]
        return PosteriorSummary(np.array(samples), best_state, best, trace, 0.0)

    # Proposals and accept draws for the whole chain.
    picks = free[rng.integers(free.size, size=n)].tolist()
    steps = (rng.integers(1, settings.max_step + 1, size=n) * rng.choice((-1, 1), size=n)).tolist()
    log_u = np.log(rng.random(n)).tolist()

    state = b.tolist()
    residual = target.residual(b).tolist() if incremental else None
    for t in range(n):
        idx, step = picks[t], steps[t]
        value = state[idx]
        if value + step >= 0:
            if incremental:
                delta = target.increment(value, idx, step, residual)
                proposed = current + delta
            else:
                candidate = np.array(state, dtype=np.int64)
                candidate[idx] = value + step
                proposed = float(target(candidate))
                delta = proposed - current
            if math.isnan(proposed):
                raise SamplerError(f"target returned NaN at iteration {t}")
            if log_u[t] < delta:
                state[idx] = value + step
                current = proposed
                accepted += 1
                if incremental:
                    for r, a in target.columns[idx]:
                        residual[r] -= step * a
                if current > best:
                    best, best_state = current, np.array(state, dtype=np.int64)
        trace[t] = current
        if t >= settings.burn_in and (t - settings.burn_in) % settings.thin == 0:
            samples.append(list(state))

    summary = PosteriorSummary(
        samples=np.array(samples, dtype=np.int64),
        best_state=best_state,
        best_log_posterior=float(target(best_state)),
        log_posterior_trace=trace,
        acceptance_rate=accepted / n,
    )
    logger.debug("MH: %d iterations, acceptance %.3f, best %.3f", n, summary.acceptance_rate, best)
    return summary


def effective_sample_size(values) -> float:
    """
    Number of independent draws worth of ``values``: length over the integrated
    autocorrelation, summed up to the first negative lag.
    """
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 2:
        return float(n)
    centred = x - x.mean()
    acf = np.fft.irfft(np.abs(np.fft.rfft(centred, 2 * n)) ** 2, 2 * n)[:n]
    if acf[0] <= 0.0:
        return float(n)
    negative = np.flatnonzero(acf < 0.0)
    if negative.size:
        acf = acf[: negative[0]]
    tau = 2.0 * acf.sum() / acf[0] - 1.0
    return float(min(n, n / max(tau, 1e-12)))


def predict_crowding(summary: PosteriorSummary, station: int, n_stations: int) -> CrowdingPrediction:
    """Posterior median and central 90% interval of crowding after alighting at ``station``."""
    row = crowding_row(station, n_stations)
    omega = summary.samples @ row
    lo, hi = np.quantile(omega, INTERVAL)
    return CrowdingPrediction(
        station=station,
        omega_hat=float(np.median(omega)),
        omega_lo=float(lo),
        omega_hi=float(hi),
        omega_map=float(summary.best_state @ row),
        omega_ess=effective_sample_size(omega),
    )


def prior_prediction(prior: PriorSpec, station: int, n_stations: int) -> CrowdingPrediction:
    """Prediction from historical rates only: the crowding count is Poisson with the summed rate."""
    row = crowding_row(station, n_stations)
    rates = prior.effective_rates
    mu = float(rates @ row)
    mode = float(np.floor(rates) @ row)
    if mu == 0:
        return CrowdingPrediction(station, 0.0, 0.0, 0.0, 0.0)
    dist = poisson(mu)
    lo, hi = dist.ppf(INTERVAL)
    return CrowdingPrediction(station, float(dist.median()), float(lo), float(hi), mode)


@dataclass
class StationEstimate:
    """
    Estimates for every car once the train has left ``station``. Predictions are
    for ``station + 1`` unless a later target was asked for.
    """
    station: int
    predictions: list[CrowdingPrediction]
    summaries: list[Optional[PosteriorSummary]] = field(default_factory=list)

    @property
    def omega_hat(self) -> np.ndarray:
        return np.array([p.omega_hat for p in self.predictions])

    def acceptance_rates(self) -> list[Optional[float]]:
        return [None if s is None else s.acceptance_rate for s in self.summaries]

    def effective_sample_sizes(self) -> list[Optional[float]]:
        return [p.omega_ess for p in self.predictions]


def estimate_at_station(
    measurements: np.ndarray,
    station: int,
    cfg: LineConfig,
    apc: ApcModel,
    priors: Sequence[PriorSpec],
    settings: McmcSettings,
    rng_for_car: Callable[[int], np.random.Generator],
    target: Optional[int] = None,
) -> StationEstimate:
    """
    Re-estimate each car's ODM from readings after stations 1..``station`` and
    predict crowding at ``station + 1``, or at a later ``target`` station.

    ``measurements`` has one row per car and at least ``station`` columns; the
    known APC bias is removed before fitting.
    """
    M = cfg.n_stations
    if not 0 <= station <= M - 1:
        raise ValueError(f"station {station} outside 0..{M - 1}")
    if len(priors) != cfg.n_cars:
        raise ValueError(f"expected {cfg.n_cars} priors, got {len(priors)}")
    target_station = station + 1 if target is None else target
    if not station < target_station <= M:
        raise ValueError(f"target station {target_station} outside {station + 1}..{M}")

    if station == 0:
        predictions = [prior_prediction(p, target_station, M) for p in priors]
        return StationEstimate(station, predictions, [None] * cfg.n_cars)

    measurements = np.asarray(measurements, dtype=float)
    if measurements.shape[0] != cfg.n_cars or measurements.shape[1] < station:
        raise ValueError(f"measurements of shape {measurements.shape} do not cover station {station}")
    A = build_A_matrix(station + 1, M)
    predictions, summaries = [], []
    for k in range(1, cfg.n_cars + 1):
        prior = priors[k - 1]
        posterior = LogPosterior(A, measurements[k - 1, :station] - apc.bias, apc.noise_sigma, prior)
        init = np.floor(prior.effective_rates).astype(np.int64)
        summary = metropolis_hastings(init, posterior, settings, rng_for_car(k))
        summary.prediction = predict_crowding(summary, target_station, M)
        predictions.append(summary.prediction)
        summaries.append(summary)
    logger.debug("station %d: predicted crowding %s", station, [p.omega_hat for p in predictions])
    return StationEstimate(station, predictions, summaries)
