from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from crowding_core import __version__
from crowding_core.config import CONFIG, AppConfig, ApcModel, ConfigError, config_digest, load_config
from crowding_core.estimator import SamplerError, distort_prior, estimate_at_station, prior_for_car, prior_prediction
from crowding_core.harness import ExperimentSpec, run_experiment, run_lookahead, sigma_key
from crowding_core.randomness import Stream, derive_rng
from crowding_core.reports import RunManifest, read_spectrum, spectrum_frame, write_csv, write_json
from crowding_core.simulator import ODM_FILE, SIMRUN_FILE, load_simrun, odm_frame, run_scenario, simrun_frame
from crowding_core.vibration import (
    SingularSystemError,
    Spectrum,
    carbody_accel_psd,
    estimate_passenger_count,
    estimate_passenger_count_two_dof,
    frequency_grid,
    modal_basis,
    spectral_peak,
    track_psd,
    two_dof_accel_psd,
    two_dof_response,
)

logger = logging.getLogger("crowding")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
STOCHASTIC = {"simulate", "estimate", "mc"}
# Bands around the rigid-body bounce and the first bending mode.
PEAK_BANDS = ((0.5, 2.0), (7.0, 14.0))
# Arguments that do not change output data.
UNRECORDED = {"func", "out", "log_level", "workers", "progress"}


# --------------------------------------------------------------------------- argument types


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected non-negative integers, got {text!r}")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {value}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON config file (defaults built in)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=_seed, default=None, help="master seed (overrides the config)")

    located = argparse.ArgumentParser(add_help=False)
    located.add_argument("--location", type=float, default=None, help="position x along the carbody in m (default L/2)")
    located.add_argument("--no-delays", action="store_true", help="feed all four wheels in phase")
    located.add_argument("--model", choices=["multi", "two-dof"], default="multi")

    parser = argparse.ArgumentParser(
        prog="crowding",
        description="Train-car crowding: carbody vibration models and Bayesian passenger-flow prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("modes", parents=[common], help="beam roots and modal frequencies")
    p.add_argument("--counts", type=_int_list, default=[0])
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("tf2", parents=[common], help="2-DOF |H(f)| per passenger count")
    p.add_argument("--counts", type=_int_list, default=[0, 50, 100, 150])
    p.set_defaults(func=cmd_tf2)

    p = sub.add_parser("psd", parents=[common, located], help="carbody acceleration PSD per passenger count")
    p.add_argument("--counts", type=_int_list, default=[0, 50, 100, 150])
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("track", parents=[common], help="track irregularity PSD")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("simulate", parents=[common, seeded], help="one simulated line traversal")
    p.add_argument("--sigma", type=float, default=None, help="APC noise standard deviation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common, seeded], help="posterior crowding predictions for one run")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--distortion", choices=["none", "moderate", "severe"], default="none")
    p.add_argument("--simrun", type=Path, default=None, help="directory written by the simulate command")
    p.add_argument("--station", type=_positive_int, default=None, help="last station to estimate after")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc", parents=[common, seeded], help="Monte Carlo experiment")
    p.add_argument("--runs", type=_positive_int, default=None)
    p.add_argument("--sigma", type=_float_list, default=None, help="comma-separated APC noise levels")
    p.add_argument("--distortion", choices=["none", "moderate", "severe"], default=None)
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--progress", action="store_true")
    p.add_argument(
        "--lookahead", type=_positive_int, default=None, metavar="STATION",
        help="also score crowding at STATION predicted from readings through each earlier station",
    )
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("estimate-load", parents=[common, located], help="passenger count from an observed PSD")
    p.add_argument("--observed", type=Path, required=True, help="CSV with frequency_hz,value")
    p.add_argument("--counts", type=_int_list, default=list(range(0, 151, 10)))
    p.set_defaults(func=cmd_estimate_load)
    return parser


# --------------------------------------------------------------------------- commands


def _location(args, cfg: AppConfig) -> float:
    return cfg.multi_dof.carbody_length / 2 if args.location is None else args.location


def _apc(cfg: AppConfig, sigma: Optional[float]) -> ApcModel:
    return cfg.apc if sigma is None else ApcModel(noise_sigma=sigma, bias=cfg.apc.bias)


def cmd_modes(args, cfg: AppConfig, seed, manifest: RunManifest):
    rows = []
    for count in args.counts:
        basis = modal_basis(cfg.multi_dof, count)
        modes = zip(basis.roots, basis.wavenumbers, basis.natural_frequencies, basis.damping_ratios)
        for i, (lam, beta, omega, xi) in enumerate(modes, start=3):
            rows.append({
                "count": count, "mode": i, "lambda": lam, "beta_per_m": beta,
                "omega_rad_s": omega, "frequency_hz": omega / (2 * math.pi), "damping_ratio": xi,
            })
    columns = ["count", "mode", "lambda", "beta_per_m", "omega_rad_s", "frequency_hz", "damping_ratio"]
    manifest.record(args.out, write_csv(pd.DataFrame(rows, columns=columns), args.out / "modes.csv"))


def cmd_tf2(args, cfg: AppConfig, seed, manifest: RunManifest):
    freqs = frequency_grid(cfg.tf2_grid)
    wide = {"frequency_hz": freqs}
    for count in args.counts:
        h = two_dof_response(cfg.two_dof, count, freqs)
        wide[f"count_{count}"] = np.abs(h)
        path = write_csv(spectrum_frame(Spectrum(freqs, h)), args.out / f"tf2_complex_count_{count}.csv")
        manifest.record(args.out, path)
    manifest.record(args.out, write_csv(pd.DataFrame(wide), args.out / "tf2.csv"))


def cmd_psd(args, cfg: AppConfig, seed, manifest: RunManifest):
    freqs = frequency_grid(cfg.grid)
    x = _location(args, cfg)
    peaks = []
    for count in args.counts:
        if args.model == "two-dof":
            spectrum = two_dof_accel_psd(cfg.two_dof, cfg.track, count, freqs)
        else:
            spectrum = carbody_accel_psd(cfg.multi_dof, cfg.track, count, x, freqs, delays=not args.no_delays)
        manifest.record(args.out, write_csv(spectrum_frame(spectrum), args.out / f"psd_count_{count}.csv"))
        for lo, hi in PEAK_BANDS:
            f_peak, value = spectral_peak(spectrum, (lo, hi))
            peaks.append({"count": count, "band_lo": lo, "band_hi": hi, "peak_hz": f_peak, "peak_value": value})
    manifest.record(args.out, write_csv(pd.DataFrame(peaks), args.out / "psd_peaks.csv"))


def cmd_track(args, cfg: AppConfig, seed, manifest: RunManifest):
    freqs = frequency_grid(cfg.grid)
    spectrum = Spectrum(freqs, track_psd(cfg.track, freqs))
    manifest.record(args.out, write_csv(spectrum_frame(spectrum), args.out / "track_psd.csv"))


def cmd_simulate(args, cfg: AppConfig, seed, manifest: RunManifest):
    run = run_scenario(cfg.line, _apc(cfg, args.sigma), seed)
    manifest.record(args.out, write_csv(simrun_frame(run), args.out / SIMRUN_FILE))
    manifest.record(args.out, write_csv(odm_frame(run), args.out / ODM_FILE))


def _mcmc_rng(seed: int, run: int, station: int, car: int):
    return derive_rng(seed, Stream.MCMC, run, station, car)


def cmd_estimate(args, cfg: AppConfig, seed, manifest: RunManifest):
    line = cfg.line
    apc = _apc(cfg, args.sigma)
    if args.simrun is not None:
        run = load_simrun(args.simrun, seed)
        if (run.n_cars, run.n_stations) != (line.n_cars, line.n_stations):
            raise ValueError(
                f"{args.simrun}: run has {run.n_cars} cars and {run.n_stations} stations, "
                f"config has {line.n_cars} and {line.n_stations}"
            )
    else:
        run = run_scenario(line, apc, seed)
    M = line.n_stations
    last = M - 1 if args.station is None else args.station
    if not 1 <= last <= M - 1:
        raise ValueError(f"--station must be in 1..{M - 1}, got {last}")

    priors = [
        distort_prior(prior_for_car(line, k), args.distortion, derive_rng(seed, Stream.DISTORTION, run.run_index, k), cfg.distortion)
        for k in range(1, line.n_cars + 1)
    ]
    rows, stations = [], {}
    for j in range(1, last + 1):
        est = estimate_at_station(
            run.measurements_through(j), j, line, apc, priors, cfg.mcmc,
            partial(_mcmc_rng, seed, run.run_index, j),
        )
        truth = run.trace.crowding[:, j]
        for k, pred in enumerate(est.predictions):
            rows.append({
                "car": k + 1, "station": j + 1, "omega_hat": pred.omega_hat,
                "omega_lo": pred.omega_lo, "omega_hi": pred.omega_hi, "omega_true": int(truth[k]),
            })
        stations[str(j + 1)] = {
            "acceptance_rates": est.acceptance_rates(),
            "effective_sample_sizes": est.effective_sample_sizes(),
            "omega_map": [p.omega_map for p in est.predictions],
            "prior_omega_hat": [prior_prediction(p, j + 1, M).omega_hat for p in priors],
        }
    manifest.record(args.out, write_csv(pd.DataFrame(rows), args.out / "posterior.csv"))
    summary = {"sigma": apc.noise_sigma, "distortion": args.distortion, "master_seed": seed, "stations": stations}
    manifest.record(args.out, write_json(summary, args.out / "posterior_summary.json"))


def cmd_mc(args, cfg: AppConfig, seed, manifest: RunManifest):
    spec = ExperimentSpec.from_config(
        cfg, seed,
        n_runs=args.runs, sigmas=args.sigma, distortion=args.distortion,
        workers=args.workers, progress=args.progress,
    )
    lookahead = None if args.lookahead is None else run_lookahead(spec, args.lookahead)
    result = run_experiment(spec)
    for sigma in spec.sigmas:
        sub = args.out / f"sigma_{sigma_key(sigma)}"
        manifest.record(args.out, write_csv(result.pairwise[sigma], sub / "pairwise.csv"))
        manifest.record(args.out, write_csv(result.boxes[sigma], sub / "box_summary.csv"))
    metrics = dict(result.metrics)
    if lookahead is not None:
        manifest.record(args.out, write_csv(lookahead, args.out / "lookahead.csv"))
        means = lookahead.groupby(["sigma", "through"])["abs_error"].mean()
        metrics["lookahead"] = {
            "target": args.lookahead,
            "mean_abs_error": {
                sigma_key(s): {str(j): float(means[(s, j)]) for j in range(args.lookahead)} for s in spec.sigmas
            },
        }
    manifest.record(args.out, write_json(metrics, args.out / "metrics.json"))


def cmd_estimate_load(args, cfg: AppConfig, seed, manifest: RunManifest):
    observed = read_spectrum(args.observed)
    if args.model == "two-dof":
        estimate = estimate_passenger_count_two_dof(observed, cfg.two_dof, cfg.track, args.counts)
    else:
        x = _location(args, cfg)
        estimate = estimate_passenger_count(
            observed, cfg.multi_dof, cfg.track, x, args.counts, delays=not args.no_delays
        )
    frame = pd.DataFrame({"count": list(estimate.residuals), "residual": list(estimate.residuals.values())})
    manifest.record(args.out, write_csv(frame, args.out / "load_estimate.csv"))
    payload = {"count": estimate.count, "model": args.model, "observed": args.observed.name}
    manifest.record(args.out, write_json(payload, args.out / "load_estimate.json"))


# --------------------------------------------------------------------------- dispatch


def _configure_logging(level: Optional[str]):
    level = level or os.getenv("CROWDING_LOG_LEVEL", "WARNING")
    logging.basicConfig(format=LOG_FORMAT)
    logging.getLogger().setLevel(level.upper())


def _resolve_seed(args, cfg: AppConfig) -> Optional[int]:
    if args.command not in STOCHASTIC:
        return None
    if args.seed is not None:
        return args.seed
    seed = cfg.montecarlo.seed if args.command == "mc" and cfg.montecarlo.seed is not None else cfg.mcmc.seed
    if seed is None:
        raise ValueError(f"{args.command} needs a seed: pass --seed or set mcmc.seed in the config")
    return seed


def _arguments(args) -> dict:
    recorded = {}
    for name, value in sorted(vars(args).items()):
        if name in UNRECORDED:
            continue
        recorded[name] = value.as_posix() if isinstance(value, Path) else value
    return recorded


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit status."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        _configure_logging(args.log_level)
        cfg = CONFIG if args.config is None else load_config(args.config)
        seed = _resolve_seed(args, cfg)
        manifest = RunManifest(
            subcommand=args.command,
            config_sha256=config_digest(args.config),
            master_seed=seed,
            version=__version__,
            arguments=_arguments(args),
        )
        args.func(args, cfg, seed, manifest)
        manifest.write(args.out)
    except (ConfigError, ValueError, OSError, SingularSystemError, SamplerError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(dispatch())
