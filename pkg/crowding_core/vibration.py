"""
Carbody vertical vibration versus passenger load.

Two models are provided:

- a 2-DOF quarter car (carbody on bogie on one track contact point), evaluated
  as a rational transfer function;
- a flexible Euler-Bernoulli carbody beam on two bogies with four wheel
  inputs, assembled as ``M y'' + C y' + K y = D_w z_w + D_dw z_w'`` and solved
  in the frequency domain.

Passengers enter both models only through the carbody mass, which is what makes
the acceleration spectrum usable as a passenger counter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import signal
from scipy.optimize import brentq

from .config import FrequencyGrid, MultiDofParams, TrackModel, TwoDofParams

logger = logging.getLogger(__name__)


class SingularSystemError(RuntimeError):
    """The dynamic stiffness matrix cannot be solved at some frequency."""

    def __init__(self, frequency_hz: float):
        super().__init__(f"singular system matrix at {frequency_hz:.6g} Hz")
        self.frequency_hz = frequency_hz


@dataclass(frozen=True)
class Spectrum:
    """Values over a strictly increasing frequency axis (Hz)."""
    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values)
        if f.ndim != 1 or v.shape != f.shape:
            raise ValueError(f"frequencies {f.shape} and values {v.shape} must be matching 1-D arrays")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)


def frequency_grid(settings: FrequencyGrid) -> np.ndarray:
    if settings.spacing == "log":
        return np.geomspace(settings.f_min_hz, settings.f_max_hz, settings.n_points)
    return np.linspace(settings.f_min_hz, settings.f_max_hz, settings.n_points)


def spectral_peak(spectrum: Spectrum, band: tuple[float, float]) -> tuple[float, float]:
    """Frequency and value of the largest spectrum value inside ``band``."""
    lo, hi = band
    mask = (spectrum.frequencies >= lo) & (spectrum.frequencies <= hi)
    if not mask.any():
        raise ValueError(f"no spectrum points inside band [{lo}, {hi}] Hz")
    mags = np.abs(spectrum.values[mask])
    i = int(np.argmax(mags))
    return float(spectrum.frequencies[mask][i]), float(mags[i])


# --------------------------------------------------------------------------- 2-DOF


def two_dof_coefficients(params: TwoDofParams, passenger_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of z_c/z_o, highest power of s first."""
    if passenger_count < 0:
        raise ValueError(f"passenger_count must be >= 0, got {passenger_count}")
    mc = params.carbody_mass + passenger_count * params.mass_per_passenger
    mb = params.bogie_mass
    kc, kb = params.secondary_stiffness, params.primary_stiffness
    cc, cb = params.secondary_damping, params.primary_damping
    num = np.array([cc * cb, cc * kb + cb * kc, kc * kb])
    den = np.array([
        mb * mc,
        cc * mb + (cc + cb) * mc,
        cc * cb + kc * mb + (kb + kc) * mc,
        cc * kb + cb * kc,
        kc * kb,
    ])
    return num, den


def two_dof_response(params: TwoDofParams, passenger_count: int, freqs: Sequence[float] | np.ndarray) -> np.ndarray:
    """H(j 2 pi f) for every f; negative f evaluates the conjugate branch."""
    num, den = two_dof_coefficients(params, passenger_count)
    _, h = signal.freqs(num, den, worN=2 * np.pi * np.asarray(freqs, dtype=float))
    return h


def two_dof_transfer(params: TwoDofParams, passenger_count: int, f: float) -> complex:
    if f < 0:
        raise ValueError(f"frequency must be >= 0, got {f}")
    return complex(two_dof_response(params, passenger_count, [f])[0])


def two_dof_accel_psd(params: TwoDofParams, track: TrackModel, passenger_count: int, freqs) -> Spectrum:
    freqs = np.asarray(freqs, dtype=float)
    accel = (2 * np.pi * freqs) ** 2 * np.abs(two_dof_response(params, passenger_count, freqs))
    return Spectrum(freqs, accel**2 * track_psd(track, freqs))


# --------------------------------------------------------------------------- beam modes


def _frequency_equation(lam: float) -> float:
    # Same roots as 1 - cosh(lam) cos(lam), without the cosh amplification.
    return math.cos(lam) - 1.0 / math.cosh(lam)


def beam_mode_roots(n: int) -> list[float]:
    """First ``n`` positive roots of 1 - cosh(lam) cos(lam) = 0, ascending."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    roots = []
    for k in range(1, n + 1):
        # The k-th root lies within pi/4 of (k + 1/2) pi.
        center = (k + 0.5) * math.pi
        roots.append(brentq(_frequency_equation, center - math.pi / 4, center + math.pi / 4, xtol=1e-15))
    return roots


def modal_frequencies(params: MultiDofParams, roots: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Natural frequencies (rad/s) and damping ratios of the flexible modes."""
    beta4 = (np.asarray(roots, dtype=float) / params.carbody_length) ** 4
    rho = params.mass_per_length
    omega = np.sqrt(params.bending_stiffness * beta4 / rho)
    xi = params.internal_damping * beta4 / (2 * rho * omega)
    return omega, xi


def _scalar_or_array(values):
    values = np.asarray(values)
    return float(values) if values.ndim == 0 else values


@dataclass(frozen=True)
class ModalBasis:
    """Carbody modes: 1 bounce, 2 pitch, 3.. free-free bending."""
    length: float
    roots: np.ndarray
    natural_frequencies: np.ndarray
    damping_ratios: np.ndarray

    @property
    def n_modes(self) -> int:
        return 2 + len(self.roots)

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.roots / self.length

    def shape(self, i: int, x):
        if not 1 <= i <= self.n_modes:
            raise ValueError(f"mode index {i} outside 1..{self.n_modes}")
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > self.length):
            raise ValueError(f"position {x} outside [0, {self.length}]")
        if i == 1:
            return _scalar_or_array(np.ones_like(x))
        if i == 2:
            return _scalar_or_array(self.length / 2 - x)
        lam = float(self.roots[i - 3])
        bx = lam / self.length * x
        denom = math.sinh(lam) - math.sin(lam)
        sigma = (math.cosh(lam) - math.cos(lam)) / denom
        one_minus = (math.cos(lam) - math.sin(lam) - math.exp(-lam)) / denom
        one_plus = (math.exp(lam) - math.sin(lam) - math.cos(lam)) / denom
        y = np.cos(bx) - sigma * np.sin(bx) + 0.5 * one_minus * np.exp(bx) + 0.5 * one_plus * np.exp(-bx)
        return _scalar_or_array(y)

    def shapes_at(self, x: float) -> np.ndarray:
        """Row [Y_1(x), ..., Y_n(x)] used to project modal coordinates onto z(x)."""
        return np.array([float(self.shape(i, x)) for i in range(1, self.n_modes + 1)])


def modal_basis(params: MultiDofParams, passenger_count: int = 0) -> ModalBasis:
    loaded = params.loaded(passenger_count)
    roots = np.array(beam_mode_roots(loaded.n_flexible_modes)) if loaded.n_flexible_modes else np.zeros(0)
    omega, xi = modal_frequencies(loaded, roots)
    return ModalBasis(loaded.carbody_length, roots, omega, xi)


def mode_shape(basis: ModalBasis, i: int, x: float) -> float:
    return float(basis.shape(i, x))


# --------------------------------------------------------------------------- multi-DOF


@dataclass(frozen=True)
class SystemMatrices:
    """State y = [z_b, theta_b, q_3..q_n, z_t1, z_t2, theta_t1, theta_t2]."""
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    D_w: np.ndarray
    D_dw: np.ndarray
    basis: ModalBasis
    params: MultiDofParams = field(repr=False)

    @property
    def size(self) -> int:
        return self.M.shape[0]

    def wheel_positions(self) -> np.ndarray:
        l1, l2 = self.params.attachment_points
        lw = self.params.half_wheelbase
        return np.array([l1 - lw, l1 + lw, l2 - lw, l2 + lw])


def assemble_system(params: MultiDofParams, passenger_count: int) -> SystemMatrices:
    p = params.loaded(passenger_count)
    basis = modal_basis(params, passenger_count)
    nc = basis.n_modes
    n = nc + 4
    zt = (nc, nc + 1)
    th = (nc + 2, nc + 3)
    M = np.zeros((n, n))
    C = np.zeros((n, n))
    K = np.zeros((n, n))
    D_w = np.zeros((n, 4))
    D_dw = np.zeros((n, 4))

    # Carbody: generalised masses, bending stiffness and internal damping.
    M[0, 0] = p.carbody_mass
    M[1, 1] = p.carbody_pitch_inertia
    flex = np.arange(2, nc)
    M[flex, flex] = p.carbody_mass
    C[flex, flex] = p.carbody_mass * 2 * basis.damping_ratios * basis.natural_frequencies
    K[flex, flex] = p.carbody_mass * basis.natural_frequencies**2

    # Secondary suspension between carbody point l_b and bogie b.
    ks, cs = p.secondary_stiffness, p.secondary_damping
    for l_att, bogie in zip(p.attachment_points, zt):
        phi = basis.shapes_at(l_att)
        for mat, coef in ((K, ks), (C, cs)):
            mat[:nc, :nc] += coef * np.outer(phi, phi)
            mat[:nc, bogie] -= coef * phi
            mat[bogie, :nc] -= coef * phi
            mat[bogie, bogie] += coef

    # Bogie frames on the primary suspension, wheels (2b, 2b+1) as inputs.
    kp, cp, lw = p.primary_stiffness, p.primary_damping, p.half_wheelbase
    for b in range(2):
        z, t = zt[b], th[b]
        w1, w2 = 2 * b, 2 * b + 1
        M[z, z] = p.bogie_mass
        M[t, t] = p.bogie_pitch_inertia
        for mat, inp, coef in ((K, D_w, kp), (C, D_dw, cp)):
            mat[z, z] += 2 * coef
            mat[t, t] += 2 * coef * lw**2
            inp[z, w1] = coef
            inp[z, w2] = coef
            inp[t, w1] = -coef * lw
            inp[t, w2] = coef * lw

    logger.debug("assembled %dx%d system for %d passengers", n, n, passenger_count)
    return SystemMatrices(M, C, K, D_w, D_dw, basis, p)


def wheel_input(sys: SystemMatrices, freqs: np.ndarray, speed: Optional[float]) -> np.ndarray:
    """Per-frequency wheel input vector d; pure delays at ``speed``, in phase if None."""
    freqs = np.asarray(freqs, dtype=float)
    if speed is None:
        return np.ones((freqs.size, 4), dtype=complex)
    pos = sys.wheel_positions()
    delays = (pos - pos.min()) / speed
    return np.exp(-1j * 2 * np.pi * freqs[:, None] * delays[None, :])


def response_sweep(sys: SystemMatrices, x: float, freqs, speed: Optional[float] = None) -> np.ndarray:
    """Carbody acceleration at ``x`` per unit track displacement, one dense solve per frequency."""
    freqs = np.asarray(freqs, dtype=float)
    if np.any(freqs <= 0):
        raise ValueError("frequencies must be > 0")
    phi_x = sys.basis.shapes_at(x)
    w = 2 * np.pi * freqs
    s = 1j * w
    Z = (-(w**2))[:, None, None] * sys.M + s[:, None, None] * sys.C + sys.K
    D = sys.D_w[None, :, :] + s[:, None, None] * sys.D_dw[None, :, :]
    rhs = np.einsum("fij,fj->fi", D, wheel_input(sys, freqs, speed))
    try:
        Y = np.linalg.solve(Z, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for f, Zf in zip(freqs, Z):
            if np.linalg.matrix_rank(Zf) < Zf.shape[0]:
                raise SingularSystemError(float(f)) from None
        raise
    nc = sys.basis.n_modes
    return -(w**2) * (Y[:, :nc] @ phi_x)


def frequency_response(sys: SystemMatrices, x: float, f: float, speed: Optional[float] = None) -> complex:
    return complex(response_sweep(sys, x, [f], speed)[0])


def track_psd(track: TrackModel, f):
    """Vertical track irregularity PSD seen at train speed V, as a function of f (Hz)."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    w = 2 * np.pi * f
    V = track.speed
    oc2, or2 = track.cutoff_c**2, track.cutoff_r**2
    num = track.excitation_intensity * oc2 * V**3
    den = w**4 + (or2 + oc2) * V**2 * w**2 + or2 * oc2 * V**4
    return _scalar_or_array(num / den)


def carbody_accel_psd(
    params: MultiDofParams,
    track: TrackModel,
    passenger_count: int,
    x: float,
    freqs,
    delays: bool = True,
) -> Spectrum:
    freqs = np.asarray(freqs, dtype=float)
    sys = assemble_system(params, passenger_count)
    h = response_sweep(sys, x, freqs, track.speed if delays else None)
    return Spectrum(freqs, np.abs(h) ** 2 * track_psd(track, freqs))


# --------------------------------------------------------------------------- load estimation


@dataclass(frozen=True)
class LoadEstimate:
    count: int
    residuals: dict[int, float]

    def as_dict(self) -> dict:
        return {"count": self.count, "residuals": {str(c): r for c, r in self.residuals.items()}}


def fit_passenger_count(
    observed: Spectrum,
    model_psd: Callable[[int, np.ndarray], np.ndarray],
    count_grid: Sequence[int],
) -> LoadEstimate:
    """Grid search for the count whose model PSD best matches ``observed`` in log space."""
    if len(count_grid) == 0:
        raise ValueError("count_grid is empty")
    obs = np.asarray(observed.values)
    if np.iscomplexobj(obs) or np.any(~np.isfinite(obs)) or np.any(obs <= 0):
        raise ValueError("observed PSD must be real, finite and strictly positive")
    log_obs = np.log(obs)
    counts = sorted(set(int(c) for c in count_grid))
    residuals = {}
    for c in counts:
        model = np.asarray(model_psd(c, observed.frequencies))
        residuals[c] = float(np.sum((np.log(model) - log_obs) ** 2))
    # argmin keeps the first minimum, i.e. the smallest count on ties.
    best = counts[int(np.argmin([residuals[c] for c in counts]))]
    logger.info("load estimate %d passengers (residual %.3g)", best, residuals[best])
    return LoadEstimate(best, residuals)


def estimate_passenger_count(
    observed: Spectrum,
    params: MultiDofParams,
    track: TrackModel,
    x: float,
    count_grid: Sequence[int],
    delays: bool = True,
) -> LoadEstimate:
    def model(count, freqs):
        return carbody_accel_psd(params, track, count, x, freqs, delays).values

    return fit_passenger_count(observed, model, count_grid)


def estimate_passenger_count_two_dof(
    observed: Spectrum,
    params: TwoDofParams,
    track: TrackModel,
    count_grid: Sequence[int],
) -> LoadEstimate:
    def model(count, freqs):
        return two_dof_accel_psd(params, track, count, freqs).values

    return fit_passenger_count(observed, model, count_grid)
