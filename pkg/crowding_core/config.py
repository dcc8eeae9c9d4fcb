from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import field
from pathlib import Path
from typing import Literal, Optional

from pydantic import (
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    TypeAdapter,
    ValidationError,
    model_validator,
)
from pydantic.dataclasses import dataclass

KMH_TO_MS = 1.0 / 3.6
CYCLES_TO_RAD = 2.0 * math.pi


class ConfigError(ValueError):
    """Raised when a configuration file is missing, unreadable or invalid."""


@dataclass(frozen=True)
class TwoDofParams:
    # Quarter-car: carbody (m_c) on bogie (m_b) on one track contact point.
    carbody_mass: PositiveFloat = 38000.0  # kg
    bogie_mass: PositiveFloat = 3000.0  # kg
    secondary_stiffness: PositiveFloat = 0.78e6  # k_c, N/m
    primary_stiffness: PositiveFloat = 0.55e6  # k_b, N/m
    # Printed as 30e6; plausibly a typo for 30e3. Override in the config file.
    secondary_damping: PositiveFloat = 30e6  # c_c, N*s/m
    primary_damping: PositiveFloat = 60e3  # c_b, N*s/m
    mass_per_passenger: PositiveFloat = 70.0  # kg


@dataclass(frozen=True)
class MultiDofParams:
    # Flexible carbody beam on two bogies, vertical plane only.
    carbody_mass: PositiveFloat = 28000.0  # m_b, kg
    carbody_pitch_inertia: PositiveFloat = 1.3e6  # I_b, kg*m^2
    bending_stiffness: PositiveFloat = 4.987e9  # EI, N*m^2
    internal_damping: PositiveFloat = 1.936e6  # muI, N*m^2*s
    carbody_length: PositiveFloat = 24.5  # L, m
    bogie_mass: PositiveFloat = 2500.0  # m_t, kg
    bogie_pitch_inertia: PositiveFloat = 1500.0  # I_t, kg*m^2
    half_bogie_distance: PositiveFloat = 8.75  # l_b, m
    half_wheelbase: PositiveFloat = 1.25  # l_w, m
    primary_stiffness: PositiveFloat = 2.4e6  # k_p, N/m
    secondary_stiffness: PositiveFloat = 0.5e6  # k_s, N/m
    # Printed as 30e6; plausibly a typo for 30e3. Override in the config file.
    primary_damping: PositiveFloat = 30e6  # c_p, N*s/m
    secondary_damping: PositiveFloat = 60e3  # c_s, N*s/m
    mass_per_passenger: PositiveFloat = 70.0  # kg
    n_flexible_modes: NonNegativeInt = 4

    @model_validator(mode="after")
    def _check_geometry(self) -> "MultiDofParams":
        if self.half_bogie_distance >= self.carbody_length / 2:
            raise ValueError("half_bogie_distance must be less than carbody_length / 2")
        if self.half_wheelbase >= self.half_bogie_distance:
            raise ValueError("half_wheelbase must be less than half_bogie_distance")
        return self

    @property
    def mass_per_length(self) -> float:
        return self.carbody_mass / self.carbody_length

    @property
    def attachment_points(self) -> tuple[float, float]:
        """Secondary suspension positions (l_1, l_2) measured from the carbody end."""
        half = self.carbody_length / 2
        return half - self.half_bogie_distance, half + self.half_bogie_distance

    def loaded(self, passenger_count: int) -> "MultiDofParams":
        """Return parameters with passengers spread uniformly along the carbody."""
        if passenger_count < 0:
            raise ValueError(f"passenger_count must be >= 0, got {passenger_count}")
        extra = passenger_count * self.mass_per_passenger
        scale = (self.carbody_mass + extra) / self.carbody_mass
        return dataclasses.replace(
            self,
            carbody_mass=self.carbody_mass * scale,
            carbody_pitch_inertia=self.carbody_pitch_inertia * scale,
        )


@dataclass(frozen=True)
class TrackModel:
    excitation_intensity: PositiveFloat = 1.080e-6  # A_v, m^2*rad/m
    cutoff_c: PositiveFloat = 0.8246 * CYCLES_TO_RAD  # Omega_c, rad/m
    cutoff_r: PositiveFloat = 0.0206 * CYCLES_TO_RAD  # Omega_r, rad/m
    speed: PositiveFloat = 50.0 * KMH_TO_MS  # V, m/s

    @model_validator(mode="after")
    def _check_cutoffs(self) -> "TrackModel":
        if self.cutoff_r >= self.cutoff_c:
            raise ValueError("cutoff_r must be less than cutoff_c")
        return self


@dataclass(frozen=True)
class FrequencyGrid:
    f_min_hz: NonNegativeFloat = 0.1
    f_max_hz: PositiveFloat = 50.0
    n_points: PositiveInt = 1024
    spacing: Literal["log", "linear"] = "log"

    @model_validator(mode="after")
    def _check_range(self) -> "FrequencyGrid":
        if self.f_max_hz <= self.f_min_hz:
            raise ValueError("f_max_hz must be greater than f_min_hz")
        if self.spacing == "log" and self.f_min_hz <= 0:
            raise ValueError("f_min_hz must be positive for log spacing")
        return self


@dataclass(frozen=True)
class StationLayout:
    n_positions: PositiveInt
    access: tuple[int, ...] = ()
    exits: tuple[int, ...] = ()
    xi: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _check_positions(self) -> "StationLayout":
        for name in ("access", "exits"):
            for pos in getattr(self, name):
                if not 1 <= pos <= self.n_positions:
                    raise ValueError(f"{name} position {pos} outside 1..{self.n_positions}")
        return self


def _default_layouts() -> list[StationLayout]:
    # Access/exit sets are invented stand-ins for the simulated platform figure;
    # only the station 4 exits {2, 4} are documented.
    return [
        StationLayout(n_positions=6, access=(1,), exits=(1,)),
        StationLayout(n_positions=6, access=(3,), exits=(3,)),
        StationLayout(n_positions=6, access=(1, 6), exits=(1, 6)),
        StationLayout(n_positions=6, access=(2, 4), exits=(2, 4)),
        StationLayout(n_positions=6, access=(5,), exits=(5,)),
    ]


@dataclass(frozen=True)
class LineConfig:
    n_stations: int = Field(default=5, ge=2)
    n_cars: PositiveInt = 6
    layouts: tuple[StationLayout, ...] = field(default_factory=lambda: tuple(_default_layouts()))
    # Per origin station 1..M-1.
    arrival_rates: tuple[NonNegativeFloat, ...] = (1.5, 1.5, 1.2, 1.2)  # passengers/s
    headways: tuple[PositiveFloat, ...] = (180.0, 100.0, 100.0, 120.0)  # s
    # Row i holds p_{i,j} for j = i+1..M.
    odm_probs: tuple[tuple[NonNegativeFloat, ...], ...] = (
        (0.2, 0.2, 0.3, 0.3),
        (0.2, 0.4, 0.4),
        (0.6, 0.4),
        (1.0,),
    )
    committed_prob: float = Field(default=0.3, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_line(self) -> "LineConfig":
        m = self.n_stations
        if len(self.layouts) != m:
            raise ValueError(f"layouts has {len(self.layouts)} entries, expected n_stations={m}")
        for i, layout in enumerate(self.layouts, start=1):
            if layout.n_positions != self.n_cars:
                raise ValueError(
                    f"layouts.{i}.n_positions is {layout.n_positions}, expected n_cars={self.n_cars}"
                )
            if i < m and not layout.access:
                raise ValueError(f"layouts.{i}.access is empty for origin station {i}")
        for name in ("arrival_rates", "headways", "odm_probs"):
            if len(getattr(self, name)) != m - 1:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {m - 1}")
        for i, row in enumerate(self.odm_probs, start=1):
            if len(row) != m - i:
                raise ValueError(f"odm_probs.{i} has {len(row)} entries, expected {m - i}")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"odm_probs.{i} sums to {sum(row)!r}, expected 1")
        return self


@dataclass(frozen=True)
class ApcModel:
    noise_sigma: NonNegativeFloat = 5.0  # passengers
    bias: float = 0.0  # passengers


@dataclass(frozen=True)
class McmcSettings:
    iterations: PositiveInt = 20000
    burn_in: NonNegativeInt = 5000
    thin: PositiveInt = 5
    max_step: PositiveInt = 3
    seed: Optional[NonNegativeInt] = None

    @model_validator(mode="after")
    def _check_chain(self) -> "McmcSettings":
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must be greater than burn_in")
        return self


@dataclass(frozen=True)
class DistortionScales:
    # Standard deviation of the log rate factor per level.
    moderate: NonNegativeFloat = 0.3
    severe: NonNegativeFloat = 0.7


@dataclass(frozen=True)
class MonteCarloSettings:
    n_runs: PositiveInt = 300
    sigmas: tuple[PositiveFloat, ...] = (5.0, 10.0, 15.0)
    distortion: Literal["none", "moderate", "severe"] = "none"
    thresholds: tuple[NonNegativeFloat, ...] = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
    bin_width: PositiveFloat = 5.0
    workers: PositiveInt = 1
    seed: Optional[NonNegativeInt] = None


@dataclass(frozen=True)
class AppConfig:
    two_dof: TwoDofParams = field(default_factory=TwoDofParams)
    multi_dof: MultiDofParams = field(default_factory=MultiDofParams)
    track: TrackModel = field(default_factory=TrackModel)
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    tf2_grid: FrequencyGrid = field(
        default_factory=lambda: FrequencyGrid(f_min_hz=0.0, f_max_hz=5.0, n_points=501, spacing="linear")
    )
    line: LineConfig = field(default_factory=LineConfig)
    apc: ApcModel = field(default_factory=ApcModel)
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    distortion: DistortionScales = field(default_factory=DistortionScales)
    montecarlo: MonteCarloSettings = field(default_factory=MonteCarloSettings)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _describe(err: ValidationError) -> str:
    parts = []
    for item in err.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def parse_config(data: dict, source: str = "<dict>") -> AppConfig:
    """Validate a decoded config mapping; keys starting with ``_`` are comments."""
    try:
        return TypeAdapter(AppConfig).validate_python(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: invalid configuration: {_describe(e)}") from e


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data, source=str(path))


def config_digest(path: str | Path | None = None) -> str:
    """sha256 of the config file bytes, or of the canonical default config."""
    if path is None:
        payload = json.dumps(CONFIG.as_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    else:
        payload = Path(path).read_bytes()
    return hashlib.sha256(payload).hexdigest()


CONFIG = AppConfig()
