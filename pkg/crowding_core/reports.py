"""CSV/JSON writers and the run manifest shared by every command."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from .vibration import Spectrum

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def write_json(payload: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    logger.info("wrote %s", path)
    return path


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__} to JSON")


def spectrum_frame(spectrum: Spectrum) -> pd.DataFrame:
    """``frequency_hz,value`` for real spectra, ``frequency_hz,re,im`` for complex responses."""
    if spectrum.is_complex:
        return pd.DataFrame({
            "frequency_hz": spectrum.frequencies,
            "re": spectrum.values.real,
            "im": spectrum.values.imag,
        })
    return pd.DataFrame({"frequency_hz": spectrum.frequencies, "value": spectrum.values})


def read_spectrum(path: str | Path) -> Spectrum:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise OSError(f"spectrum file not found: {path}") from e
    if "frequency_hz" not in frame:
        raise ValueError(f"{path}: missing column frequency_hz")
    if {"re", "im"} <= set(frame.columns):
        values = frame["re"].to_numpy(float) + 1j * frame["im"].to_numpy(float)
    elif "value" in frame:
        values = frame["value"].to_numpy(float)
    else:
        raise ValueError(f"{path}: expected a value column or re/im columns")
    return Spectrum(frame["frequency_hz"].to_numpy(float), values)


@dataclass
class RunManifest:
    subcommand: str
    config_sha256: str
    master_seed: Optional[int]
    version: str
    arguments: dict
    outputs: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config_sha256": self.config_sha256,
            "master_seed": self.master_seed,
            "version": self.version,
            "arguments": self.arguments,
            "outputs": sorted(self.outputs),
        }

    def record(self, out_dir: Path, path: Path) -> Path:
        self.outputs.append(path.relative_to(out_dir).as_posix())
        return path

    def write(self, out_dir: Path) -> Path:
        return write_json(self.as_dict(), out_dir / MANIFEST_FILE)
