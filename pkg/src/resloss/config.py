"""Run configuration: YAML file, environment overrides, then CLI flags.

Precedence (lowest to highest): built-in defaults < config file < environment
variables (``RESLOSS_<FIELD>``) < explicit overrides (CLI flags).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import yaml

ENV_PREFIX = "RESLOSS_"


@dataclass
class RunConfig:
    input_dir: str = "."
    out_dir: str = "out"
    attenuation_db: float = 100.0
    attenuation_db_by_resonator: Dict[str, float] = field(default_factory=dict)
    gamma: float = -1.0
    jobs: int = 1
    seed: int = 0
    nonlinearity_rms_threshold: float = 5.0
    nonlinearity_skew_threshold: float = 0.3
    qc_cv_threshold: float = 0.2
    n_starts: int = 5
    p_bulk: float = 1.0
    photon_nbar: float = 1.0
    base_temperature_k: float = 0.017
    identifiability_delta_chisq: float = 1.0
    min_devices_per_treatment: int = 3
    surface_table: Optional[str] = None

    def validate(self) -> None:
        for name in (
            "nonlinearity_rms_threshold",
            "nonlinearity_skew_threshold",
            "qc_cv_threshold",
            "p_bulk",
            "photon_nbar",
            "base_temperature_k",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.jobs < 1 or self.n_starts < 1:
            raise ValueError("jobs and n_starts must be >= 1")
        if not Path(self.input_dir).exists():
            raise FileNotFoundError(f"input_dir does not exist: {self.input_dir}")
        if self.surface_table is not None and not Path(self.surface_table).exists():
            raise FileNotFoundError(f"surface_table does not exist: {self.surface_table}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    current = RunConfig.__dataclass_fields__[name].default
    if isinstance(current, bool):
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return parse_gamma(value) if name == "gamma" else float(value)
    return value


def parse_gamma(value) -> float:
    """Accept -1, -1/2, -1/3 either as numbers or as fraction strings."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def load_config(
    path: Optional[str] = None,
    env: Optional[dict] = None,
    overrides: Optional[dict] = None,
) -> RunConfig:
    values: dict = {}

    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must be a mapping")
        for key, val in raw.items():
            if key not in _FIELD_TYPES:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = val if isinstance(val, dict) else _coerce(key, val)

    env = os.environ if env is None else env
    for key in _FIELD_TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env and key != "attenuation_db_by_resonator":
            values[key] = _coerce(key, env[env_key])

    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config override {key!r}")
        values[key] = val if isinstance(val, dict) else _coerce(key, val)

    return RunConfig(**values)
