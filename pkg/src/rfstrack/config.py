"""Run configuration: every tunable of the tracker in one flat key=value format.

A config file holds one ``section.key=value`` pair per line with ``#``
comments; run-level keys (filter, seed, ...) take no section prefix.  Tuple
values are comma-separated.  Every key has a default, so an empty file (or no
file) is a valid configuration.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .birth import BirthConfig
from .dynamics import ModelError, MotionConfig, SurvivalConfig
from .measurement import MeasurementConfig
from .metrics import OspaConfig
from .occlusion import FuzzyConfig


@dataclass(frozen=True)
class EstimatorConfig:
    """Dual-threshold track extraction for the LMB filter.

    A track is emitted once its running-max existence exceeds upper_threshold
    and while its current existence stays above lower_threshold (hysteresis).
    """

    upper_threshold: float = 0.5
    lower_threshold: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.lower_threshold <= self.upper_threshold < 1.0:
            raise ModelError("need 0 < lower_threshold <= upper_threshold < 1")


@dataclass
class RunConfig:
    """All tracker settings; sub-configs mirror the config-file sections."""

    filter: str = "glmb"
    hypothesis_cap: int = 500
    seed: int = 0
    solver: str = "auto"  # auto | murty | gibbs
    murty_limit: int = 2500  # auto switches to gibbs when rows*measurements exceeds this
    gibbs_factor: int = 10  # gibbs sweeps per requested hypothesis
    gibbs_cap: int = 100000
    weight_floor: float = 1e-6  # hypothesis pruning, relative to the max weight
    existence_floor: float = 1e-3  # lmb track termination threshold
    motion: MotionConfig = field(default_factory=MotionConfig)
    survival: SurvivalConfig = field(default_factory=SurvivalConfig)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    fuzzy: FuzzyConfig = field(default_factory=FuzzyConfig)
    birth: BirthConfig = field(default_factory=BirthConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    ospa: OspaConfig = field(default_factory=OspaConfig)

    def __post_init__(self):
        if self.filter not in ("glmb", "lmb"):
            raise ModelError("filter must be 'glmb' or 'lmb'")
        if self.solver not in ("auto", "murty", "gibbs"):
            raise ModelError("solver must be 'auto', 'murty' or 'gibbs'")
        if self.hypothesis_cap < 1:
            raise ModelError("hypothesis_cap must be at least 1")


_SECTIONS = {
    "motion": MotionConfig,
    "survival": SurvivalConfig,
    "measurement": MeasurementConfig,
    "fuzzy": FuzzyConfig,
    "birth": BirthConfig,
    "estimator": EstimatorConfig,
    "ospa": OspaConfig,
}

_RUN_FIELDS = {
    "filter": str,
    "hypothesis_cap": int,
    "seed": int,
    "solver": str,
    "murty_limit": int,
    "gibbs_factor": int,
    "gibbs_cap": int,
    "weight_floor": float,
    "existence_floor": float,
}


def _convert(raw: str, target_type, current):
    raw = raw.strip()
    if target_type is bool or isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        parts = [p for p in raw.split(",") if p.strip()]
        if len(parts) != len(current):
            raise ValueError(f"expected {len(current)} comma-separated values, got {len(parts)}")
        return tuple(float(p) for p in parts)
    if target_type is int or isinstance(current, int):
        return int(raw)
    if target_type is float or isinstance(current, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> RunConfig:
    """Parse flat key=value configuration text into a RunConfig."""
    run_values: dict = {}
    section_values: dict[str, dict] = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key.startswith("run."):
            key = key[4:]
        try:
            if "." in key:
                section, _, name = key.partition(".")
                if section not in _SECTIONS:
                    raise ValueError(f"unknown section {section!r}")
                cls = _SECTIONS[section]
                defaults = cls()
                if name not in {f.name for f in dataclasses.fields(cls)}:
                    raise ValueError(f"unknown key {name!r} in section {section!r}")
                current = getattr(defaults, name)
                section_values[section][name] = _convert(raw, type(current), current)
            else:
                if key not in _RUN_FIELDS:
                    raise ValueError(f"unknown key {key!r}")
                run_values[key] = _convert(raw, _RUN_FIELDS[key], _RUN_FIELDS[key]())
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    kwargs = dict(run_values)
    for section, cls in _SECTIONS.items():
        kwargs[section] = cls(**section_values[section])
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    """RunConfig from a file path; defaults when path is None."""
    if path is None:
        return RunConfig()
    return parse_config_text(Path(path).read_text())
