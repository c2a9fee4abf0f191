#!/usr/bin/env python3
"""
Solver tolerances, enumeration limits and run configuration.

A run configuration is a YAML document with the sections
``spacetime``, ``fiber``, ``solver``, ``limits`` and ``output``.
Infinite interval ends are written as the strings "inf" / "-inf".

Example:
    spacetime:
      interval: ["-inf", "inf"]
      family: cosh
      params: {amplitude: 1.0}
    fiber: {family: sphere, dim: 2, radius: 1.0}
    solver: {tol_quad: 1.0e-10}
    limits: {n_max: 8, q_max: 5}
    output: {format: json, path: out}
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from grw_errors import ConfigError

logger = logging.getLogger(__name__)

SOLVER_KEYS = ("tol_quad", "tol_root", "tol_level", "tol_rel", "tol_accept",
               "window_eps", "window_M")
LIMIT_KEYS = ("L_max", "n_max", "K_max", "q_max", "n_grid", "k_max", "workers")
OUTPUT_FORMATS = ("json", "csv", "svg")


def parse_extended(value: Any) -> float:
    """Read a real that may be written as "inf" / "-inf"."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "+inf", "infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Not a real number: {value!r}")


def format_extended(value: float) -> Any:
    """Inverse of parse_extended for report output."""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


@dataclass(frozen=True)
class SolverSettings:
    """Numerical tolerances and truncation limits shared by all solvers"""

    tol_quad: float = 1e-10
    tol_root: float = 1e-10
    tol_level: float = 1e-9
    tol_rel: float = 1e-9
    tol_accept: float = 1e-7
    # extreme windows; window_eps None means 1e-2 of the interval length
    window_eps: Optional[float] = None
    window_M: float = 10.0
    L_max: Optional[float] = None
    n_max: int = 8
    K_max: float = 1e3
    q_max: int = 5
    n_grid: int = 33
    k_max: int = 40
    workers: int = 1

    def __post_init__(self):
        for name in ("tol_quad", "tol_root", "tol_level", "tol_rel", "tol_accept",
                     "window_M", "K_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.window_eps is not None and not self.window_eps > 0:
            raise ConfigError(f"window_eps must be positive, got {self.window_eps!r}")
        if self.L_max is not None and not self.L_max > 0:
            raise ConfigError(f"L_max must be positive, got {self.L_max!r}")
        for name in ("n_max", "q_max", "n_grid", "k_max", "workers"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {value!r}")
        if self.n_grid < 2 or self.k_max < 5 or self.workers < 1:
            raise ConfigError("n_grid >= 2, k_max >= 5 and workers >= 1 are required")

    @classmethod
    def from_mapping(cls, solver: Optional[Dict] = None, limits: Optional[Dict] = None) -> "SolverSettings":
        """Build settings from the ``solver`` and ``limits`` config sections."""
        values = {}
        for section, allowed in ((solver or {}, SOLVER_KEYS), (limits or {}, LIMIT_KEYS)):
            if not isinstance(section, dict):
                raise ConfigError(f"Expected a mapping, got {type(section).__name__}")
            for key, raw in section.items():
                if key not in allowed:
                    raise ConfigError(f"Unknown setting: {key}")
                if raw is None:
                    values[key] = None
                elif key in ("n_max", "q_max", "n_grid", "k_max", "workers"):
                    try:
                        integral = not isinstance(raw, bool) and int(raw) == raw
                    except (TypeError, ValueError):
                        integral = False
                    if not integral:
                        raise ConfigError(f"{key} must be an integer, got {raw!r}")
                    values[key] = int(raw)
                else:
                    values[key] = parse_extended(raw)
        return cls(**values)

    def with_overrides(self, **changes) -> "SolverSettings":
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        return {f.name: format_extended(getattr(self, f.name)) for f in fields(self)}


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class RunConfig:
    """Parsed run configuration; spacetime/fiber stay as validated mappings"""

    spacetime: Dict
    fiber: Dict
    settings: SolverSettings = field(default_factory=SolverSettings)
    output: Dict = field(default_factory=lambda: {"format": "json", "path": "."})
    base_dir: Path = field(default_factory=Path.cwd)

    def to_dict(self) -> Dict:
        spacetime = dict(self.spacetime)
        if "interval" in spacetime:
            spacetime["interval"] = [format_extended(parse_extended(v)) for v in spacetime["interval"]]
        return {
            "spacetime": spacetime,
            "fiber": dict(self.fiber),
            "settings": self.settings.to_dict(),
            "output": dict(self.output),
        }


def config_from_mapping(data: Dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a loaded YAML document and turn it into a RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a mapping at top level")
    unknown = set(data) - {"spacetime", "fiber", "solver", "limits", "output"}
    if unknown:
        raise ConfigError(f"Unknown configuration sections: {', '.join(sorted(unknown))}")

    spacetime = data.get("spacetime")
    if not isinstance(spacetime, dict) or "family" not in spacetime:
        raise ConfigError("Section 'spacetime' with a 'family' entry is required")
    fiber = data.get("fiber") or {"family": "line"}
    if not isinstance(fiber, dict) or "family" not in fiber:
        raise ConfigError("Section 'fiber' must name a 'family'")

    settings = SolverSettings.from_mapping(data.get("solver"), data.get("limits"))

    output = {"format": "json", "path": "."}
    output.update(data.get("output") or {})
    if output["format"] not in OUTPUT_FORMATS:
        raise ConfigError(f"Unknown output format: {output['format']}")

    return RunConfig(spacetime=spacetime, fiber=fiber, settings=settings,
                     output=output, base_dir=base_dir or Path.cwd())


def load_run_config(path: str) -> RunConfig:
    """Load and validate a YAML run configuration file."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Configuration file not found: {config_path}")
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML parsing error in {config_path}: {e}")
    logger.debug(f"Loaded configuration from {config_path}")
    return config_from_mapping(data, base_dir=config_path.parent)
