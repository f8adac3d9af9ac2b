"""
Configuration management for active-torus.

This module provides the configuration system that supports:
- Default values for every run parameter
- Plain-text ``[section]`` / ``key = value`` run files, plus JSON and YAML
- A canonical echo that parses back to the same configuration
- Environment variable overrides for application settings
"""

import configparser
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

import yaml  # type: ignore[import-untyped]
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .core.evolution import SolverConfig
from .core.hfunctions import HFunction, certify, make_h
from .core.spectral import TorusGrid
from .core.types import CertificateError, ConfigError

logger = logging.getLogger("active_torus.config")

ScenarioName = Literal[
    "constant", "smooth", "near-degenerate", "pure-heat", "noise", "uniqueness-pair"
]

NONE_TOKENS = ("", "none")


class GridSection(BaseModel):
    """Grid sizes; each must be even and at least 4"""

    model_config = ConfigDict(extra="forbid")

    nx: int = Field(default=32, description="Points along x1")
    ny: int = Field(default=32, description="Points along x2")
    ntheta: int = Field(default=32, description="Points along theta")


class ScenarioSection(BaseModel):
    """Initial data preset"""

    model_config = ConfigDict(extra="forbid")

    name: ScenarioName = Field(default="smooth", description="Scenario preset")
    density: float = Field(default=0.5, description="Mean density rho")
    amplitude: float = Field(default=0.2, ge=0, description="Perturbation amplitude")
    seed: int = Field(default=0, ge=0, description="RNG seed for the noise scenario")
    noise_modes: int = Field(default=4, ge=1, description="Largest |k| in noise data")


class HSection(BaseModel):
    """Barrier function h used by the v = h(1 - rho) monitors"""

    model_config = ConfigDict(extra="forbid")

    family: Literal["power", "loglog"] = Field(default="power")
    q: float = Field(default=2.0, description="Exponent of the power family")


class DiagnosticsSection(BaseModel):
    """Post-run monitors"""

    model_config = ConfigDict(extra="forbid")

    ladder_t0: Optional[float] = Field(
        default=None, description="Ladder time t0; none uses t_end / 2"
    )
    ladder_levels: int = Field(default=20, ge=0, le=60)
    interp_p: float = Field(default=2.0, ge=1)
    interp_m: float = Field(default=2.0, ge=1)
    entropy_floor: float = Field(default=1e-12, ge=0)


class UniquenessSection(BaseModel):
    """Paired-run settings"""

    model_config = ConfigDict(extra="forbid")

    amplitude: float = Field(default=1e-3, ge=0, description="Perturbation delta")
    pattern: Literal["cos_x1_cos_theta", "cos_x1"] = Field(default="cos_x1_cos_theta")
    cadence: int = Field(default=1, ge=1, description="Sample cadence of paired runs")
    t_end: Optional[float] = Field(
        default=None, gt=0, description="Final time; none uses solver.t_end"
    )
    t_check: float = Field(default=0.05, gt=0, description="Time of the ratio check")
    gronwall_tolerance: float = Field(default=0.05, ge=0)
    ratio_bound: float = Field(default=1.0, gt=0, description="Bound defining t*")


class OutputSection(BaseModel):
    """Artifact locations"""

    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = Field(
        default=None, description="Run directory; none derives it from the output root"
    )
    checkpoint_every: int = Field(
        default=0, ge=0, description="Checkpoint every n samples; 0 keeps final/abort only"
    )


class RunConfig(BaseModel):
    """Complete description of one run"""

    model_config = ConfigDict(extra="forbid")

    grid: GridSection = Field(default_factory=GridSection)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    scenario: ScenarioSection = Field(default_factory=ScenarioSection)
    h: HSection = Field(default_factory=HSection)
    diagnostics: DiagnosticsSection = Field(default_factory=DiagnosticsSection)
    uniqueness: UniquenessSection = Field(default_factory=UniquenessSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def make_grid(self) -> TorusGrid:
        return TorusGrid.create(self.grid.nx, self.grid.ny, self.grid.ntheta)

    def make_h(self) -> HFunction:
        return make_h(self.h.family, self.h.q)


SECTION_ORDER = tuple(RunConfig.model_fields)


class LoggingConfig(BaseModel):
    """Logging configuration settings"""

    log_level: str = Field(
        default="INFO",
        description="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)",
    )
    log_format: Literal["text", "json"] = Field(
        default="text",
        description="Log format (text, json)",
    )
    log_dir: Optional[str] = Field(
        default=None,
        description="Directory for log files; none logs to the console only",
    )


class AppSettings(BaseSettings):
    """Application settings taken from the environment and .env"""

    model_config = SettingsConfigDict(
        env_prefix="ACTIVE_TORUS_",
        env_file=".env",
        env_file_encoding="utf-8",
        env_nested_delimiter="__",
        extra="ignore",
    )

    output_root: str = Field(
        default="runs",
        description="Directory under which run directories are created",
    )
    logging: LoggingConfig = Field(
        default_factory=LoggingConfig,
        description="Logging configuration",
    )


# -- text format -----------------------------------------------------------


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(config: RunConfig) -> str:
    """Every section and key with its resolved value, in a fixed order."""
    lines: List[str] = []
    for section in SECTION_ORDER:
        model = getattr(config, section)
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        for key in type(model).model_fields:
            lines.append(f"{key} = {_format_value(getattr(model, key))}")
    return "\n".join(lines) + "\n"


def _read_text(text: str) -> Dict[str, Dict[str, Optional[str]]]:
    parser = configparser.ConfigParser(
        interpolation=None,
        comment_prefixes=("#", ";"),
        inline_comment_prefixes=("#", ";"),
        strict=True,
    )
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed configuration text: {exc}"]) from exc
    data: Dict[str, Dict[str, Optional[str]]] = {}
    for section in parser.sections():
        data[section] = {
            key: (None if value.strip().lower() in NONE_TOKENS else value.strip())
            for key, value in parser.items(section)
        }
    return data


def _issues_from(error: ValidationError) -> List[str]:
    issues = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        if item["type"] == "extra_forbidden":
            issues.append(f"unknown key '{location}'")
        else:
            issues.append(f"{location}: {item['msg']}")
    return issues


def config_from_mapping(data: Mapping[str, Any]) -> RunConfig:
    """Build and validate a RunConfig; raises ConfigError with every issue."""
    try:
        config = RunConfig.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigError(_issues_from(exc)) from None
    issues = validate_config(config)
    if issues:
        raise ConfigError(issues)
    return config


def parse_config(text: str) -> RunConfig:
    """Parse ``[section]`` / ``key = value`` text into a validated RunConfig."""
    return config_from_mapping(_read_text(text))


def load_config(file_path: Union[str, Path]) -> RunConfig:
    """Load a run configuration from a key-value, JSON or YAML file"""
    file_path = Path(file_path)
    if not file_path.exists():
        raise ConfigError([f"configuration file not found: {file_path}"])
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error("Error loading configuration from %s: %s", file_path, e)
        raise ConfigError([f"cannot read {file_path}: {e}"]) from e

    suffix = file_path.suffix.lower()
    if suffix in (".yml", ".yaml"):
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError([f"invalid YAML in {file_path}: {e}"]) from e
    elif suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError([f"invalid JSON in {file_path}: {e}"]) from e
    else:
        return parse_config(text)

    if not isinstance(data, dict):
        raise ConfigError([f"{file_path} must hold a mapping of sections"])
    return config_from_mapping(data)


def validate_config(config: RunConfig) -> List[str]:
    """Validate configuration and return list of issues"""
    issues = []

    # Grid parity
    for axis in ("nx", "ny", "ntheta"):
        n = getattr(config.grid, axis)
        if n < 4 or n % 2:
            issues.append(f"grid.{axis} = {n} must be even and at least 4")

    # Barrier function
    try:
        certify(config.make_h())
    except CertificateError as e:
        issues.extend(e.issues)

    # Time stepping
    solver = config.solver
    if solver.dt is not None and solver.dt > solver.t_end:
        issues.append(f"solver.dt = {solver.dt!r} exceeds solver.t_end = {solver.t_end!r}")
    if solver.galerkin_cutoff is not None and not issues:
        points = config.grid.nx * config.grid.ny * config.grid.ntheta
        if solver.galerkin_cutoff > points:
            logger.info(
                "galerkin_cutoff %d exceeds the mode count %d; projection is the identity",
                solver.galerkin_cutoff,
                points,
            )

    # Scenario data must keep 0 < rho < 1
    scenario = config.scenario
    if scenario.name in ("constant", "smooth", "pure-heat", "noise", "uniqueness-pair"):
        if not 0.0 < scenario.density < 1.0:
            issues.append(f"scenario.density = {scenario.density!r} must lie in (0, 1)")
        elif scenario.name != "constant":
            low = scenario.density - scenario.amplitude
            high = scenario.density + scenario.amplitude
            if low <= 0.0 or high >= 1.0:
                issues.append(
                    f"scenario.density +- scenario.amplitude = [{low:.6g}, {high:.6g}] "
                    "must stay inside (0, 1)"
                )

    # Diagnostics windows
    diagnostics = config.diagnostics
    if diagnostics.ladder_t0 is not None and not 0.0 < diagnostics.ladder_t0 < solver.t_end:
        issues.append(
            f"diagnostics.ladder_t0 = {diagnostics.ladder_t0!r} must lie in (0, solver.t_end)"
        )

    # Paired runs
    uniqueness = config.uniqueness
    pair_end = uniqueness.t_end if uniqueness.t_end is not None else solver.t_end
    if uniqueness.t_check > pair_end:
        issues.append(
            f"uniqueness.t_check = {uniqueness.t_check!r} is after the pair end time {pair_end!r}"
        )
    if not math.isfinite(uniqueness.amplitude):
        issues.append("uniqueness.amplitude must be finite")

    return issues


def load_settings(env_file: Optional[str] = None) -> AppSettings:
    """Application settings, optionally from a specific .env file"""
    if env_file:
        return AppSettings(_env_file=env_file)  # type: ignore[call-arg]
    return AppSettings()
