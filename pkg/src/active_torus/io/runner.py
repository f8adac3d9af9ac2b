"""
Run orchestration: scenario runs and paired uniqueness runs.

A run directory receives the canonical config echo (config.txt), the
diagnostic sinks' files and, after integration, summary.json with the
trajectory-level monitors.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..config import AppSettings, RunConfig, echo_config
from ..core.diagnostics import (
    TruncationLadder,
    default_scale,
    energy_ledger,
    entropy_dissipation_check,
    lower_bound_track,
    recursion_decay_check,
    weak_residual,
)
from ..core.evolution import run
from ..core.hfunctions import validate_h
from ..core.spectral import RealField
from ..core.state import Trajectory
from ..core.types import ActiveTorusError, SolverAbort
from ..core.uniqueness import (
    PairedTrajectory,
    Perturbation,
    duhamel_reconstruction,
    evolve_pair,
    gronwall_fit,
    linfty_l2_ratio,
    pair_rows,
    small_time_horizon,
)
from ..logging_setup import get_logger, log_event
from .scenarios import prepare_run
from .sinks import RunDirectorySink, write_json, write_pair_csv

logger = get_logger("runner")


@dataclass
class RunResult:
    directory: Path
    trajectory: Trajectory
    summary: Dict[str, Any] = field(default_factory=dict)
    pair: Optional["PairResult"] = None


@dataclass
class PairResult:
    directory: Path
    pair: PairedTrajectory
    summary: Dict[str, Any] = field(default_factory=dict)


def run_directory(
    config: RunConfig,
    settings: Optional[AppSettings] = None,
    override: Optional[Union[str, Path]] = None,
) -> Path:
    """--output, then [output] directory, then <output_root>/<scenario>."""
    if override is not None:
        return Path(override)
    if config.output.directory is not None:
        return Path(config.output.directory)
    settings = settings or AppSettings()
    return Path(settings.output_root) / config.scenario.name


def _test_function(trajectory: Trajectory) -> RealField:
    """cos(x1) cos(theta): band-limited on every admissible grid."""
    grid = trajectory.grid
    x1, _, theta = grid.mesh()
    return RealField(grid, np.cos(x1) * np.cos(theta))


def trajectory_monitors(config: RunConfig, trajectory: Trajectory) -> Dict[str, Any]:
    """Post-run monitors; a monitor that cannot be formed is reported as null."""
    samples = trajectory.samples
    summary: Dict[str, Any] = {
        "trajectory": trajectory.summary.model_dump() if trajectory.summary else None,
        "h_certificate": validate_h(config.make_h()).model_dump(),
    }
    track = lower_bound_track(samples)
    summary["lower_bound"] = {"floor": track.floor, "final": track.minimum[-1]}

    t_end = trajectory.final.t
    t0 = config.diagnostics.ladder_t0 or 0.5 * t_end
    summary["ladder"] = None
    try:
        ladder = TruncationLadder(
            t0=t0, n_max=config.diagnostics.ladder_levels, scale=default_scale(samples)
        )
        ledger = energy_ledger(samples, ladder, "g")
        entry: Dict[str, Any] = {
            "t0": t0,
            "scale": ladder.scale,
            "values": ledger.values,
            "non_increasing": ledger.non_increasing,
            "first_zero": ledger.first_zero(),
        }
        if len(ledger.values) >= 4:
            entry["recursion"] = recursion_decay_check(ledger.values).model_dump()
        summary["ladder"] = entry
    except ActiveTorusError as exc:
        logger.warning("ladder ledger skipped: %s", exc)

    summary["entropy_dissipation"] = None
    if len(samples) >= 3:
        try:
            check = entropy_dissipation_check(
                samples, config.solver.drift, floor=config.diagnostics.entropy_floor
            )
            summary["entropy_dissipation"] = {
                "max_rate": check.max_rate,
                "violations": check.violations,
            }
        except ActiveTorusError as exc:
            logger.warning("entropy dissipation skipped: %s", exc)

    summary["weak_residual"] = None
    if len(samples) >= 2:
        residual = weak_residual(
            samples,
            _test_function(trajectory),
            drift=config.solver.drift,
            cross_diffusion=config.solver.cross_diffusion,
            dealias=config.solver.dealias,
        )
        summary["weak_residual"] = residual.model_dump()
    return summary


def run_scenario(
    config: RunConfig,
    settings: Optional[AppSettings] = None,
    directory: Optional[Union[str, Path]] = None,
) -> RunResult:
    """Integrate the configured scenario and write its run directory.

    SolverAbort propagates after the sinks have recorded the abort event and
    the last good checkpoint.
    """
    config, state = prepare_run(config)
    out = run_directory(config, settings, directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(echo_config(config), encoding="utf-8")

    with RunDirectorySink(out, config.output.checkpoint_every) as sink:
        try:
            trajectory = run(state, config.solver, [sink])
        except SolverAbort:
            logger.error("run in %s aborted; see events.json", out)
            raise
    summary = trajectory_monitors(config, trajectory)
    write_json(summary, out / "summary.json")
    result = RunResult(directory=out, trajectory=trajectory, summary=summary)

    if config.scenario.name == "uniqueness-pair":
        result.pair = run_uniqueness(config, settings, out / "pair")
    return result


def _nearest_time(pair: PairedTrajectory, t: float) -> float:
    times = pair.times
    return float(times[int(np.argmin(np.abs(times - t)))])


def run_uniqueness(
    config: RunConfig,
    settings: Optional[AppSettings] = None,
    directory: Optional[Union[str, Path]] = None,
) -> PairResult:
    """Evolve the unperturbed/perturbed pair and write pair.csv and uniqueness.json."""
    config, state = prepare_run(config)
    out = run_directory(config, settings, directory)
    out.mkdir(parents=True, exist_ok=True)
    section = config.uniqueness
    solver = config.solver.model_copy(
        update={
            "cadence": section.cadence,
            "t_end": section.t_end if section.t_end is not None else config.solver.t_end,
        }
    )
    perturbation = Perturbation(amplitude=section.amplitude, pattern=section.pattern)
    with RunDirectorySink(out / "first") as first, RunDirectorySink(out / "second") as second:
        pair = evolve_pair(state, perturbation, solver, sinks=([first], [second]))

    fit = gronwall_fit(pair, tolerance=section.gronwall_tolerance)
    rows = pair_rows(pair, fit)
    write_pair_csv(rows, out / "pair.csv")

    t_check = _nearest_time(pair, section.t_check)
    summary: Dict[str, Any] = {
        "amplitude": section.amplitude,
        "pattern": section.pattern,
        "t_check": t_check,
        "ratio": linfty_l2_ratio(pair, t_check).model_dump(),
        "gronwall": fit.model_dump(),
        "small_time_horizon": small_time_horizon(pair, section.ratio_bound),
        "reconstruction": None,
        "max_fbar_l2": max(r.fbar_l2 for r in rows),
    }
    try:
        summary["reconstruction"] = duhamel_reconstruction(pair, t_check)[1].model_dump()
    except ActiveTorusError as exc:
        logger.warning("Duhamel reconstruction skipped: %s", exc)
    write_json(summary, out / "uniqueness.json")

    if section.amplitude == 0.0 and not math.isclose(summary["max_fbar_l2"], 0.0, abs_tol=1e-12):
        log_event(
            logger, "violation", "identical runs diverged",
            max_fbar_l2=summary["max_fbar_l2"],
        )
    return PairResult(directory=out, pair=pair, summary=summary)
