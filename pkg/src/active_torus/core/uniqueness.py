"""
Paired trajectories and the checks run on their difference.

Two solutions are evolved from data that differ by a small perturbation; the
difference f1 - f2, its moments, the L-inf/L2 ratio of the density difference,
a Duhamel reconstruction of that difference and a Gronwall fit of ||f1 - f2||^2
are computed post hoc from the stored samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import trapezoid

from ..logging_setup import get_logger, log_event
from .evolution import KineticOperator, RunSink, SolverConfig, resolve_dt, run
from .heatkernel import duhamel
from .moments import compute_moments
from .spectral import RealField, lq_norm
from .state import ModelState, Trajectory
from .types import DuhamelError, TrajectoryError

logger = get_logger("uniqueness")

PatternName = Literal["cos_x1_cos_theta", "cos_x1"]


class Perturbation(BaseModel):
    """delta * pattern added to the second initial datum.

    ``cos_x1_cos_theta`` integrates to zero in theta, so both runs start from
    the same rho; ``cos_x1`` perturbs rho as well.
    """

    amplitude: float = Field(default=1e-3, ge=0)
    pattern: PatternName = "cos_x1_cos_theta"

    def field(self, state: ModelState) -> RealField:
        x1, _, theta = state.grid.mesh()
        shape = np.cos(x1)
        if self.pattern == "cos_x1_cos_theta":
            shape = shape * np.cos(theta)
        return RealField(state.grid, self.amplitude * shape)

    def apply(self, state: ModelState) -> ModelState:
        return ModelState(
            state.f + self.field(state),
            t=state.t,
            step=state.step,
            max_moment_order=state.max_moment_order,
        )


@dataclass
class PairedTrajectory:
    """Two trajectories on one grid with aligned sample times."""

    first: Trajectory
    second: Trajectory
    perturbation: Perturbation
    config: SolverConfig

    def __post_init__(self) -> None:
        if self.first.grid != self.second.grid:
            raise TrajectoryError("paired trajectories live on different grids")
        t1, t2 = self.first.times, self.second.times
        if t1.shape != t2.shape or not np.allclose(t1, t2, rtol=0.0, atol=1e-12):
            raise TrajectoryError("paired trajectories have misaligned sample times")

    @property
    def times(self) -> np.ndarray:
        return self.first.times

    def swapped(self) -> "PairedTrajectory":
        return PairedTrajectory(self.second, self.first, self.perturbation, self.config)

    def pairs(self, end: Optional[float] = None) -> List[Tuple[ModelState, ModelState]]:
        """Aligned samples with t <= end."""
        end = self.times[-1] if end is None else end
        slack = 1e-12 * max(1.0, abs(end))
        return [
            (a, b)
            for a, b in zip(self.first.samples, self.second.samples)
            if a.t <= end + slack
        ]


def evolve_pair(
    initial: ModelState,
    perturbation: Perturbation,
    config: SolverConfig,
    sinks: Sequence[Iterable[RunSink]] = ((), ()),
) -> PairedTrajectory:
    """Run the unperturbed and perturbed trajectories concurrently with one dt."""
    perturbed = perturbation.apply(initial)
    dt = min(resolve_dt(initial, config), resolve_dt(perturbed, config))
    cfg = config.model_copy(update={"dt": dt})
    log_event(
        logger, "start", "uniqueness pair started",
        amplitude=perturbation.amplitude, pattern=perturbation.pattern, dt=dt,
    )
    with ThreadPoolExecutor(max_workers=2) as pool:
        first = pool.submit(run, initial, cfg, sinks[0])
        second = pool.submit(run, perturbed, cfg, sinks[1])
        pair = PairedTrajectory(first.result(), second.result(), perturbation, cfg)
    log_event(logger, "stop", "uniqueness pair finished", samples=len(pair.times))
    return pair


# -- difference fields -----------------------------------------------------


@dataclass(frozen=True)
class DifferenceFields:
    t: float
    f_bar: RealField
    rho_bar: RealField
    p_bar: RealField
    P_bar: RealField


def _aligned(pair: PairedTrajectory, t: float) -> Tuple[ModelState, ModelState]:
    return pair.first.at(t), pair.second.at(t)


def difference_fields(pair: PairedTrajectory, t: float) -> DifferenceFields:
    """f1 - f2 at a stored time and its moments (computed from the difference)."""
    first, second = _aligned(pair, t)
    f_bar = first.f - second.f
    moments = compute_moments(f_bar, max_order=2)
    return DifferenceFields(
        t=first.t, f_bar=f_bar, rho_bar=moments.rho, p_bar=moments.p, P_bar=moments.P
    )


def _norms(pair: PairedTrajectory, end: Optional[float] = None) -> Tuple[List[float], List[float], List[float]]:
    times, f_l2, rho_inf = [], [], []
    for a, b in pair.pairs(end):
        times.append(a.t)
        f_l2.append(lq_norm(a.f - b.f, 2))
        rho_inf.append(lq_norm(a.rho - b.rho, math.inf))
    return times, f_l2, rho_inf


class RatioReport(BaseModel):
    t: float
    numerator: float = Field(description="||rho_bar||_{L-inf((0,t) x Omega)}")
    denominator: float = Field(description="||f_bar||_{L2((0,t) x Upsilon)}")
    defined: bool
    ratio: Optional[float] = None


def linfty_l2_ratio(pair: PairedTrajectory, t: float) -> RatioReport:
    """Space-time ratio over [t0, t]; undefined when f_bar vanishes on the window."""
    times, f_l2, rho_inf = _norms(pair, t)
    numerator = max(rho_inf)
    denominator = (
        math.sqrt(float(trapezoid(np.square(f_l2), times))) if len(times) > 1 else 0.0
    )
    if denominator == 0.0:
        return RatioReport(t=t, numerator=numerator, denominator=0.0, defined=False)
    return RatioReport(
        t=t,
        numerator=numerator,
        denominator=denominator,
        defined=True,
        ratio=numerator / denominator,
    )


def small_time_horizon(pair: PairedTrajectory, bound: float = 1.0) -> Optional[float]:
    """Largest sample time up to which every defined ratio stays below ``bound``."""
    horizon = None
    for t in pair.times[1:]:
        report = linfty_l2_ratio(pair, float(t))
        if report.defined and report.ratio is not None and report.ratio > bound:
            break
        horizon = float(t)
    return horizon


# -- Duhamel reconstruction ------------------------------------------------


def forcing_series(
    pair: PairedTrajectory, end: Optional[float] = None
) -> List[Tuple[float, RealField]]:
    """G = (1 - rho1) p_bar - rho_bar p2 from the truncated fields the stepper uses."""
    operator = KineticOperator(pair.first.grid, pair.config)
    series = []
    for a, b in pair.pairs(end):
        s1 = operator.snapshot(a.f.values)
        s2 = operator.snapshot(b.f.values)
        p1, p2 = s1.moment(1), s2.moment(1)
        G = s1.U * (p1 - p2) - (s1.rho - s2.rho) * p2
        if pair.config.dealias:
            G = operator.project2(G)
        series.append((a.t, RealField(pair.first.grid.spatial(), G)))
    return series


class ReconstructionReport(BaseModel):
    t: float
    defect: float = Field(description="max |reconstructed - direct|")
    direct_linf: float
    relative_defect: Optional[float] = None
    resolution_estimate: float = Field(
        description="max difference to a reconstruction from every other sample"
    )


def duhamel_reconstruction(
    pair: PairedTrajectory,
    t: float,
    forcing: Optional[Sequence[Tuple[float, RealField]]] = None,
) -> Tuple[RealField, ReconstructionReport]:
    """Rebuild rho_bar(t) from G and rho_bar(t0) and compare with the direct difference.

    ``forcing`` may be a precomputed full forcing series; it is cut at t.
    """
    if forcing is None:
        series = forcing_series(pair, t)
    else:
        slack = 1e-12 * max(1.0, abs(t))
        series = [(tau, g) for tau, g in forcing if tau <= t + slack]
    if len(series) < 3:
        raise DuhamelError(
            f"forcing resolved by {len(series)} samples up to t={t}; need at least 3"
        )
    first, second = pair.first.samples[0], pair.second.samples[0]
    initial = first.rho - second.rho
    reconstructed = duhamel(series, t, initial=initial)
    coarse = series[::2]
    if coarse[-1][0] != series[-1][0]:
        coarse.append(series[-1])
    coarse_field = duhamel(coarse, t, initial=initial)

    a, b = _aligned(pair, t)
    direct = a.rho - b.rho
    defect = float(np.max(np.abs(reconstructed.values - direct.values)))
    direct_linf = float(np.max(np.abs(direct.values)))
    report = ReconstructionReport(
        t=t,
        defect=defect,
        direct_linf=direct_linf,
        relative_defect=defect / direct_linf if direct_linf > 0 else None,
        resolution_estimate=float(np.max(np.abs(reconstructed.values - coarse_field.values))),
    )
    return reconstructed, report


# -- Gronwall fit ----------------------------------------------------------


class GronwallFit(BaseModel):
    defined: bool
    rate: Optional[float] = Field(default=None, description="Fitted C in log ||f_bar||^2 ~ C t")
    intercept: Optional[float] = None
    envelope_rate: Optional[float] = Field(
        default=None, description="Smallest C with ||f_bar(t)||^2 <= ||f_bar(0)||^2 e^{C t}"
    )
    envelope_holds: Optional[bool] = None
    tolerance: float
    initial_norm_sq: float = 0.0


def gronwall_fit(
    pair: PairedTrajectory, tolerance: float = 0.05, end: Optional[float] = None
) -> GronwallFit:
    """Least-squares fit of log(||f_bar(t)||^2 / ||f_bar(0)||^2) against t."""
    times, f_l2, _ = _norms(pair, end)
    norm_sq = np.square(f_l2)
    if norm_sq[0] == 0.0 or np.any(norm_sq <= 0.0) or len(times) < 2:
        return GronwallFit(defined=False, tolerance=tolerance, initial_norm_sq=float(norm_sq[0]))
    t = np.asarray(times) - times[0]
    y = np.log(norm_sq / norm_sq[0])
    rate, intercept = np.polyfit(t, y, 1)
    holds = bool(np.all(y <= rate * t + math.log1p(tolerance)))
    envelope_rate = float(np.max(y[1:] / t[1:]))
    if not holds:
        log_event(
            logger, "violation", "Gronwall envelope exceeded",
            rate=float(rate), envelope_rate=envelope_rate, tolerance=tolerance,
        )
    return GronwallFit(
        defined=True,
        rate=float(rate),
        intercept=float(intercept),
        envelope_rate=envelope_rate,
        envelope_holds=holds,
        tolerance=tolerance,
        initial_norm_sq=float(norm_sq[0]),
    )


class PairRow(BaseModel):
    t: float
    fbar_l2: float
    rhobar_linf: float
    ratio: float
    reconstruction_defect: float
    gronwall_envelope: float


def pair_rows(pair: PairedTrajectory, fit: Optional[GronwallFit] = None) -> List[PairRow]:
    """Per-sample rows; undefined quantities are NaN."""
    fit = fit or gronwall_fit(pair)
    times, f_l2, rho_inf = _norms(pair)
    forcing = forcing_series(pair)
    rows = []
    for index, t in enumerate(times):
        ratio = linfty_l2_ratio(pair, t)
        defect = math.nan
        if index >= 2:
            defect = duhamel_reconstruction(pair, t, forcing)[1].defect
        envelope = math.nan
        if fit.defined and fit.rate is not None:
            envelope = fit.initial_norm_sq * math.exp(fit.rate * (t - times[0]))
        rows.append(
            PairRow(
                t=t,
                fbar_l2=f_l2[index],
                rhobar_linf=rho_inf[index],
                ratio=ratio.ratio if ratio.defined and ratio.ratio is not None else math.nan,
                reconstruction_defect=defect,
                gronwall_envelope=envelope,
            )
        )
    return rows
