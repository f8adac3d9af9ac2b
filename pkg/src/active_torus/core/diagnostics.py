"""
Estimate-shaped monitors over stored trajectories.

"esssup over time" is the max over stored samples and time integrals use the
trapezoid rule over sample times, so every monitor depends on the sampling
cadence of the run that produced it.
"""

from __future__ import annotations

import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.integrate import trapezoid

from ..logging_setup import get_logger
from .hfunctions import HFunction
from .moments import DEFAULT_ENTROPY_FLOOR, angular_kernel, contract_theta, entropy
from .spectral import RealField, TorusGrid, lq_norm, lq_time_norm, operators
from .state import ModelState
from .types import (
    DomainError,
    EntropyDomainError,
    FieldError,
    LadderError,
    TrajectoryError,
)

logger = get_logger("diagnostics")

Series = Sequence[Tuple[float, RealField]]

DISSIPATION_TOLERANCE = 1e-8
DECAY_THRESHOLD = 1e-10


class NormReport(BaseModel):
    """One diagnostics row; window monitors are None until two samples exist."""

    t: float
    step: int
    mass: float
    min_f: float
    min_one_minus_rho: float
    entropy: float
    l2_f: float
    h1_f: float
    l2_rho: float
    interp_ratio_rho: Optional[float] = None
    h2_monitor_rho: Optional[float] = None


def _grad_squared(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """|grad u|^2 over every grid axis (x for Omega, x and theta for Upsilon)."""
    ops = operators(grid)
    coefficients = ops.fft(values)
    return sum(ops.ifft(ops.ik[a] * coefficients) ** 2 for a in range(grid.dims))


def _l2_squared(values: np.ndarray, grid: TorusGrid) -> float:
    return float(np.sum(values**2) * grid.cell_volume)


def norm_report(state: ModelState, entropy_floor: float = DEFAULT_ENTROPY_FLOOR) -> NormReport:
    """Per-sample norms written as one diagnostics row."""
    f = state.f
    try:
        e_value = entropy(f, entropy_floor)
    except EntropyDomainError as exc:
        logger.warning("entropy undefined at t=%.6g: %s", state.t, exc)
        e_value = math.nan
    l2_f_sq = _l2_squared(f.values, f.grid)
    grad_sq = float(np.sum(_grad_squared(f.values, f.grid)) * f.grid.cell_volume)
    return NormReport(
        t=state.t,
        step=state.step,
        mass=state.mass,
        min_f=float(np.min(f.values)),
        min_one_minus_rho=float(np.min(1.0 - state.rho.values)),
        entropy=e_value,
        l2_f=math.sqrt(l2_f_sq),
        h1_f=math.sqrt(l2_f_sq + grad_sq),
        l2_rho=lq_norm(state.rho, 2),
    )


def density_series(samples: Sequence[ModelState]) -> List[Tuple[float, RealField]]:
    return [(s.t, s.rho) for s in samples]


def h2_monitor(samples: Sequence[ModelState]) -> float:
    """||grad rho||^2_{L-inf L2} + ||Laplacian rho||^2_{L2 L2} over the window."""
    if not samples:
        raise TrajectoryError("h2 monitor needs at least one sample")
    omega = samples[0].grid.spatial()
    ops2 = operators(omega)
    grad_sq = []
    lap_sq = []
    for s in samples:
        rho_hat = ops2.fft(s.rho.values)
        grad_sq.append(float(np.sum(_grad_squared(s.rho.values, omega)) * omega.cell_volume))
        lap_sq.append(_l2_squared(ops2.ifft(-ops2.k2 * rho_hat), omega))
    times = [s.t for s in samples]
    lap_part = float(trapezoid(lap_sq, times)) if len(samples) > 1 else 0.0
    return max(grad_sq) + lap_part


def window_monitors(
    samples: Sequence[ModelState], p: float = 2.0, m: float = 2.0
) -> Dict[str, Optional[float]]:
    """Window quantities for the latest diagnostics row."""
    ratio = None
    if len(samples) >= 2:
        ratio = interpolation_monitor(density_series(samples), p, m).ratio
    return {"interp_ratio_rho": ratio, "h2_monitor_rho": h2_monitor(samples)}


# -- Stampacchia truncations and De Giorgi ladders -------------------------


def stampacchia(field: RealField, k: float) -> RealField:
    """(field - k)_+ pointwise."""
    if k < 0:
        raise LadderError(f"truncation level must be non-negative, got {k}")
    return RealField(field.grid, np.maximum(field.values - k, 0.0))


class TruncationLadder(BaseModel):
    """Times T_n = t0 (1 - 2^{-n-1}) and levels kappa_n = 1 - 2^{-n}."""

    t0: float = Field(gt=0, description="Lebesgue-point time")
    n_max: int = Field(default=20, ge=0, le=60)
    scale: float = Field(default=1.0, gt=0, description="Normalisation L")

    def _check(self, n: int) -> None:
        if not 0 <= n <= self.n_max:
            raise LadderError(f"ladder index {n} outside [0, {self.n_max}]")

    def time(self, n: int) -> float:
        self._check(n)
        return self.t0 * (1.0 - 2.0 ** (-n - 1))

    def level(self, n: int) -> float:
        self._check(n)
        return 1.0 - 2.0 ** (-n)

    def times(self) -> List[float]:
        return [self.time(n) for n in range(self.n_max + 1)]

    def levels(self) -> List[float]:
        return [self.level(n) for n in range(self.n_max + 1)]


class EnergyLedger(BaseModel):
    """W_n (variant w) or G_n (variant g) for n = 0..n_max."""

    variant: Literal["w", "g"]
    values: List[float]
    times: List[float]
    levels: List[float]

    @model_validator(mode="after")
    def _non_negative(self) -> "EnergyLedger":
        if any(v < 0 for v in self.values):
            raise ValueError("ledger entries must be non-negative")
        return self

    @property
    def non_increasing(self) -> bool:
        return all(b <= a for a, b in zip(self.values, self.values[1:]))

    def first_zero(self) -> Optional[int]:
        for n, value in enumerate(self.values):
            if value == 0.0:
                return n
        return None


def truncation_energy(series: Series, level: float, start: float, end: Optional[float] = None) -> float:
    """max_t int |(u - level)_+|^2 + int_t int |1_{u > level} grad u|^2 over [start, end].

    The gradient runs over every grid axis of the series' grid.
    """
    end = series[-1][0] if end is None else end
    slack = 1e-12 * max(1.0, abs(end))
    window = [(t, u) for t, u in series if start - slack <= t <= end + slack]
    if len(window) < 2:
        raise LadderError(
            f"insufficient samples in [{start:.6g}, {end:.6g}]: found {len(window)}, need 2"
        )
    sup_part = 0.0
    grad_parts = []
    for _, u in window:
        grid = u.grid
        excess = u.values - level
        active = excess > 0
        sup_part = max(sup_part, _l2_squared(np.where(active, excess, 0.0), grid))
        grad_sq = _grad_squared(u.values, grid)
        grad_parts.append(float(np.sum(np.where(active, grad_sq, 0.0)) * grid.cell_volume))
    times = [t for t, _ in window]
    return sup_part + float(trapezoid(grad_parts, times))


def ladder_series(
    samples: Sequence[ModelState],
    variant: Literal["w", "g"],
    scale: float,
    h: Optional[HFunction] = None,
) -> List[Tuple[float, RealField]]:
    """w = h(1 - rho) / L on Omega, or g = f / L on Upsilon."""
    if variant == "g":
        return [(s.t, s.f.scaled(1.0 / scale)) for s in samples]
    if h is None:
        raise LadderError("variant 'w' needs an h function")
    series = []
    for s in samples:
        u = 1.0 - s.rho.values
        if np.any(u <= 0):
            raise DomainError("1 - rho <= 0 in ladder series", coordinates=(s.t,))
        series.append((s.t, RealField(s.rho.grid, h.h(u) / scale)))
    return series


def ladder_energy(
    samples: Sequence[ModelState],
    ladder: TruncationLadder,
    n: int,
    variant: Literal["w", "g"] = "g",
    h: Optional[HFunction] = None,
    end: Optional[float] = None,
) -> float:
    """W_n or G_n at truncation level kappa_n over [T_n, end]."""
    series = ladder_series(samples, variant, ladder.scale, h)
    return truncation_energy(series, ladder.level(n), ladder.time(n), end)


def energy_ledger(
    samples: Sequence[ModelState],
    ladder: TruncationLadder,
    variant: Literal["w", "g"] = "g",
    h: Optional[HFunction] = None,
) -> EnergyLedger:
    series = ladder_series(samples, variant, ladder.scale, h)
    values = [
        truncation_energy(series, ladder.level(n), ladder.time(n))
        for n in range(ladder.n_max + 1)
    ]
    return EnergyLedger(
        variant=variant, values=values, times=ladder.times(), levels=ladder.levels()
    )


def default_scale(samples: Sequence[ModelState]) -> float:
    """L = 2 (||f||_{L-inf L2} + ||grad f||_{L2 L2})^2."""
    if not samples:
        raise TrajectoryError("default scale needs samples")
    grid = samples[0].grid
    sup_l2 = max(math.sqrt(_l2_squared(s.f.values, grid)) for s in samples)
    grad_sq = [float(np.sum(_grad_squared(s.f.values, grid)) * grid.cell_volume) for s in samples]
    grad_l2 = math.sqrt(float(trapezoid(grad_sq, [s.t for s in samples]))) if len(samples) > 1 else 0.0
    return 2.0 * (sup_l2 + grad_l2) ** 2


class RecursionReport(BaseModel):
    """Outcome of fitting log W_n = n log C + beta log W_{n-1}."""

    decays_to_zero: bool
    defined: bool
    exponent: Optional[float] = None
    constant: Optional[float] = None
    pairs_used: int = 0


def recursion_decay_check(values: Sequence[float]) -> RecursionReport:
    """Tail decay test and least-squares exponent of the ladder recursion.

    Decay means the second half of the ledger is non-increasing and the last
    entry is below 1e-10 W_0. Pairs with a zero entry are left out of the fit.
    """
    w = np.asarray(values, dtype=np.float64)
    if w.size < 4:
        raise LadderError(f"ledger needs at least 4 entries, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise LadderError("ledger entries must be finite and non-negative")
    if not np.any(w > 0):
        return RecursionReport(decays_to_zero=True, defined=False)

    tail = w[w.size // 2 :]
    decays = bool(np.all(np.diff(tail) <= 0) and w[-1] <= DECAY_THRESHOLD * w[0])

    n = np.arange(1, w.size)
    usable = (w[1:] > 0) & (w[:-1] > 0)
    if np.count_nonzero(usable) < 2:
        return RecursionReport(decays_to_zero=decays, defined=False, pairs_used=int(np.count_nonzero(usable)))
    design = np.column_stack([n[usable], np.log(w[:-1][usable])])
    target = np.log(w[1:][usable])
    (log_c, beta), *_ = np.linalg.lstsq(design, target, rcond=None)
    return RecursionReport(
        decays_to_zero=decays,
        defined=True,
        exponent=float(beta),
        constant=float(np.exp(log_c)),
        pairs_used=int(np.count_nonzero(usable)),
    )


# -- lower bounds, interpolation, weak form, entropy -----------------------


class LowerBoundTrack(BaseModel):
    times: List[float]
    minimum: List[float] = Field(description="min over Omega of 1 - rho per sample")
    running_infimum: List[float] = Field(description="inf over [t, T] of the minimum")

    @property
    def floor(self) -> float:
        return min(self.minimum)


def lower_bound_track(samples: Sequence[ModelState]) -> LowerBoundTrack:
    minimum = [float(np.min(1.0 - s.rho.values)) for s in samples]
    running = list(np.minimum.accumulate(np.asarray(minimum)[::-1])[::-1])
    return LowerBoundTrack(
        times=[s.t for s in samples],
        minimum=minimum,
        running_infimum=[float(v) for v in running],
    )


class InterpolationReport(BaseModel):
    p: float
    m: float
    q: float
    numerator: float
    denominator: float
    ratio: float


def interpolation_monitor(series: Series, p: float = 2.0, m: float = 2.0) -> InterpolationReport:
    """||v||_{L^q} / (||v||_{L-inf L^m} + ||v||_{L^p W^{1,p}}), q = p (1 + m / d)."""
    if len(series) < 2:
        raise TrajectoryError("interpolation monitor needs a window of at least two samples")
    grid = series[0][1].grid
    q = p * (1.0 + m / grid.dims)
    times = [t for t, _ in series]
    lq = [lq_norm(v, q) for _, v in series]
    lm = [lq_norm(v, m) for _, v in series]
    sobolev = []
    for _, v in series:
        grad_mag = np.sqrt(_grad_squared(v.values, grid))
        grad_p = float(np.sum(grad_mag**p) * grid.cell_volume)
        sobolev.append(lq_norm(v, p) ** p + grad_p)
    numerator = lq_time_norm(times, lq, q)
    denominator = max(lm) + float(trapezoid(sobolev, times)) ** (1.0 / p)
    ratio = numerator / denominator if denominator > 0 else math.nan
    return InterpolationReport(
        p=p, m=m, q=q, numerator=numerator, denominator=denominator, ratio=ratio
    )


class WeakResidual(BaseModel):
    defect: float
    scale: float
    relative: float


def weak_residual(
    samples: Sequence[ModelState],
    phi: RealField,
    drift: bool = True,
    cross_diffusion: bool = True,
    dealias: bool = True,
) -> WeakResidual:
    """Defect of the weak form against a time-independent test function phi.

    [int f phi]_{t1}^{t2} - int_{t1}^{t2} ( int (1-rho) f e.grad phi
        - int ((1-rho) grad f + f grad rho).grad phi - int d_theta f d_theta phi ) dt

    using the same truncated fields as the stepper; time integral by trapezoid.
    """
    if len(samples) < 2:
        raise TrajectoryError("weak residual needs at least two samples")
    grid = samples[0].grid
    if phi.grid != grid or phi.rank != 0:
        raise FieldError("test function must be a scalar field on the trajectory grid")
    ops = operators(grid)
    ops2 = operators(grid.spatial())
    phi_hat = ops.fft(phi.values)
    outside = np.max(np.abs(phi_hat[~ops.mask])) if (~ops.mask).any() else 0.0
    if outside > 1e-10 * max(1.0, float(np.max(np.abs(phi_hat)))):
        raise FieldError("test function is not band-limited to the 2/3-rule box")
    grad_phi = [ops.ifft(ops.ik[a] * phi_hat) for a in range(3)]
    mask = ops.mask if dealias else np.ones(grid.shape, dtype=bool)
    theta = grid.coordinates()[2]
    e = (np.cos(theta), np.sin(theta))

    pairings = []
    integrand = []
    for s in samples:
        F_hat = ops.fft(s.f.values) * mask
        F = ops.ifft(F_hat)
        rho = contract_theta(F, angular_kernel(grid.ntheta, 0))
        U = (1.0 - rho)[..., None]
        grad_rho = ops2.gradient(ops2.fft(rho))
        value = 0.0
        for j in range(2):
            dF = ops.ifft(ops.ik[j] * F_hat)
            if drift:
                value += np.sum(U * F * e[j] * grad_phi[j])
            if cross_diffusion:
                value -= np.sum((U * dF + F * grad_rho[j][..., None]) * grad_phi[j])
            else:
                value -= np.sum(dF * grad_phi[j])
        value -= np.sum(ops.ifft(ops.ik[2] * F_hat) * grad_phi[2])
        integrand.append(float(value) * grid.cell_volume)
        pairings.append(float(np.sum(F * phi.values)) * grid.cell_volume)

    times = [s.t for s in samples]
    flux_integral = float(trapezoid(integrand, times))
    defect = (pairings[-1] - pairings[0]) - flux_integral
    scale = max(abs(pairings[0]), abs(pairings[-1]), abs(flux_integral), 1e-300)
    return WeakResidual(defect=defect, scale=scale, relative=abs(defect) / scale)


class EntropyDissipation(BaseModel):
    times: List[float]
    entropy: List[float]
    rates: List[float]
    drift_enabled: bool
    tolerance: float
    violations: List[int] = Field(default_factory=list, description="sample indices")

    @property
    def max_rate(self) -> float:
        return max(self.rates)


def entropy_dissipation_check(
    samples: Sequence[ModelState],
    drift_enabled: bool,
    tolerance: float = DISSIPATION_TOLERANCE,
    floor: float = DEFAULT_ENTROPY_FLOOR,
) -> EntropyDissipation:
    """dE/dt by second-order finite differences; flags growth only without drift."""
    if len(samples) < 3:
        raise TrajectoryError("entropy dissipation needs at least three samples")
    times = np.array([s.t for s in samples])
    values = np.array([entropy(s.f, floor) for s in samples])
    rates = np.gradient(values, times, edge_order=2)
    violations: List[int] = []
    if not drift_enabled:
        violations = [int(i) for i in np.flatnonzero(rates > tolerance)]
        if violations:
            logger.warning(
                "entropy increased without drift",
                extra={"data": {"samples": violations, "max_rate": float(rates.max())}},
            )
    return EntropyDissipation(
        times=list(times),
        entropy=list(values),
        rates=[float(r) for r in rates],
        drift_enabled=drift_enabled,
        tolerance=tolerance,
        violations=violations,
    )
