"""
Periodic heat kernel on the flat torus and the Duhamel convolution.

Phi(t, x) = sum_n (4 pi t)^{-1} exp(-|x + 2 pi n|^2 / 4t) factorises into two
one-dimensional theta functions, each evaluated either as a lattice sum (small t)
or as its dual cosine series (large t).
"""

from __future__ import annotations

import math
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import trapezoid

from ..logging_setup import get_logger
from .spectral import TWO_PI, RealField, TorusGrid, operators
from .types import DuhamelError, KernelError

logger = get_logger("heatkernel")

Representation = Literal["lattice", "spectral"]
ArrayLike = Union[float, np.ndarray]

CRITICAL_Q = 4.0 / 3.0
TAYLOR_SWITCH = 1e-2
FINE_WINDOW = 12.0


class PeriodicHeatKernel(BaseModel):
    """Evaluator for Phi and grad Phi with a lattice/spectral crossover."""

    model_config = ConfigDict(frozen=True)

    radius: int = Field(default=6, ge=1, description="Maximum lattice radius R")
    t_switch: float = Field(default=1.0, gt=0, description="Lattice sum for t <= t_switch")
    tolerance: float = Field(default=1e-12, gt=0, lt=1)

    # -- one-dimensional theta factors ---------------------------------------

    def lattice_radius(self, t: float) -> int:
        """Smallest R' <= R with exp(-pi^2 (R' - 1)^2 / t) below the tolerance."""
        needed = 1 + math.sqrt(t * math.log(1.0 / self.tolerance)) / math.pi
        r = max(1, math.ceil(needed))
        if r > self.radius:
            logger.warning(
                "lattice radius %d capped at %d for t=%.6g", r, self.radius, t
            )
        return min(r, self.radius)

    def spectral_terms(self, t: float) -> int:
        """K with exp(-K^2 t) below the tolerance."""
        return max(1, math.ceil(math.sqrt(math.log(1.0 / self.tolerance) / t)))

    def _choose(self, t: float, representation: Optional[Representation]) -> Representation:
        if t <= 0:
            raise KernelError(f"heat kernel needs t > 0, got {t}")
        if representation is None:
            return "lattice" if t <= self.t_switch else "spectral"
        if representation not in ("lattice", "spectral"):
            raise KernelError(f"unknown representation '{representation}'")
        return representation

    def theta(
        self,
        t: float,
        x: ArrayLike,
        derivative: bool = False,
        representation: Optional[Representation] = None,
    ) -> np.ndarray:
        """The 1D periodic Gaussian (or its x-derivative) at points x."""
        rep = self._choose(t, representation)
        x = np.asarray(x, dtype=np.float64)
        if rep == "lattice":
            reduced = np.mod(x + math.pi, TWO_PI) - math.pi
            r = self.lattice_radius(t)
            shifts = TWO_PI * np.arange(-r, r + 1).reshape((-1,) + (1,) * x.ndim)
            y = reduced[None, ...] + shifts
            g = np.exp(-(y**2) / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)
            if derivative:
                g = -y / (2.0 * t) * g
            return g.sum(axis=0)
        K = self.spectral_terms(t)
        k = np.arange(1, K + 1).reshape((-1,) + (1,) * x.ndim)
        weights = np.exp(-(k**2) * t)
        if derivative:
            return -(weights * k * np.sin(k * x[None, ...])).sum(axis=0) / math.pi
        return (1.0 + 2.0 * (weights * np.cos(k * x[None, ...])).sum(axis=0)) / TWO_PI

    # -- Phi and grad Phi ----------------------------------------------------

    def phi(
        self, t: float, x: ArrayLike, representation: Optional[Representation] = None
    ) -> np.ndarray:
        """Phi(t, x) for x of shape (2, ...)."""
        x = np.asarray(x, dtype=np.float64)
        return self.theta(t, x[0], representation=representation) * self.theta(
            t, x[1], representation=representation
        )

    def grad_phi(
        self, t: float, x: ArrayLike, representation: Optional[Representation] = None
    ) -> np.ndarray:
        """grad Phi(t, x) with the component axis first."""
        x = np.asarray(x, dtype=np.float64)
        a = self.theta(t, x[0], representation=representation)
        b = self.theta(t, x[1], representation=representation)
        da = self.theta(t, x[0], derivative=True, representation=representation)
        db = self.theta(t, x[1], derivative=True, representation=representation)
        return np.stack([da * b, a * db])

    def mass(self, t: float) -> float:
        """int_Omega Phi(t, .) by a periodic rectangle rule fine enough for e^{-n^2 t}."""
        self._choose(t, None)
        n = max(16, math.ceil(math.sqrt(30.0 / t)) + 1)
        x = np.arange(n) * (TWO_PI / n)
        line = float(np.sum(self.theta(t, x)) * TWO_PI / n)
        return line * line

    def sample(self, t: float, grid: TorusGrid) -> RealField:
        """Phi(t, .) on the grid points of Omega."""
        omega = grid.spatial()
        return RealField(omega, self.phi(t, np.stack(omega.mesh())))

    def coefficients(self, t: float, grid: TorusGrid) -> np.ndarray:
        """FFT coefficients of Phi(t, .) on the grid: N exp(-|k|^2 t) / (2 pi)^2."""
        if t <= 0:
            raise KernelError(f"heat kernel needs t > 0, got {t}")
        omega = grid.spatial()
        ops = operators(omega)
        return omega.point_count * np.exp(-ops.k2_true * t) / TWO_PI**2

    def semigroup(self, field: RealField, t: float) -> RealField:
        """Convolution with Phi(t, .), i.e. exp(t Laplacian) applied to ``field``."""
        if t < 0:
            raise KernelError(f"semigroup time must be non-negative, got {t}")
        ops = operators(field.grid)
        return RealField(field.grid, ops.ifft(ops.fft(field.values) * np.exp(-ops.k2_true * t)))

    # -- space-time norms ----------------------------------------------------

    def grad_lq_norm(self, q: float, s: float) -> float:
        """||grad Phi(s, .)||_{L^q(Omega)}^q."""
        half_width = FINE_WINDOW * math.sqrt(s)
        if half_width < math.pi:
            x = np.linspace(-half_width, half_width, 129)
            weights_1d = np.full(x.size, x[1] - x[0])
            weights_1d[[0, -1]] *= 0.5
        else:
            x = np.arange(128) * (TWO_PI / 128)
            weights_1d = np.full(x.size, TWO_PI / 128)
        a, da = self.theta(s, x), self.theta(s, x, derivative=True)
        magnitude = np.sqrt(np.outer(da, a) ** 2 + np.outer(a, da) ** 2)
        return float(np.sum(magnitude**q * np.outer(weights_1d, weights_1d)))

    def grad_lq_spacetime_norm(
        self, q: float, t: float, rtol: float = 1e-6, max_nodes: int = 1024
    ) -> float:
        """||grad Phi||_{L^q((0, t) x Omega)} by graded quadrature.

        s = t sigma^gamma with gamma = max(2, 2 / (2 - 3q/2)) makes the
        transformed integrand vanish linearly at sigma = 0.
        """
        if not 1.0 <= q < CRITICAL_Q:
            raise KernelError(
                f"q = {q} outside [1, 4/3): the space-time norm of grad Phi "
                "diverges for q >= 4/3"
            )
        if t <= 0:
            raise KernelError(f"t must be positive, got {t}")
        gamma = max(2.0, 2.0 / (2.0 - 1.5 * q))
        previous = None
        nodes = 32
        while True:
            sigma = np.linspace(0.0, 1.0, nodes + 1)
            values = np.zeros_like(sigma)
            for j in range(1, sigma.size):
                s = t * sigma[j] ** gamma
                values[j] = self.grad_lq_norm(q, s) * t * gamma * sigma[j] ** (gamma - 1.0)
            current = float(trapezoid(values, sigma))
            if previous is not None and abs(current - previous) <= rtol * abs(current):
                break
            if nodes >= max_nodes:
                logger.warning(
                    "graded quadrature not converged",
                    extra={"data": {"q": q, "t": t, "nodes": nodes}},
                )
                break
            previous = current
            nodes *= 2
        return current ** (1.0 / q)


class KernelRow(BaseModel):
    q: float
    t: float
    norm: float


class ScalingFit(BaseModel):
    q: float
    slope: float
    expected: float
    relative_error: float


def expected_exponent(q: float) -> float:
    """(4 - 3q) / (2q)."""
    return (4.0 - 3.0 * q) / (2.0 * q)


def kernel_table(
    qs: Sequence[float],
    times: Sequence[float],
    kernel: Optional[PeriodicHeatKernel] = None,
) -> List[KernelRow]:
    kernel = kernel or PeriodicHeatKernel()
    return [
        KernelRow(q=q, t=t, norm=kernel.grad_lq_spacetime_norm(q, t))
        for q in qs
        for t in times
    ]


def fit_scaling_exponent(
    q: float, times: Sequence[float], kernel: Optional[PeriodicHeatKernel] = None
) -> ScalingFit:
    """Least-squares log-log slope of the space-time norm against t."""
    if len(times) < 2:
        raise KernelError("scaling fit needs at least two times")
    rows = kernel_table([q], times, kernel)
    slope, _ = np.polyfit(np.log([r.t for r in rows]), np.log([r.norm for r in rows]), 1)
    expected = expected_exponent(q)
    return ScalingFit(
        q=q,
        slope=float(slope),
        expected=expected,
        relative_error=abs(float(slope) - expected) / abs(expected),
    )


# -- Duhamel convolution ---------------------------------------------------


def _phi_weights(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """phi1 = (e^z - 1) / z and phi2 = (e^z - 1 - z) / z^2, Taylor near 0."""
    small = np.abs(z) < TAYLOR_SWITCH
    safe = np.where(small, 1.0, z)
    em1 = np.expm1(safe)
    phi1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, em1 / safe)
    phi2 = np.where(
        small,
        0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720,
        (em1 - safe) / safe**2,
    )
    return phi1, phi2


def duhamel(
    series: Sequence[Tuple[float, RealField]],
    t: float,
    initial: Optional[RealField] = None,
) -> RealField:
    """rho(t) = exp(t Lap) rho0 - int_0^t exp((t - tau) Lap) div G(tau) dtau.

    G is interpolated linearly between samples and each interval is integrated
    exactly in coefficient space, so only the interpolation error of G remains.
    The time origin is the first sample.
    """
    if not series:
        raise DuhamelError("empty forcing series")
    times = np.array([tau for tau, _ in series], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise DuhamelError("forcing sample times must be strictly increasing")
    slack = 1e-12 * max(1.0, abs(times[-1]))
    if not times[0] - slack <= t <= times[-1] + slack:
        raise DuhamelError(
            f"t = {t} outside the sampled range [{times[0]}, {times[-1]}]"
        )
    grid = series[0][1].grid
    if grid.dims != 2 or series[0][1].rank != 1:
        raise DuhamelError("forcing must be a vector field on Omega")
    ops = operators(grid)
    lam = ops.k2_true

    def div_hat(field: RealField) -> np.ndarray:
        return ops.divergence_hat(field.values, masked=False)

    out = np.zeros(grid.shape, dtype=np.complex128)
    if initial is not None:
        out += ops.fft(initial.values) * np.exp(-lam * (t - times[0]))

    for (ta, ga), (tb, gb) in zip(series, series[1:]):
        if ta >= t - slack:
            break
        da = div_hat(ga)
        db = div_hat(gb)
        if tb > t + slack:
            # partial interval: interpolate G at t
            w = (t - ta) / (tb - ta)
            db = (1.0 - w) * da + w * db
            tb = t
        h = tb - ta
        phi1, phi2 = _phi_weights(-lam * h)
        out -= h * np.exp(-lam * (t - tb)) * (da * (phi1 - phi2) + db * phi2)
    return RealField(grid, ops.ifft(out))
