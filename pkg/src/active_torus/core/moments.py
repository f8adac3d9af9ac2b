"""
Angular moments of a distribution f(x, theta) and the entropy functional.

With e(theta) = (cos theta, sin theta) the order-n moment is
pi^n(x) = int f(x, theta) e(theta)^{(x)n} dtheta, so pi^0 = rho, pi^1 = p and
pi^2 = P. The source tensors use the kernel d^2/dtheta^2 of the same product.
Tensors are stored densely: order n has component shape (2,) * n.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.special import xlogy

from ..logging_setup import get_logger
from .spectral import TWO_PI, RealField
from .types import EntropyDomainError, FieldError

logger = get_logger("moments")

DEFAULT_MAX_ORDER = 3
DEFAULT_ENTROPY_FLOOR = 1e-12


@functools.lru_cache(maxsize=64)
def angular_kernel(ntheta: int, n: int) -> np.ndarray:
    """e(theta)^{(x)n} on the theta nodes, shape (2,)*n + (ntheta,)."""
    theta = np.arange(ntheta) * (TWO_PI / ntheta)
    e = np.stack([np.cos(theta), np.sin(theta)])
    kernel = np.ones(ntheta)
    for _ in range(n):
        kernel = e.reshape((2,) + (1,) * (kernel.ndim - 1) + (ntheta,)) * kernel[None]
    kernel.setflags(write=False)
    return kernel


@functools.lru_cache(maxsize=64)
def angular_source_kernel(ntheta: int, n: int) -> np.ndarray:
    """Second theta-derivative of ``angular_kernel``, taken spectrally."""
    kernel = angular_kernel(ntheta, n)
    k = np.fft.fftfreq(ntheta, d=1.0 / ntheta)
    k[ntheta // 2] = 0.0
    source = np.fft.ifft(-(k**2) * np.fft.fft(kernel, axis=-1), axis=-1).real
    source.setflags(write=False)
    return source


def contract_theta(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Trapezoid theta-quadrature of values(x, y, theta) against a tensor kernel.

    Exact for trigonometric integrands of bandwidth below ntheta.
    """
    ntheta = values.shape[-1]
    return np.tensordot(kernel, values, axes=([-1], [-1])) * (TWO_PI / ntheta)


def _require_distribution(f: RealField) -> None:
    if f.grid.dims != 3 or f.rank != 0:
        raise FieldError("moments need a scalar field on the space-angle grid")


def moment_tensor(
    f: RealField, n: int, max_order: int = DEFAULT_MAX_ORDER
) -> RealField:
    """Order-n angular moment of f as a field on Omega."""
    _require_distribution(f)
    if n < 0:
        raise FieldError(f"moment order must be non-negative, got {n}")
    if n > max_order:
        raise FieldError(f"moment order {n} exceeds configured maximum {max_order}")
    kernel = angular_kernel(f.grid.ntheta, n)
    return RealField(f.grid.spatial(), contract_theta(f.values, kernel))


def moment_source(
    f: RealField, n: int, max_order: int = DEFAULT_MAX_ORDER
) -> RealField:
    """Order-n source tensor: int f d^2/dtheta^2 (e^{(x)n}) dtheta."""
    _require_distribution(f)
    if n < 0 or n > max_order:
        raise FieldError(f"source order must lie in [0, {max_order}], got {n}")
    omega = f.grid.spatial()
    if n == 0:
        logger.info("order-0 source kernel vanishes identically; returning zero field")
        return RealField(omega, np.zeros(omega.shape))
    kernel = angular_source_kernel(f.grid.ntheta, n)
    return RealField(omega, contract_theta(f.values, kernel))


def max_entry(field_: RealField) -> np.ndarray:
    """Pointwise max-entry tensor norm."""
    if field_.rank == 0:
        return np.abs(field_.values)
    return np.max(np.abs(field_.values), axis=tuple(range(field_.rank)))


@dataclass(frozen=True)
class MomentSet:
    """rho, p, P and the higher tensors/sources of one distribution."""

    rho: RealField
    p: RealField
    P: RealField
    tensors: Dict[int, RealField] = field(default_factory=dict)
    sources: Dict[int, RealField] = field(default_factory=dict)

    @property
    def max_order(self) -> int:
        return max(self.tensors)

    def tensor(self, n: int) -> RealField:
        try:
            return self.tensors[n]
        except KeyError:
            raise FieldError(f"moment order {n} was not computed") from None

    def polarisation_excess(self) -> float:
        """max(|p| - rho); non-positive whenever f >= 0."""
        p_norm = np.sqrt(np.sum(self.p.values**2, axis=0))
        return float(np.max(p_norm - self.rho.values))

    def tensor_bound_excess(self) -> float:
        """max over n >= 1 of (|pi^n|, |source^n|) - n^2 rho in the max-entry norm."""
        excess = -np.inf
        for n in range(1, self.max_order + 1):
            bound = n * n * self.rho.values
            excess = max(excess, float(np.max(max_entry(self.tensors[n]) - bound)))
            excess = max(excess, float(np.max(max_entry(self.sources[n]) - bound)))
        return excess

    def trace_defect(self) -> float:
        """max |trace P - rho|."""
        trace = self.P.values[0, 0] + self.P.values[1, 1]
        return float(np.max(np.abs(trace - self.rho.values)))


def compute_moments(f: RealField, max_order: int = DEFAULT_MAX_ORDER) -> MomentSet:
    """All tensors pi^0..pi^max_order and their sources."""
    _require_distribution(f)
    max_order = max(max_order, 2)
    tensors = {n: moment_tensor(f, n, max_order) for n in range(max_order + 1)}
    sources = {n: moment_source(f, n, max_order) for n in range(1, max_order + 1)}
    sources[0] = RealField(f.grid.spatial(), np.zeros(f.grid.spatial().shape))
    return MomentSet(
        rho=tensors[0], p=tensors[1], P=tensors[2], tensors=tensors, sources=sources
    )


def entropy(f: RealField, floor: float = DEFAULT_ENTROPY_FLOOR) -> float:
    """E[f] = int_Upsilon f log f + int_Omega (1 - rho) log(1 - rho).

    The density term is integrated over Omega, so its first variation in f is
    log f - log(1 - rho). Entries of f in [-floor, 0) are clamped to 0 and x log x
    is extended by 0 at 0.
    """
    _require_distribution(f)
    values = f.values
    negative = values < -floor
    if negative.any():
        raise EntropyDomainError("f < -floor", float(np.mean(negative)))
    rho = contract_theta(values, angular_kernel(f.grid.ntheta, 0))
    saturated = rho > 1.0 + floor
    if saturated.any():
        raise EntropyDomainError("rho > 1 + floor", float(np.mean(saturated)))
    clamped = np.maximum(values, 0.0)
    vacancy = np.maximum(1.0 - rho, 0.0)
    kinetic = np.sum(xlogy(clamped, clamped)) * f.grid.cell_volume
    packing = np.sum(xlogy(vacancy, vacancy)) * f.grid.spatial().cell_volume
    return float(kinetic + packing)
