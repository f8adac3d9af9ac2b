"""
Barrier functions h used in the v = h(1 - rho) transform.

An admissible h is nonnegative on (0, 1], satisfies h' < 0 < h'', blows up at
0+ and keeps s h''(s) / h'(s) bounded. ``certify`` checks these on a log-spaced
validation mesh and reports M = sup(s |h'(s)| - h(s)) on that mesh.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..logging_setup import get_logger
from .types import CertificateError

logger = get_logger("hfunctions")

VALIDATION_MESH = np.logspace(-8.0, 0.0, 400)
MONOTONICITY_MESSAGE = "h' < 0 < h'' violated on (0,1]"

ArrayFn = Callable[[np.ndarray], np.ndarray]


class HCertificate(BaseModel):
    """Outcome of validating an h function on the mesh."""

    family: str
    parameters: Dict[str, float] = Field(default_factory=dict)
    valid: bool
    issues: List[str] = Field(default_factory=list)
    blows_up: bool
    m_constant: float = Field(description="max(0, sup s|h'| - h) on the mesh")
    ratio_sup: float = Field(description="sup |s h''/h'| on the mesh")
    ratio_inf: float = Field(description="inf |s h''/h'| on the mesh")


class HFunction(ABC):
    """An h family with analytic first and second derivatives."""

    family: str = "generic"
    # Families whose blow-up at 0+ is known analytically skip the numeric size test.
    analytic_blow_up: Optional[bool] = None

    @property
    def parameters(self) -> Dict[str, float]:
        return {}

    @abstractmethod
    def h(self, s: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def dh(self, s: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def d2h(self, s: np.ndarray) -> np.ndarray: ...

    def certificate(self) -> HCertificate:
        return validate_h(self)

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v}" for k, v in self.parameters.items())
        return f"{type(self).__name__}({params})"


class PowerH(HFunction):
    """h(s) = s^{-q}; s h''/h' = -(q + 1)."""

    family = "power"

    def __init__(self, q: float = 2.0):
        self.q = float(q)
        self.analytic_blow_up = self.q > 0

    @property
    def parameters(self) -> Dict[str, float]:
        return {"q": self.q}

    def h(self, s: np.ndarray) -> np.ndarray:
        return np.power(s, -self.q)

    def dh(self, s: np.ndarray) -> np.ndarray:
        return -self.q * np.power(s, -self.q - 1.0)

    def d2h(self, s: np.ndarray) -> np.ndarray:
        return self.q * (self.q + 1.0) * np.power(s, -self.q - 2.0)


class LogLogH(HFunction):
    """h(s) = 1 - log 2 + log(-log s) on (0, e^-2], exponential C^2 extension beyond.

    The shift makes h(e^-2) = 1 so the extension exp(-(e^2/2)(s - e^-2)) matches
    value, slope and curvature there; h stays nonnegative, decreasing and convex.
    """

    family = "loglog"
    analytic_blow_up = True
    junction = math.exp(-2.0)
    _rate = math.exp(2.0) / 2.0

    def _split(self, s: np.ndarray) -> tuple:
        s = np.asarray(s, dtype=np.float64)
        inner = s <= self.junction
        safe = np.where(inner, s, self.junction)
        return s, inner, safe, np.log(safe)

    def h(self, s: np.ndarray) -> np.ndarray:
        s, inner, safe, log_s = self._split(s)
        core = 1.0 - math.log(2.0) + np.log(-log_s)
        tail = np.exp(-self._rate * (s - self.junction))
        return np.where(inner, core, tail)

    def dh(self, s: np.ndarray) -> np.ndarray:
        s, inner, safe, log_s = self._split(s)
        core = 1.0 / (safe * log_s)
        tail = -self._rate * np.exp(-self._rate * (s - self.junction))
        return np.where(inner, core, tail)

    def d2h(self, s: np.ndarray) -> np.ndarray:
        s, inner, safe, log_s = self._split(s)
        core = -(1.0 + log_s) / (safe * log_s) ** 2
        tail = self._rate**2 * np.exp(-self._rate * (s - self.junction))
        return np.where(inner, core, tail)


class CallableH(HFunction):
    """User-supplied h with explicit derivatives; validated numerically."""

    def __init__(self, h: ArrayFn, dh: ArrayFn, d2h: ArrayFn, family: str = "custom"):
        self._h, self._dh, self._d2h = h, dh, d2h
        self.family = family

    def h(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self._h(s), dtype=np.float64)

    def dh(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self._dh(s), dtype=np.float64)

    def d2h(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self._d2h(s), dtype=np.float64)


def validate_h(h: HFunction, mesh: np.ndarray = VALIDATION_MESH) -> HCertificate:
    """Check admissibility on the mesh and estimate the reported constants."""
    issues: List[str] = []
    with np.errstate(all="ignore"):
        values, first, second = h.h(mesh), h.dh(mesh), h.d2h(mesh)
        ratio = mesh * second / first
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(first)) and np.all(np.isfinite(second))):
        issues.append("h or its derivatives are not finite on (0,1]")
    if np.any(values < 0):
        issues.append("h >= 0 violated on (0,1]")
    if not (np.all(first < 0) and np.all(second > 0)):
        issues.append(MONOTONICITY_MESSAGE)

    near_zero = h.h(np.array([1e-8, 1e-4, 1e-2]))
    ordered = bool(near_zero[0] > near_zero[1] > near_zero[2])
    if h.analytic_blow_up is None:
        blows_up = ordered and bool(near_zero[0] > 1e3)
    else:
        blows_up = ordered and bool(h.analytic_blow_up)
    if not blows_up:
        issues.append("h(s) does not blow up as s -> 0+")

    finite_ratio = np.isfinite(ratio)
    if not finite_ratio.all():
        issues.append("s h''/h' is unbounded on the validation mesh")
    abs_ratio = np.abs(ratio[finite_ratio]) if finite_ratio.any() else np.array([np.inf])
    with np.errstate(all="ignore"):
        excess = mesh * np.abs(first) - values
    m_constant = float(max(0.0, np.nanmax(excess))) if np.isfinite(excess).any() else math.inf

    certificate = HCertificate(
        family=h.family,
        parameters=h.parameters,
        valid=not issues,
        issues=issues,
        blows_up=blows_up,
        m_constant=m_constant,
        ratio_sup=float(np.max(abs_ratio)),
        ratio_inf=float(np.min(abs_ratio)),
    )
    if issues:
        logger.warning(
            "h function rejected",
            extra={"data": {"family": h.family, "issues": issues}},
        )
    return certificate


def certify(h: HFunction) -> HCertificate:
    """Validate and raise CertificateError when h is not admissible."""
    certificate = validate_h(h)
    if not certificate.valid:
        params = ", ".join(f"{k} = {v}" for k, v in certificate.parameters.items())
        prefix = f"h family '{h.family}'" + (f" ({params})" if params else "")
        raise CertificateError([f"{prefix}: {issue}" for issue in certificate.issues])
    return certificate


def make_h(family: str, q: float = 2.0) -> HFunction:
    """Build a named family; raises CertificateError for unknown names."""
    if family == "power":
        return PowerH(q)
    if family == "loglog":
        return LogLogH()
    raise CertificateError([f"unknown h family '{family}' (expected power or loglog)"])
