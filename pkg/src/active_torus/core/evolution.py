"""
Right-hand sides and time integration for the kinetic equation

    d_t f = -div((1 - rho) f e(theta)) + div((1 - rho) grad f + f grad rho) + d_theta^2 f

on Upsilon, together with the moment equations it implies, the v = h(1 - rho)
equation, the tangent system for d_t f and the difference system of two
solutions.

Every quadratic product is formed from 2/3-truncated factors and truncated
again, so products are alias-free and the moment identities hold to roundoff.
The stepper is an integrating-factor SSP Runge-Kutta 2: the full space-angle
Laplacian is applied exactly through exp(-|k|^2 dt), the remainder explicitly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import expm

from ..logging_setup import get_logger, log_event
from .diagnostics import NormReport, norm_report, window_monitors
from .hfunctions import HFunction
from .moments import MomentSet, angular_kernel, angular_source_kernel, contract_theta
from .spectral import TWO_PI, RealField, TorusGrid, operators
from .state import ModelState, Trajectory, TrajectorySummary
from .types import (
    ConfigError,
    DomainError,
    FieldError,
    SolverAbort,
    TangentError,
    TrajectoryError,
)

logger = get_logger("evolution")

EPSILON_SWITCH = 1e-6


class SolverConfig(BaseModel):
    """Time-stepping and physics switches for one trajectory."""

    model_config = ConfigDict(extra="forbid")

    dt: Optional[float] = Field(
        default=None, gt=0, description="Step size; none uses the pre-run estimate"
    )
    t_end: float = Field(default=1.0, gt=0, description="Final time")
    form: Literal["divergence", "nondivergence"] = Field(
        default="divergence", description="Form of the cross-diffusion terms"
    )
    galerkin_cutoff: Optional[int] = Field(
        default=None, ge=1, description="Keep the first N eigenfunctions of -Laplacian"
    )
    cadence: int = Field(default=10, ge=1, description="Steps between diagnostic samples")
    positivity_floor: float = Field(
        default=1e-6, ge=0, description="Abort when rho exceeds 1 + floor"
    )
    dealias: bool = Field(default=True, description="2/3-rule truncation of products")
    drift: bool = Field(default=True, description="Self-propulsion term")
    cross_diffusion: bool = Field(
        default=True, description="Degenerate cross-diffusion; off leaves plain diffusion"
    )
    max_moment_order: int = Field(default=3, ge=2, description="Highest tensor order")


class RunSink(Protocol):
    """Receiver of diagnostics, events and checkpoints for one run."""

    def record(self, report: NormReport) -> None: ...

    def event(self, kind: str, payload: Mapping[str, Any]) -> None: ...

    def checkpoint(self, state: ModelState, force: bool = False) -> Optional[Any]: ...


class _Snapshot:
    """Truncated fields of one state, shared by the assembly routines."""

    def __init__(self, operator: "KineticOperator", f_hat: np.ndarray):
        ops, ops2 = operator.ops, operator.ops2
        self.operator = operator
        self.F_hat = f_hat * operator.mask
        self.F = ops.ifft(self.F_hat)
        self.rho = self.F.sum(axis=-1) * operator.dtheta
        self.U = 1.0 - self.rho
        self.rho_hat = ops2.fft(self.rho)
        self.grad_rho = ops2.gradient(self.rho_hat)
        self._grad_F: Optional[np.ndarray] = None

    @property
    def grad_F(self) -> np.ndarray:
        if self._grad_F is None:
            self._grad_F = self.operator.ops.gradient(self.F_hat, axes=(0, 1))
        return self._grad_F

    def moment(self, n: int) -> np.ndarray:
        return contract_theta(self.F, angular_kernel(self.F.shape[-1], n))

    def source(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros_like(self.rho)
        return contract_theta(self.F, angular_source_kernel(self.F.shape[-1], n))


class KineticOperator:
    """Assembles every right-hand side on one grid with one set of switches."""

    def __init__(self, grid: TorusGrid, config: Optional[SolverConfig] = None):
        if grid.dims != 3:
            raise FieldError("the kinetic operator needs the space-angle grid")
        self.grid = grid
        self.config = config or SolverConfig()
        self.ops = operators(grid)
        self.ops2 = operators(grid.spatial())
        dealias = self.config.dealias
        self.mask = self.ops.mask if dealias else np.ones(grid.shape, dtype=bool)
        self.mask2 = (
            self.ops2.mask if dealias else np.ones(grid.spatial().shape, dtype=bool)
        )
        self.dtheta = TWO_PI / grid.ntheta
        theta = grid.coordinates()[2]
        self.cos = np.cos(theta)
        self.sin = np.sin(theta)
        self.k2_x = self.ops.kd[0] ** 2 + self.ops.kd[1] ** 2
        self.k2_theta = self.ops.kd[2] ** 2
        self._factors: Dict[float, np.ndarray] = {}

    # -- helpers -----------------------------------------------------------

    def snapshot(self, values: np.ndarray) -> _Snapshot:
        return _Snapshot(self, self.ops.fft(values))

    def project2(self, values: np.ndarray) -> np.ndarray:
        return self.ops2.ifft(self.ops2.fft(values) * self.mask2)

    def grad2(self, values: np.ndarray) -> np.ndarray:
        return self.ops2.gradient(self.ops2.fft(values))

    def grad_last(self, tensor: np.ndarray) -> np.ndarray:
        """Gradient of a tensor on Omega with the derivative index appended last."""
        g = self.ops2.gradient(self.ops2.fft(tensor))
        return np.moveaxis(g, 0, tensor.ndim - 2)

    def div2(self, flux: np.ndarray) -> np.ndarray:
        return self.ops2.ifft(self.ops2.divergence_hat(flux, masked=self.config.dealias))

    def _kinetic_divergence_hat(self, jx: np.ndarray, jy: np.ndarray) -> np.ndarray:
        return self.ops.divergence_hat(np.stack([jx, jy]), masked=self.config.dealias)

    def integrating_factor(self, dt: float) -> np.ndarray:
        factor = self._factors.get(dt)
        if factor is None:
            factor = np.exp(-self.ops.k2_true * dt)
            self._factors[dt] = factor
        return factor

    # -- kinetic equation --------------------------------------------------

    def rhs_hat(self, f_hat: np.ndarray, form: Optional[str] = None) -> np.ndarray:
        """Coefficients of rhs_f for coefficients f_hat."""
        return self._rhs_from_snapshot(_Snapshot(self, f_hat), form or self.config.form)

    def _rhs_from_snapshot(self, snap: _Snapshot, form: str) -> np.ndarray:
        cfg = self.config
        F, U = snap.F, snap.U[..., None]
        jx = np.zeros_like(F)
        jy = np.zeros_like(F)
        if cfg.drift:
            carried = U * F
            jx -= carried * self.cos
            jy -= carried * self.sin
        if form == "divergence":
            grad_F = snap.grad_F
            if cfg.cross_diffusion:
                jx += U * grad_F[0] + F * snap.grad_rho[0][..., None]
                jy += U * grad_F[1] + F * snap.grad_rho[1][..., None]
            else:
                jx += grad_F[0]
                jy += grad_F[1]
            out = self._kinetic_divergence_hat(jx, jy)
        elif form == "nondivergence":
            out = (
                self._kinetic_divergence_hat(jx, jy)
                if cfg.drift
                else np.zeros_like(snap.F_hat)
            )
            if cfg.cross_diffusion:
                lap_F = self.ops.ifft(-self.k2_x * snap.F_hat)
                lap_rho = self.ops2.ifft(-self.ops2.k2 * snap.rho_hat)
                out = out + self.mask * self.ops.fft(U * lap_F + F * lap_rho[..., None])
            else:
                out = out - self.k2_x * snap.F_hat
        else:
            raise ConfigError([f"unknown form '{form}'"])
        return out - self.k2_theta * snap.F_hat

    def nonlinear_hat(self, f_hat: np.ndarray) -> np.ndarray:
        """rhs_f minus the space-angle Laplacian applied by the integrating factor."""
        return self.rhs_hat(f_hat) + self.ops.k2_true * (f_hat * self.mask)

    # -- moment equations --------------------------------------------------

    def tensor_rhs(self, snap: _Snapshot, n: int) -> np.ndarray:
        cfg = self.config
        m_n = snap.moment(n)
        flux = np.zeros((2,) * (n + 1) + snap.rho.shape)
        if cfg.drift:
            flux -= snap.U * snap.moment(n + 1)
        if cfg.cross_diffusion:
            flux += snap.U * self.grad_last(m_n) + m_n[..., None, :, :] * snap.grad_rho
        else:
            flux += self.grad_last(m_n)
        return self.div2(flux) + snap.source(n)

    def moment_variation(
        self,
        n: int,
        snap: _Snapshot,
        base_n: np.ndarray,
        base_n1: np.ndarray,
        delta_n: np.ndarray,
        delta_n1: np.ndarray,
        delta_rho: np.ndarray,
        delta_source: np.ndarray,
    ) -> np.ndarray:
        """Order-n moment of the variation system around ``snap`` and ``base``.

        Flux: -(U delta^{n+1} - delta_rho base^{n+1})
              + U grad delta^n - delta_rho grad base^n
              + delta^n (x) grad rho + base^n (x) grad delta_rho
        """
        cfg = self.config
        flux = np.zeros((2,) * (n + 1) + snap.rho.shape)
        if cfg.drift:
            flux -= snap.U * delta_n1 - delta_rho * base_n1
        if n == 0 or not cfg.cross_diffusion:
            flux += self.grad_last(delta_n)
        else:
            flux += (
                snap.U * self.grad_last(delta_n)
                - delta_rho * self.grad_last(base_n)
                + delta_n[..., None, :, :] * snap.grad_rho
                + base_n[..., None, :, :] * self.grad2(delta_rho)
            )
        return self.div2(flux) + delta_source

    def kinetic_variation(
        self,
        snap: _Snapshot,
        base: _Snapshot,
        delta_hat: np.ndarray,
        delta_rho: np.ndarray,
    ) -> np.ndarray:
        """Variation of rhs_f: coefficients U and grad rho from ``snap``, f from ``base``.

        -div[(U df - drho f) e] + div[U grad df - drho grad f + df grad rho + f grad drho]
        + d_theta^2 df
        """
        cfg = self.config
        delta = self.ops.ifft(delta_hat)
        U = snap.U[..., None]
        jx = np.zeros_like(delta)
        jy = np.zeros_like(delta)
        if cfg.drift:
            carried = U * delta - delta_rho[..., None] * base.F
            jx -= carried * self.cos
            jy -= carried * self.sin
        grad_delta = self.ops.gradient(delta_hat, axes=(0, 1))
        if cfg.cross_diffusion:
            grad_drho = self.grad2(delta_rho)
            for j, flux in enumerate((jx, jy)):
                flux += (
                    U * grad_delta[j]
                    - delta_rho[..., None] * base.grad_F[j]
                    + delta * snap.grad_rho[j][..., None]
                    + base.F * grad_drho[j][..., None]
                )
        else:
            jx += grad_delta[0]
            jy += grad_delta[1]
        out = self._kinetic_divergence_hat(jx, jy) - self.k2_theta * delta_hat
        return self.ops.ifft(out)


def _operator_for(state: ModelState, config: Optional[SolverConfig]) -> KineticOperator:
    return KineticOperator(state.grid, config)


def rhs_f(
    state: ModelState, form: Optional[str] = None, config: Optional[SolverConfig] = None
) -> RealField:
    """Right-hand side of the kinetic equation in divergence or non-divergence form."""
    operator = _operator_for(state, config)
    coefficients = operator.rhs_hat(operator.ops.fft(state.f.values), form)
    return RealField(state.grid, operator.ops.ifft(coefficients))


def rhs_rho(moments: MomentSet, config: Optional[SolverConfig] = None) -> RealField:
    """-div((1 - rho) p) + Laplacian(rho), from truncated moments."""
    omega = moments.rho.grid
    cfg = config or SolverConfig()
    ops2 = operators(omega)
    mask = ops2.mask if cfg.dealias else 1.0
    rho_hat = ops2.fft(moments.rho.values) * mask
    out_hat = -ops2.k2 * rho_hat
    if cfg.drift:
        rho = ops2.ifft(rho_hat)
        p = ops2.ifft(ops2.fft(moments.p.values) * mask)
        out_hat = out_hat - ops2.divergence_hat((1.0 - rho) * p, masked=cfg.dealias)
    return RealField(omega, ops2.ifft(out_hat))


def rhs_tensor(
    state: ModelState, n: int, config: Optional[SolverConfig] = None
) -> RealField:
    """Evolution of the order-n moment tensor, source term included."""
    operator = _operator_for(state, config)
    if n < 0 or n + 1 > operator.config.max_moment_order:
        raise FieldError(
            f"rhs_tensor({n}) needs order {n + 1} moments; configured maximum is "
            f"{operator.config.max_moment_order}"
        )
    snap = operator.snapshot(state.f.values)
    return RealField(state.grid.spatial(), operator.tensor_rhs(snap, n))


def rhs_p(state: ModelState, config: Optional[SolverConfig] = None) -> RealField:
    """Polarisation equation; the order-1 source equals -p."""
    return rhs_tensor(state, 1, config)


def _default_epsilon(u: np.ndarray) -> float:
    return 0.0 if float(np.min(u)) > EPSILON_SWITCH else EPSILON_SWITCH


def rhs_v(
    state: ModelState,
    h: HFunction,
    epsilon: Optional[float] = None,
    drift: bool = True,
) -> RealField:
    """Right-hand side of the equation for v = h(u + epsilon), u = 1 - rho.

    div(p u h'(u+eps)) - (u h''/h') p . grad v + Laplacian v - (h''/h'^2) |grad v|^2

    Evaluated pseudo-spectrally without truncation since h is not polynomial.
    """
    rho = state.moments.rho
    omega = rho.grid
    ops2 = operators(omega)
    u = 1.0 - rho.values
    eps = _default_epsilon(u) if epsilon is None else float(epsilon)
    if eps < 0:
        raise DomainError(f"epsilon must be non-negative, got {eps}")
    s = u + eps
    if np.any(s <= 0):
        index = tuple(int(i) for i in np.unravel_index(int(np.argmin(s)), s.shape))
        coords = tuple(float(c[i]) for c, i in zip(omega.coordinates(), index))
        raise DomainError("u + epsilon <= 0", index=index, coordinates=coords)
    v = h.h(s)
    h1 = h.dh(s)
    h2 = h.d2h(s)
    v_hat = ops2.fft(v)
    grad_v = ops2.gradient(v_hat)
    out = ops2.ifft(-ops2.k2 * v_hat) - (h2 / h1**2) * np.sum(grad_v**2, axis=0)
    if drift:
        p = state.moments.p.values
        out += ops2.ifft(ops2.divergence_hat(p * u * h1, masked=False))
        out -= (u * h2 / h1) * np.sum(p * grad_v, axis=0)
    return RealField(omega, out)


def rhs_fdot(
    state: ModelState,
    fdot: Optional[RealField],
    rhodot: Optional[RealField] = None,
    config: Optional[SolverConfig] = None,
) -> RealField:
    """Tangent equation for d_t f; rho-dot defaults to the theta-integral of f-dot."""
    if fdot is None:
        raise TangentError("rhs_fdot needs f-dot (finite differences of stored states)")
    operator = _operator_for(state, config)
    snap = operator.snapshot(state.f.values)
    delta_hat = operator.ops.fft(fdot.values) * operator.mask
    if rhodot is None:
        delta_rho = operator.ops.ifft(delta_hat).sum(axis=-1) * operator.dtheta
    else:
        delta_rho = operator.project2(rhodot.values)
    return RealField(state.grid, operator.kinetic_variation(snap, snap, delta_hat, delta_rho))


def rhs_rhodot(
    state: ModelState,
    rhodot: Optional[RealField],
    pdot: Optional[RealField],
    config: Optional[SolverConfig] = None,
) -> RealField:
    """-div((1 - rho) p-dot - rho-dot p) + Laplacian(rho-dot)."""
    if rhodot is None or pdot is None:
        raise TangentError("rhs_rhodot needs both rho-dot and p-dot")
    operator = _operator_for(state, config)
    snap = operator.snapshot(state.f.values)
    delta_rho = operator.project2(rhodot.values)
    out = operator.moment_variation(
        0,
        snap,
        base_n=snap.rho,
        base_n1=snap.moment(1),
        delta_n=delta_rho,
        delta_n1=operator.project2(pdot.values),
        delta_rho=delta_rho,
        delta_source=np.zeros_like(delta_rho),
    )
    return RealField(state.grid.spatial(), out)


def rhs_pdot(
    state: ModelState, fdot: Optional[RealField], config: Optional[SolverConfig] = None
) -> RealField:
    """Tangent polarisation equation, moments of f-dot taken internally."""
    if fdot is None:
        raise TangentError("rhs_pdot needs f-dot")
    operator = _operator_for(state, config)
    snap = operator.snapshot(state.f.values)
    dsnap = operator.snapshot(fdot.values)
    out = operator.moment_variation(
        1,
        snap,
        base_n=snap.moment(1),
        base_n1=snap.moment(2),
        delta_n=dsnap.moment(1),
        delta_n1=dsnap.moment(2),
        delta_rho=dsnap.rho,
        delta_source=dsnap.source(1),
    )
    return RealField(state.grid.spatial(), out)


def tangent_from_history(previous: ModelState, following: ModelState) -> RealField:
    """Centred difference (f(t+) - f(t-)) / (t+ - t-), second order at the midpoint."""
    span = following.t - previous.t
    if span <= 0:
        raise TangentError("states must be ordered in time")
    if previous.grid != following.grid:
        raise TangentError("states live on different grids")
    return RealField(previous.grid, (following.f.values - previous.f.values) / span)


def rhs_difference_f(
    first: ModelState, second: ModelState, config: Optional[SolverConfig] = None
) -> RealField:
    """d_t (f1 - f2) written with (1 - rho1) and f2 as coefficients."""
    operator = _operator_for(first, config)
    s1 = operator.snapshot(first.f.values)
    s2 = operator.snapshot(second.f.values)
    out = operator.kinetic_variation(s1, s2, s1.F_hat - s2.F_hat, s1.rho - s2.rho)
    return RealField(first.grid, out)


def rhs_difference_rho(
    first: ModelState, second: ModelState, config: Optional[SolverConfig] = None
) -> RealField:
    """-div((1 - rho1) pbar - rhobar p2) + Laplacian(rhobar)."""
    operator = _operator_for(first, config)
    s1 = operator.snapshot(first.f.values)
    s2 = operator.snapshot(second.f.values)
    rho_bar = s1.rho - s2.rho
    out = operator.moment_variation(
        0,
        s1,
        base_n=s2.rho,
        base_n1=s2.moment(1),
        delta_n=rho_bar,
        delta_n1=s1.moment(1) - s2.moment(1),
        delta_rho=rho_bar,
        delta_source=np.zeros_like(rho_bar),
    )
    return RealField(first.grid.spatial(), out)


def rhs_difference_p(
    first: ModelState, second: ModelState, config: Optional[SolverConfig] = None
) -> RealField:
    """Difference polarisation equation with (1 - rho1), p2 and P2 as coefficients."""
    operator = _operator_for(first, config)
    s1 = operator.snapshot(first.f.values)
    s2 = operator.snapshot(second.f.values)
    out = operator.moment_variation(
        1,
        s1,
        base_n=s2.moment(1),
        base_n1=s2.moment(2),
        delta_n=s1.moment(1) - s2.moment(1),
        delta_n1=s1.moment(2) - s2.moment(2),
        delta_rho=s1.rho - s2.rho,
        delta_source=s1.source(1) - s2.source(1),
    )
    return RealField(first.grid.spatial(), out)


# -- Galerkin truncation ---------------------------------------------------


def galerkin_eigenvalues(grid: TorusGrid, count: Optional[int] = None) -> np.ndarray:
    """Sorted eigenvalues |k|^2 of -Laplacian on the grid, each mode listed once."""
    ops = operators(grid)
    eigenvalues = np.sort(np.broadcast_to(ops.k2_true, grid.shape).ravel())
    return eigenvalues if count is None else eigenvalues[:count]


def galerkin_project(field: RealField, count: int) -> RealField:
    """Keep modes with |k|^2 <= lambda_N^2, ties included; N >= mode count is the identity."""
    grid = field.grid
    if count >= grid.point_count:
        return field
    ops = operators(grid)
    if count <= 0:
        return RealField(grid, np.zeros_like(field.values))
    threshold = galerkin_eigenvalues(grid)[count - 1]
    keep = np.broadcast_to(ops.k2_true, grid.shape) <= threshold
    return RealField(grid, ops.ifft(ops.fft(field.values) * keep))


def galerkin_modes(omega: TorusGrid, count: int) -> np.ndarray:
    """Wavenumbers (count, 2) of the first ``count`` eigenfunctions inside the 2/3 box.

    Ties at the last eigenvalue are kept, so the set is closed under k -> -k.
    """
    if count < 1:
        raise FieldError(f"Galerkin mode count must be positive, got {count}")
    ops2 = operators(omega)
    k2 = np.broadcast_to(ops2.k2_true, omega.shape)
    inside = np.broadcast_to(ops2.mask, omega.shape)
    eigenvalues = np.sort(k2[inside])
    threshold = eigenvalues[min(count, eigenvalues.size) - 1]
    keep = inside & (k2 <= threshold)
    kx = np.broadcast_to(ops2.k[0], omega.shape)[keep]
    ky = np.broadcast_to(ops2.k[1], omega.shape)[keep]
    order = np.argsort(k2[keep], kind="stable")
    return np.stack([kx[order], ky[order]], axis=1).astype(int)


@dataclass(frozen=True)
class GalerkinSystem:
    """d alpha/dt + A alpha = g for one polarisation component, frozen at time t.

    The basis is phi_k = exp(i k.x) / (2 pi) for k in ``modes``;
    ``alpha`` holds <p, phi_k> of the state the system was assembled from.
    """

    omega: TorusGrid
    t: float
    modes: np.ndarray
    matrix: np.ndarray
    forcing: np.ndarray
    alpha: np.ndarray

    def field(self, alpha: Optional[np.ndarray] = None) -> RealField:
        """p^n = sum_k alpha_k phi_k on the spatial grid."""
        alpha = self.alpha if alpha is None else alpha
        nx, ny = self.omega.shape
        coefficients = np.zeros(self.omega.shape, dtype=np.complex128)
        coefficients[self.modes[:, 0] % nx, self.modes[:, 1] % ny] = (
            alpha * self.omega.point_count / TWO_PI
        )
        return RealField(self.omega, operators(self.omega).ifft(coefficients))


def galerkin_system(
    state: ModelState,
    count: int,
    component: int = 0,
    config: Optional[SolverConfig] = None,
) -> GalerkinSystem:
    """Assemble the Galerkin system of the polarisation equation around ``state``.

        A_mk = delta_mk + int ((1 - rho) grad phi_k + phi_k grad rho) . grad conj(phi_m)
        g_m  = int (1 - rho) P[component, :] . grad conj(phi_m)

    The delta term is the -p produced by the angular Laplacian. rho and P are
    taken from the 2/3-truncated state; mode differences m - k then never wrap
    onto a retained coefficient.
    """
    if component not in (0, 1):
        raise FieldError(f"polarisation component must be 0 or 1, got {component}")
    operator = _operator_for(state, config)
    cfg = operator.config
    omega = state.grid.spatial()
    ops2 = operator.ops2
    snap = operator.snapshot(state.f.values)
    modes = galerkin_modes(omega, count)
    nx, ny = omega.shape

    def coefficients(values: np.ndarray) -> np.ndarray:
        # values = sum_q c(q) exp(i q.x)
        return ops2.fft(values) * ops2.mask / omega.point_count

    def at(c: np.ndarray, q: np.ndarray) -> np.ndarray:
        return c[q[..., 0] % nx, q[..., 1] % ny]

    m = modes[:, None, :]
    k = modes[None, :, :]
    if cfg.cross_diffusion:
        diff = m - k
        c_rho = at(coefficients(snap.rho), diff)
        c_u = np.all(diff == 0, axis=-1).astype(float) - c_rho
        matrix = (
            np.eye(len(modes))
            + np.sum(m * k, axis=-1) * c_u
            + np.sum(m * diff, axis=-1) * c_rho
        )
    else:
        matrix = np.diag(1.0 + np.sum(modes**2, axis=1)).astype(np.complex128)

    forcing = np.zeros(len(modes), dtype=np.complex128)
    if cfg.drift:
        carried = snap.U * snap.moment(2)[component]
        for j in range(2):
            forcing += -1j * TWO_PI * modes[:, j] * at(coefficients(carried[j]), modes)

    alpha = TWO_PI * at(coefficients(snap.moment(1)[component]), modes)
    return GalerkinSystem(
        omega=omega, t=state.t, modes=modes, matrix=matrix, forcing=forcing, alpha=alpha
    )


def _exponential_step(
    matrix: np.ndarray, forcing: np.ndarray, alpha: np.ndarray, h: float
) -> np.ndarray:
    """exp(-hA) alpha + h phi_1(-hA) g through one augmented matrix exponential."""
    size = len(alpha)
    block = np.zeros((size + 1, size + 1), dtype=np.complex128)
    block[:size, :size] = -h * matrix
    block[:size, size] = h * forcing
    propagator = expm(block)
    return propagator[:size, :size] @ alpha + propagator[:size, size]


def galerkin_polarisation(
    samples: Sequence[ModelState],
    count: int,
    component: int = 0,
    config: Optional[SolverConfig] = None,
) -> List[RealField]:
    """Integrate the Galerkin system along stored samples; one p^n per sample.

    alpha starts from the projection of the first sample. Between samples the
    coefficients are the average of the two endpoint systems and the step is
    exact for them.
    """
    if not samples:
        raise TrajectoryError("Galerkin integration needs at least one sample")
    systems = [galerkin_system(s, count, component, config) for s in samples]
    alpha = systems[0].alpha
    fields = [systems[0].field(alpha)]
    for before, after in zip(systems, systems[1:]):
        alpha = _exponential_step(
            0.5 * (before.matrix + after.matrix),
            0.5 * (before.forcing + after.forcing),
            alpha,
            after.t - before.t,
        )
        fields.append(after.field(alpha))
    logger.debug(
        "Galerkin polarisation: %d modes, %d samples", len(systems[0].modes), len(samples)
    )
    return fields


# -- time integration ------------------------------------------------------


def estimate_dt(state: ModelState) -> float:
    """0.25 * min(spacing)^2 / max(1, ||grad rho||_inf)."""
    spacing = min(state.grid.spacing)
    ops2 = operators(state.grid.spatial())
    grad_rho = ops2.gradient(ops2.fft(state.rho.values))
    steepness = float(np.max(np.sqrt(np.sum(grad_rho**2, axis=0))))
    return 0.25 * spacing**2 / max(1.0, steepness)


def step(
    state: ModelState,
    config: SolverConfig,
    operator: Optional[KineticOperator] = None,
) -> ModelState:
    """One integrating-factor SSP-RK2 step.

    v1 = E (f + dt N(f));  f_next = E f / 2 + (v1 + dt N(v1)) / 2,  E = exp(-|k|^2 dt)
    """
    operator = operator or KineticOperator(state.grid, config)
    dt = config.dt if config.dt is not None else estimate_dt(state)
    ops = operator.ops
    factor = operator.integrating_factor(dt)
    f_hat = ops.fft(state.f.values)
    stage = factor * (f_hat + dt * operator.nonlinear_hat(f_hat))
    f_next = 0.5 * factor * f_hat + 0.5 * (stage + dt * operator.nonlinear_hat(stage))
    values = ops.ifft(f_next)
    if config.galerkin_cutoff is not None:
        return state.advanced(
            galerkin_project(RealField(state.grid, values), config.galerkin_cutoff).values,
            dt,
        )
    return state.advanced(values, dt)


def resolve_dt(state: ModelState, config: SolverConfig) -> float:
    """The configured dt, or the estimate; a dt above the estimate is rejected."""
    estimate = estimate_dt(state)
    if config.dt is None:
        return estimate
    if config.dt > estimate * (1.0 + 1e-12):
        raise ConfigError(
            [f"solver.dt = {config.dt!r} exceeds the stability estimate {estimate:.6g}"]
        )
    return config.dt


def _emit(
    samples: List[ModelState],
    sinks: Iterable[RunSink],
    config: SolverConfig,
    force_checkpoint: bool = False,
) -> NormReport:
    state = samples[-1]
    report = norm_report(state).model_copy(update=window_monitors(samples))
    for sink in sinks:
        sink.record(report)
        sink.checkpoint(state, force=force_checkpoint)
        if report.min_f < -config.positivity_floor:
            sink.event(
                "violation",
                {"t": state.t, "step": state.step, "quantity": "min_f", "value": report.min_f},
            )
    if report.min_f < -config.positivity_floor:
        log_event(
            logger, "violation", "negative f detected", level=logging.WARNING,
            t=state.t, step=state.step, min_f=report.min_f,
        )
    return report


def _abort(
    reason: str, last_good: ModelState, sinks: Iterable[RunSink]
) -> SolverAbort:
    path = None
    for sink in sinks:
        sink.event("abort", {"t": last_good.t, "step": last_good.step, "reason": reason})
        saved = sink.checkpoint(last_good, force=True)
        path = saved if saved is not None else path
    log_event(
        logger, "abort", f"solver abort: {reason}", level=logging.ERROR,
        t=last_good.t, step=last_good.step, checkpoint=str(path) if path else None,
    )
    return SolverAbort(reason, last_good, path)


def run(
    state: ModelState,
    config: SolverConfig,
    sinks: Iterable[RunSink] = (),
) -> Trajectory:
    """Integrate from state.t to config.t_end with uniform steps.

    The step count is ceil(span / dt) so the final time is hit exactly; samples
    are stored and reported every ``config.cadence`` steps and at the end.
    """
    sinks = list(sinks)
    dt_target = resolve_dt(state, config)
    span = config.t_end - state.t
    if span <= 0:
        raise ConfigError([f"solver.t_end = {config.t_end!r} is not after t = {state.t!r}"])
    n_steps = max(1, math.ceil(span / dt_target - 1e-9))
    dt = span / n_steps
    cfg = config.model_copy(update={"dt": dt})
    operator = KineticOperator(state.grid, cfg)

    log_event(
        logger, "start", "run started",
        grid=list(state.grid.shape), dt=dt, steps=n_steps, t_end=cfg.t_end,
        form=cfg.form, drift=cfg.drift, cross_diffusion=cfg.cross_diffusion,
    )
    samples = [state]
    _emit(samples, sinks, cfg)
    current = state
    min_f = float(np.min(state.f.values))
    min_u = float(np.min(1.0 - state.rho.values))
    max_rho = float(np.max(state.rho.values))
    for index in range(1, n_steps + 1):
        try:
            following = step(current, cfg, operator)
        except FieldError as exc:
            raise _abort(f"non-finite state ({exc})", current, sinks) from exc
        rho_peak = float(np.max(following.rho.values))
        if rho_peak > 1.0 + cfg.positivity_floor:
            raise _abort(
                f"rho = {rho_peak:.12g} exceeds 1 + {cfg.positivity_floor:g}",
                current,
                sinks,
            )
        current = following
        min_f = min(min_f, float(np.min(current.f.values)))
        min_u = min(min_u, 1.0 - rho_peak)
        max_rho = max(max_rho, rho_peak)
        if index % cfg.cadence == 0 or index == n_steps:
            samples.append(current)
            _emit(samples, sinks, cfg, force_checkpoint=index == n_steps)

    mass_initial, mass_final = state.mass, current.mass
    summary = TrajectorySummary(
        steps=n_steps,
        dt=dt,
        t_start=state.t,
        t_final=current.t,
        sample_count=len(samples),
        mass_initial=mass_initial,
        mass_final=mass_final,
        mass_drift=abs(mass_final - mass_initial) / max(abs(mass_initial), 1e-300),
        min_f=min_f,
        min_one_minus_rho=min_u,
        max_rho=max_rho,
    )
    log_event(logger, "stop", "run finished", **summary.model_dump())
    return Trajectory(samples=samples, summary=summary)
