"""
Periodic grids, Fourier transforms, spectral derivatives and quadrature.

Grids live on Omega = (0, 2pi)^2 (``ntheta is None``) or on the space-angle
domain Upsilon = (0, 2pi)^3. Field arrays store component axes first and grid
axes last, so a vector field on Omega has shape ``(2, nx, ny)``.

Transform convention: the forward transform is unnormalized and the inverse
carries 1/N (the numpy.fft convention). With this convention the Fourier series
coefficient of mode k is ``transform(F)[k] / N``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator
from scipy.integrate import trapezoid

from .types import FieldError, GridError

TWO_PI = 2.0 * math.pi


class TorusGrid(BaseModel):
    """Uniform collocation grid on Omega (2D) or Upsilon (3D)."""

    model_config = ConfigDict(frozen=True)

    nx: int
    ny: int
    ntheta: Optional[int] = None

    @field_validator("nx", "ny", "ntheta")
    @classmethod
    def _validate_axis(cls, value: Optional[int]) -> Optional[int]:
        if value is None:
            return value
        if value < 4 or value % 2:
            raise ValueError(f"axis sizes must be even and >= 4, got {value}")
        return value

    @classmethod
    def create(cls, nx: int, ny: int, ntheta: Optional[int] = None) -> "TorusGrid":
        """Factory that reports invalid sizes as GridError."""
        try:
            return cls(nx=nx, ny=ny, ntheta=ntheta)
        except ValidationError as exc:
            raise GridError(
                "; ".join(str(err["msg"]) for err in exc.errors())
            ) from exc

    @classmethod
    def cube(cls, n: int) -> "TorusGrid":
        return cls.create(n, n, n)

    @classmethod
    def square(cls, n: int) -> "TorusGrid":
        return cls.create(n, n)

    @property
    def dims(self) -> int:
        return 2 if self.ntheta is None else 3

    @property
    def shape(self) -> Tuple[int, ...]:
        if self.ntheta is None:
            return (self.nx, self.ny)
        return (self.nx, self.ny, self.ntheta)

    @property
    def point_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(TWO_PI / n for n in self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return TWO_PI**self.dims

    def spatial(self) -> "TorusGrid":
        """The Omega grid underlying this grid."""
        return TorusGrid(nx=self.nx, ny=self.ny)

    def with_theta(self, ntheta: int) -> "TorusGrid":
        return TorusGrid.create(self.nx, self.ny, ntheta)

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """1D node coordinates per axis, ``x_j = 2 pi j / n``."""
        return tuple(np.arange(n) * (TWO_PI / n) for n in self.shape)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.coordinates(), indexing="ij"))

    def cutoff(self, axis: int) -> int:
        """Largest |k| kept by the 2/3 rule; 3 * cutoff < n so products never alias."""
        return (self.shape[axis] - 1) // 3


@dataclass(frozen=True)
class RealField:
    """Sampled values of a real periodic field; component axes first."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        d = self.grid.dims
        if values.ndim < d or values.shape[values.ndim - d :] != self.grid.shape:
            raise FieldError(
                f"field shape {values.shape} does not end with grid shape {self.grid.shape}"
            )
        if any(n != 2 for n in values.shape[: values.ndim - d]):
            raise FieldError(f"component axes must have size 2, got {values.shape}")
        finite = np.isfinite(values)
        if not finite.all():
            bad = int(values.size - np.count_nonzero(finite))
            raise FieldError(f"field has {bad} non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def rank(self) -> int:
        return self.values.ndim - self.grid.dims

    @property
    def component_shape(self) -> Tuple[int, ...]:
        return self.values.shape[: self.rank]

    def __add__(self, other: "RealField") -> "RealField":
        _require_same_grid(self, other)
        return RealField(self.grid, self.values + other.values)

    def __sub__(self, other: "RealField") -> "RealField":
        _require_same_grid(self, other)
        return RealField(self.grid, self.values - other.values)

    def __neg__(self) -> "RealField":
        return RealField(self.grid, -self.values)

    def scaled(self, factor: float) -> "RealField":
        return RealField(self.grid, factor * self.values)


@dataclass(frozen=True)
class SpectralField:
    """Unnormalized Fourier coefficients over the grid's wavenumbers."""

    grid: TorusGrid
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        coefficients = np.array(self.coefficients, dtype=np.complex128)
        d = self.grid.dims
        if (
            coefficients.ndim < d
            or coefficients.shape[coefficients.ndim - d :] != self.grid.shape
        ):
            raise FieldError(
                f"coefficient shape {coefficients.shape} does not match grid {self.grid.shape}"
            )
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def rank(self) -> int:
        return self.coefficients.ndim - self.grid.dims

    def conjugate_symmetry_defect(self) -> float:
        """max |c(-k) - conj c(k)| relative to max |c|; zero for real fields."""
        c = self.coefficients
        axes = tuple(range(self.rank, c.ndim))
        mirrored = np.roll(np.flip(c, axis=axes), shift=1, axis=axes)
        scale = float(np.max(np.abs(c))) or 1.0
        return float(np.max(np.abs(mirrored - np.conj(c)))) / scale


Field = Union[RealField, SpectralField]


class SpectralOperators:
    """Wavenumber symbols and transforms for one grid, shared through ``operators``."""

    def __init__(self, grid: TorusGrid):
        self.grid = grid
        self.dims = grid.dims
        self.axes = tuple(range(-grid.dims, 0))
        wavenumbers = []
        derivative_symbols = []
        masks = []
        for axis, n in enumerate(grid.shape):
            k = np.fft.fftfreq(n, d=1.0 / n)
            shape = [1] * grid.dims
            shape[axis] = n
            k_deriv = k.copy()
            # The Nyquist mode has no odd-derivative partner; zeroing it keeps
            # d1(d1(F)) == d2(F) and keeps real fields real.
            k_deriv[n // 2] = 0.0
            wavenumbers.append(k.reshape(shape))
            derivative_symbols.append(k_deriv.reshape(shape))
            masks.append((np.abs(k) <= grid.cutoff(axis)).reshape(shape))
        self.k = tuple(wavenumbers)
        self.kd = tuple(derivative_symbols)
        self.ik = tuple(1j * kd for kd in derivative_symbols)
        self.k2 = sum(kd**2 for kd in derivative_symbols)
        self.mask = functools.reduce(np.logical_and, masks)
        self.k2_true = sum(k**2 for k in wavenumbers)

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values, axes=self.axes)

    def ifft(self, coefficients: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coefficients, axes=self.axes).real

    def symbol(self, axis: int, order: int) -> np.ndarray:
        """Fourier symbol of d^order / dx_axis^order for order 1 or 2.

        Order 2 is ``-(kd ** 2)``, where ``kd`` has the Nyquist wavenumber set
        to zero, so it zeroes the Nyquist mode exactly as applying the order 1
        symbol twice does, and d1(d1(u)) == d2(u) holds on every grid.
        """
        if order == 1:
            return self.ik[axis]
        return -(self.kd[axis] ** 2)

    def truncate(self, values: np.ndarray) -> np.ndarray:
        """Physical-space 2/3-rule projection."""
        return self.ifft(self.fft(values) * self.mask)

    def gradient(self, coefficients: np.ndarray, axes: Sequence[int] = (0, 1)) -> np.ndarray:
        """Physical gradient from coefficients; derivative index first."""
        return np.stack([self.ifft(self.ik[a] * coefficients) for a in axes])

    def divergence_hat(self, flux: np.ndarray, masked: bool = True) -> np.ndarray:
        """Coefficients of sum_j d_j flux[..., j, grid]; the last component axis is contracted."""
        total = 0.0
        for j in range(flux.shape[flux.ndim - self.dims - 1]):
            component = flux[(Ellipsis, j) + (slice(None),) * self.dims]
            coefficients = self.fft(component)
            if masked:
                coefficients = coefficients * self.mask
            total = total + self.ik[j] * coefficients
        return np.asarray(total)


@functools.lru_cache(maxsize=32)
def operators(grid: TorusGrid) -> SpectralOperators:
    return SpectralOperators(grid)


def _require_same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridError(f"grid mismatch: {a.grid.shape} vs {b.grid.shape}")


def transform(field: RealField) -> SpectralField:
    """Forward transform over the grid axes (unnormalized)."""
    return SpectralField(field.grid, operators(field.grid).fft(field.values))


def inverse(field: SpectralField) -> RealField:
    """Inverse transform; carries the 1/N factor and keeps the real part."""
    return RealField(field.grid, operators(field.grid).ifft(field.coefficients))


def derivative(field: Field, axis: int, order: int = 1) -> Field:
    """Exact multiplication by (ik)^order in coefficient space.

    The result has the same representation as the input.
    """
    grid = field.grid
    if not 0 <= axis < grid.dims:
        raise GridError(f"axis {axis} out of range for a {grid.dims}D grid")
    if order not in (1, 2):
        raise GridError(f"derivative order must be 1 or 2, got {order}")
    ops = operators(grid)
    if isinstance(field, SpectralField):
        return SpectralField(grid, ops.symbol(axis, order) * field.coefficients)
    return RealField(grid, ops.ifft(ops.symbol(axis, order) * ops.fft(field.values)))


def laplacian(field: RealField, axes: Optional[Sequence[int]] = None) -> RealField:
    """Sum of second derivatives over ``axes`` (all grid axes by default)."""
    ops = operators(field.grid)
    axes = range(field.grid.dims) if axes is None else axes
    symbol = sum(ops.symbol(a, 2) for a in axes)
    return RealField(field.grid, ops.ifft(symbol * ops.fft(field.values)))


def gradient(field: RealField, axes: Optional[Sequence[int]] = None) -> RealField:
    """Gradient with the derivative index as the new leading component axis."""
    ops = operators(field.grid)
    axes = tuple(range(field.grid.dims)) if axes is None else tuple(axes)
    if len(axes) != 2:
        raise GridError("gradient components are stored as 2-vectors; pass two axes")
    return RealField(field.grid, ops.gradient(ops.fft(field.values), axes))


def dealias(field: RealField) -> RealField:
    """Zero every mode outside the 2/3-rule box."""
    return RealField(field.grid, operators(field.grid).truncate(field.values))


def dealiased_product(a: RealField, b: RealField) -> RealField:
    """Pointwise product with 2/3-rule truncation of both factors and the result.

    Component axes broadcast, so a scalar times a vector is allowed.
    """
    _require_same_grid(a, b)
    ops = operators(a.grid)
    product = ops.truncate(a.values) * ops.truncate(b.values)
    return RealField(a.grid, ops.truncate(product))


def magnitude(field: RealField) -> np.ndarray:
    """Pointwise Euclidean norm over component axes."""
    if field.rank == 0:
        return np.abs(field.values)
    axes = tuple(range(field.rank))
    return np.sqrt(np.sum(field.values**2, axis=axes))


def integrate(field: RealField) -> Union[float, np.ndarray]:
    """Rectangle-rule integral over the domain, per component."""
    axes = tuple(range(field.rank, field.values.ndim))
    total = np.sum(field.values, axis=axes) * field.grid.cell_volume
    return float(total) if field.rank == 0 else total


def inner_product(a: RealField, b: RealField) -> float:
    """Rectangle-rule L2 inner product, contracted over components."""
    _require_same_grid(a, b)
    return float(np.sum(a.values * b.values) * a.grid.cell_volume)


def lq_norm(field: RealField, q: float, subdomain: Optional[str] = None) -> float:
    """Rectangle-rule L^q norm on Omega or Upsilon; ``q = inf`` gives the max."""
    if not q >= 1:
        raise FieldError(f"q must lie in [1, inf], got {q}")
    if subdomain is not None:
        expected = {"omega": 2, "upsilon": 3}.get(subdomain.lower())
        if expected is None:
            raise GridError(f"unknown subdomain '{subdomain}'")
        if expected != field.grid.dims:
            raise GridError(f"field lives on a {field.grid.dims}D grid, not {subdomain}")
    values = magnitude(field)
    if math.isinf(q):
        return float(np.max(values))
    return float((np.sum(values**q) * field.grid.cell_volume) ** (1.0 / q))


def lq_time_norm(
    times: Sequence[float], spatial_norms: Sequence[float], q: float
) -> float:
    """L^q-in-time norm of per-sample spatial norms, trapezoid in time."""
    if not q >= 1:
        raise FieldError(f"q must lie in [1, inf], got {q}")
    t = np.asarray(times, dtype=np.float64)
    norms = np.asarray(spatial_norms, dtype=np.float64)
    if t.shape != norms.shape or t.size == 0:
        raise FieldError("times and norms must be non-empty and aligned")
    if np.any(np.diff(t) <= 0):
        raise FieldError("sample times must be strictly increasing")
    if math.isinf(q):
        return float(np.max(np.abs(norms)))
    if t.size == 1:
        return 0.0
    return float(trapezoid(np.abs(norms) ** q, t) ** (1.0 / q))


def resample(field: RealField, grid: TorusGrid) -> RealField:
    """Spectral interpolation onto another grid of the same dimension.

    Modes with |k| below both Nyquist limits are kept; Nyquist modes are dropped.
    """
    if grid.dims != field.grid.dims:
        raise GridError("resample needs grids of the same dimension")
    ops = operators(field.grid)
    coefficients = ops.fft(field.values)
    out = np.zeros(field.component_shape + grid.shape, dtype=np.complex128)
    old_index = []
    new_index = []
    for n_old, n_new in zip(field.grid.shape, grid.shape):
        m = min(n_old, n_new) // 2 - 1
        ks = np.arange(-m, m + 1)
        old_index.append(ks % n_old)
        new_index.append(ks % n_new)
    scale = grid.point_count / field.grid.point_count
    out[(Ellipsis,) + np.ix_(*new_index)] = (
        coefficients[(Ellipsis,) + np.ix_(*old_index)] * scale
    )
    return RealField(grid, operators(grid).ifft(out))
