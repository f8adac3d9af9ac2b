"""Model state and stored trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from pydantic import BaseModel

from .moments import DEFAULT_MAX_ORDER, MomentSet, compute_moments
from .spectral import RealField, TorusGrid, integrate
from .types import FieldError, TrajectoryError


@dataclass(frozen=True)
class ModelState:
    """Distribution f on Upsilon at time t; moments are recomputed on construction."""

    f: RealField
    t: float = 0.0
    step: int = 0
    max_moment_order: int = DEFAULT_MAX_ORDER
    moments: MomentSet = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.f.grid.dims != 3 or self.f.rank != 0:
            raise FieldError("model state needs a scalar field on the space-angle grid")
        if self.t < 0:
            raise FieldError(f"time must be non-negative, got {self.t}")
        object.__setattr__(
            self, "moments", compute_moments(self.f, self.max_moment_order)
        )

    @classmethod
    def from_values(
        cls, grid: TorusGrid, values: np.ndarray, t: float = 0.0, step: int = 0
    ) -> "ModelState":
        return cls(RealField(grid, values), t=t, step=step)

    @property
    def grid(self) -> TorusGrid:
        return self.f.grid

    @property
    def rho(self) -> RealField:
        return self.moments.rho

    @property
    def mass(self) -> float:
        return float(integrate(self.f))

    def advanced(self, values: np.ndarray, dt: float) -> "ModelState":
        return ModelState(
            RealField(self.grid, values),
            t=self.t + dt,
            step=self.step + 1,
            max_moment_order=self.max_moment_order,
        )


class TrajectorySummary(BaseModel):
    """Run-level numbers reported after integration."""

    steps: int
    dt: float
    t_start: float
    t_final: float
    sample_count: int
    mass_initial: float
    mass_final: float
    mass_drift: float
    min_f: float
    min_one_minus_rho: float
    max_rho: float


@dataclass
class Trajectory:
    """States stored at the diagnostics cadence, first and last always included."""

    samples: List[ModelState]
    summary: Optional[TrajectorySummary] = None

    def __post_init__(self) -> None:
        if not self.samples:
            raise TrajectoryError("a trajectory needs at least one sample")

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def initial(self) -> ModelState:
        return self.samples[0]

    @property
    def final(self) -> ModelState:
        return self.samples[-1]

    @property
    def grid(self) -> TorusGrid:
        return self.samples[0].grid

    def window(self, start: float, end: Optional[float] = None) -> List[ModelState]:
        """Samples with start <= t <= end, with a relative slack of 1e-12."""
        end = self.final.t if end is None else end
        slack = 1e-12 * max(1.0, abs(end))
        return [s for s in self.samples if start - slack <= s.t <= end + slack]

    def at(self, t: float) -> ModelState:
        """The sample stored at time t."""
        times = self.times
        index = int(np.argmin(np.abs(times - t)))
        if abs(times[index] - t) > 1e-9 * max(1.0, abs(t)):
            raise TrajectoryError(f"no sample stored at t={t}")
        return self.samples[index]
