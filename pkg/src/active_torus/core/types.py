"""
Exception hierarchy shared by every active-torus module.

Degenerate-but-legal quantities (a zero denominator, an undefined fit) are not
errors; they come back as result models carrying ``defined=False``.
"""

from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

if TYPE_CHECKING:
    from .state import ModelState


class ActiveTorusError(Exception):
    """Base class for all active-torus errors."""


class GridError(ActiveTorusError):
    """Invalid grid description or axis index."""


class FieldError(ActiveTorusError):
    """Non-finite values, or a shape/rank that does not match the grid."""


class DomainError(ActiveTorusError):
    """An argument left the domain of a nonlinear function."""

    def __init__(
        self,
        message: str,
        index: Optional[Tuple[int, ...]] = None,
        coordinates: Optional[Tuple[float, ...]] = None,
    ):
        detail = message
        if index is not None:
            detail += f" at index {index}"
        if coordinates is not None:
            detail += " (x = " + ", ".join(f"{c:.6g}" for c in coordinates) + ")"
        super().__init__(detail)
        self.index = index
        self.coordinates = coordinates


class EntropyDomainError(DomainError):
    """The entropy integrand is undefined on part of the grid."""

    def __init__(self, message: str, violating_fraction: float):
        super().__init__(f"{message} on {violating_fraction:.3%} of grid points")
        self.violating_fraction = violating_fraction


class CertificateError(ActiveTorusError):
    """An h function failed validation."""

    def __init__(self, issues: Sequence[str]):
        super().__init__("; ".join(issues))
        self.issues: List[str] = list(issues)


class LadderError(ActiveTorusError):
    """Truncation ladder misuse: bad levels or too few samples."""


class KernelError(ActiveTorusError):
    """Heat kernel evaluated outside its admissible parameters."""


class DuhamelError(ActiveTorusError):
    """Duhamel convolution given an empty or under-resolved forcing series."""


class TrajectoryError(ActiveTorusError):
    """Trajectories that cannot be compared, or windows that are too short."""


class TangentError(ActiveTorusError):
    """Time-derivative inputs required by a tangent right-hand side are missing."""


class ConfigError(ActiveTorusError):
    """Configuration failed validation; ``issues`` lists every problem found."""

    def __init__(self, issues: Sequence[str]):
        super().__init__("Configuration issues found:\n  - " + "\n  - ".join(issues))
        self.issues: List[str] = list(issues)


class CheckpointError(ActiveTorusError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


class SolverAbort(ActiveTorusError):
    """Time integration stopped; carries the last good state."""

    def __init__(
        self,
        reason: str,
        last_good: "ModelState",
        checkpoint_path: Optional[Path] = None,
    ):
        message = f"solver aborted at t={last_good.t:.6g} (step {last_good.step}): {reason}"
        if checkpoint_path is not None:
            message += f"; last good state saved to {checkpoint_path}"
        super().__init__(message)
        self.reason = reason
        self.last_good = last_good
        self.checkpoint_path = checkpoint_path
