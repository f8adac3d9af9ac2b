"""
Diagnostic sinks writing one run directory.

diagnostics.csv  one row per sample, columns in ``DIAGNOSTIC_COLUMNS``
events.json      list of {"kind": ..., ...} records (aborts, violations)
checkpoints/     step_XXXXXXXX.taf at the configured sample cadence

Nothing written here carries a wall-clock timestamp, so reruns of the same
configuration reproduce the files byte for byte.
"""

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Union

from ..core.diagnostics import NormReport
from ..core.heatkernel import KernelRow
from ..core.state import ModelState
from ..core.uniqueness import PairRow
from ..logging_setup import get_logger
from .checkpoint import save_checkpoint

logger = get_logger("sinks")

DIAGNOSTIC_COLUMNS = (
    "step",
    "t",
    "mass",
    "min_f",
    "min_one_minus_rho",
    "entropy",
    "L2_f",
    "H1_f",
    "L2_rho",
    "interp_ratio_rho",
    "h2_monitor_rho",
)
PAIR_COLUMNS = (
    "t",
    "fbar_l2",
    "rhobar_linf",
    "ratio",
    "reconstruction_defect",
    "gronwall_envelope",
)
KERNEL_COLUMNS = ("q", "t", "norm")


def format_number(value: Union[int, float, None]) -> str:
    if value is None:
        return "nan"
    if isinstance(value, int):
        return str(value)
    if math.isnan(value):
        return "nan"
    return "%.17g" % value


def report_row(report: NormReport) -> List[str]:
    return [
        format_number(v)
        for v in (
            report.step,
            report.t,
            report.mass,
            report.min_f,
            report.min_one_minus_rho,
            report.entropy,
            report.l2_f,
            report.h1_f,
            report.l2_rho,
            report.interp_ratio_rho,
            report.h2_monitor_rho,
        )
    ]


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item"):
        return _json_safe(value.item())
    if isinstance(value, Mapping):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


class RunDirectorySink:
    """Single owner of one output directory; implements the run-loop sink protocol."""

    def __init__(self, directory: Union[str, Path], checkpoint_every: int = 0):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.checkpoint_every = checkpoint_every
        self.samples = 0
        self.events: List[Dict[str, Any]] = []
        self.last_checkpoint: Optional[Path] = None
        self._csv_handle: Optional[TextIO] = open(
            self.diagnostics_path, "w", newline="", encoding="utf-8"
        )
        self._writer = csv.writer(self._csv_handle, lineterminator="\n")
        self._writer.writerow(DIAGNOSTIC_COLUMNS)
        self._write_events()

    @property
    def diagnostics_path(self) -> Path:
        return self.directory / "diagnostics.csv"

    @property
    def events_path(self) -> Path:
        return self.directory / "events.json"

    @property
    def checkpoint_dir(self) -> Path:
        return self.directory / "checkpoints"

    def record(self, report: NormReport) -> None:
        if self._csv_handle is None:
            raise RuntimeError(f"sink for {self.directory} is closed")
        self._writer.writerow(report_row(report))
        self._csv_handle.flush()
        self.samples += 1

    def event(self, kind: str, payload: Mapping[str, Any]) -> None:
        self.events.append({"kind": kind, **_json_safe(dict(payload))})
        self._write_events()

    def checkpoint(self, state: ModelState, force: bool = False) -> Optional[Path]:
        due = self.checkpoint_every > 0 and self.samples % self.checkpoint_every == 0
        if not (force or due):
            return None
        path = save_checkpoint(state, self.checkpoint_dir / f"step_{state.step:08d}.taf")
        self.last_checkpoint = path
        return path

    def _write_events(self) -> None:
        self.events_path.write_text(json.dumps(self.events, indent=2) + "\n", encoding="utf-8")

    def close(self) -> None:
        if self._csv_handle is not None:
            self._csv_handle.close()
            self._csv_handle = None

    def __enter__(self) -> "RunDirectorySink":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


def write_rows(
    rows: Iterable[Sequence[Union[int, float, None]]],
    columns: Sequence[str],
    target: Union[str, Path, TextIO],
) -> None:
    """CSV with a header and %.17g numbers to a path or an open stream."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as handle:
            write_rows(rows, columns, handle)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_number(v) for v in row])


def write_pair_csv(rows: Sequence[PairRow], target: Union[str, Path, TextIO]) -> None:
    write_rows(
        ([getattr(r, c) for c in PAIR_COLUMNS] for r in rows), PAIR_COLUMNS, target
    )


def write_kernel_csv(rows: Sequence[KernelRow], target: Union[str, Path, TextIO]) -> None:
    write_rows(([r.q, r.t, r.norm] for r in rows), KERNEL_COLUMNS, target)


def write_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
