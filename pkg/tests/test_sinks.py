import csv
import io
import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from active_torus.core.diagnostics import NormReport
from active_torus.core.heatkernel import KernelRow
from active_torus.core.spectral import TorusGrid
from active_torus.core.state import ModelState
from active_torus.io.sinks import (
    DIAGNOSTIC_COLUMNS,
    KERNEL_COLUMNS,
    RunDirectorySink,
    format_number,
    report_row,
    write_json,
    write_kernel_csv,
)


def report(step, interp=None):
    return NormReport(
        t=0.1 * step,
        step=step,
        mass=1.5,
        min_f=0.01,
        min_one_minus_rho=0.3,
        entropy=math.nan,
        l2_f=0.2,
        h1_f=0.3,
        l2_rho=0.4,
        interp_ratio_rho=interp,
        h2_monitor_rho=0.0,
    )


class TestFormatting(unittest.TestCase):
    def test_numbers(self):
        self.assertEqual(format_number(7), "7")
        self.assertEqual(format_number(0.1), "0.10000000000000001")
        self.assertEqual(format_number(None), "nan")
        self.assertEqual(format_number(math.nan), "nan")

    def test_report_row_follows_columns(self):
        row = report_row(report(3))
        self.assertEqual(len(row), len(DIAGNOSTIC_COLUMNS))
        self.assertEqual(row[0], "3")
        self.assertEqual(row[5], "nan")
        self.assertEqual(row[9], "nan")

    def test_step_leads_the_monitor_columns(self):
        self.assertEqual(
            DIAGNOSTIC_COLUMNS,
            (
                "step", "t", "mass", "min_f", "min_one_minus_rho", "entropy",
                "L2_f", "H1_f", "L2_rho", "interp_ratio_rho", "h2_monitor_rho",
            ),
        )

    def test_kernel_csv_to_stream(self):
        stream = io.StringIO()
        write_kernel_csv([KernelRow(q=1.0, t=0.5, norm=2.0)], stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], ",".join(KERNEL_COLUMNS))
        self.assertEqual(lines[1], "1,0.5,2")

    def test_json_replaces_non_finite_values(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_json({"a": math.inf, "b": np.float64(2.5), "c": [math.nan]}, Path(tmp) / "x.json")
            self.assertEqual(json.loads(path.read_text()), {"a": None, "b": 2.5, "c": [None]})


class TestRunDirectorySink(unittest.TestCase):
    """Test case for the run directory writer"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name) / "run"
        grid = TorusGrid.create(4, 4, 4)
        self.state = ModelState.from_values(grid, np.full(grid.shape, 0.05), step=4)

    def tearDown(self):
        self.tmp.cleanup()

    def test_files_created_up_front(self):
        with RunDirectorySink(self.root):
            pass
        self.assertEqual(json.loads((self.root / "events.json").read_text()), [])
        header = (self.root / "diagnostics.csv").read_text().splitlines()
        self.assertEqual(header, [",".join(DIAGNOSTIC_COLUMNS)])

    def test_rows_and_events(self):
        with RunDirectorySink(self.root) as sink:
            sink.record(report(0))
            sink.record(report(1, interp=0.5))
            sink.event("violation", {"t": 0.1, "value": np.float64(-2.0)})
        with open(self.root / "diagnostics.csv", newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[2][9], "0.5")
        events = json.loads((self.root / "events.json").read_text())
        self.assertEqual(events, [{"kind": "violation", "t": 0.1, "value": -2.0}])

    def test_checkpoint_cadence(self):
        with RunDirectorySink(self.root, checkpoint_every=2) as sink:
            sink.record(report(0))
            self.assertIsNone(sink.checkpoint(self.state))
            sink.record(report(1))
            path = sink.checkpoint(self.state)
        self.assertEqual(path, self.root / "checkpoints" / "step_00000004.taf")
        self.assertTrue(path.exists())

    def test_forced_checkpoint(self):
        with RunDirectorySink(self.root) as sink:
            self.assertIsNone(sink.checkpoint(self.state))
            path = sink.checkpoint(self.state, force=True)
        self.assertEqual(sink.last_checkpoint, path)

    def test_closed_sink_rejects_rows(self):
        sink = RunDirectorySink(self.root)
        sink.close()
        with self.assertRaises(RuntimeError):
            sink.record(report(0))


if __name__ == "__main__":
    unittest.main()
