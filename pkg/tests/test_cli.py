import csv
import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from active_torus.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, build_parser, main
from active_torus.core.spectral import TorusGrid
from active_torus.core.state import ModelState
from active_torus.core.types import SolverAbort

FIXTURE = Path(__file__).parent / "fixtures" / "checkpoint_4x4x4.taf"

SMALL_RUN = """
[grid]
nx = 8
ny = 8
ntheta = 8

[solver]
dt = 0.01
t_end = 0.05
cadence = 1
"""


class TestCommandLine(unittest.TestCase):
    """Test case for the active-torus command line"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, text, name="run.cfg"):
        path = self.root / name
        path.write_text(text)
        return str(path)

    def test_parser_requires_command(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args([])

    def test_run_writes_directory(self):
        """Test a short run produces every artifact"""
        out = self.root / "out"
        code = main(["run", self.write_config(SMALL_RUN), "--output", str(out)])
        self.assertEqual(code, EXIT_OK)
        for name in ("config.txt", "diagnostics.csv", "events.json", "summary.json"):
            self.assertTrue((out / name).exists(), name)
        with open(out / "diagnostics.csv", newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(len(rows), 7)
        self.assertEqual(rows[1][9], "nan")
        self.assertTrue((out / "checkpoints" / "step_00000005.taf").exists())
        summary = json.loads((out / "summary.json").read_text())
        self.assertEqual(summary["trajectory"]["steps"], 5)
        self.assertIsNotNone(summary["weak_residual"])

    def test_config_echo_is_reproducible(self):
        out = self.root / "out"
        main(["run", self.write_config(SMALL_RUN), "--output", str(out)])
        echoed = (out / "config.txt").read_text()
        again = self.root / "again"
        main(["run", self.write_config(echoed, "echo.cfg"), "--output", str(again)])
        self.assertEqual((again / "config.txt").read_text(), echoed)
        self.assertEqual(
            (again / "diagnostics.csv").read_bytes(), (out / "diagnostics.csv").read_bytes()
        )

    def test_configuration_error_exit_code(self):
        """Test configuration problems exit with code 2"""
        code = main(["run", self.write_config("[grid]\nnx = 15\n")])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertEqual(main(["run", str(self.root / "absent.cfg")]), EXIT_CONFIG)

    @patch("active_torus.io.runner.run")
    def test_abort_exit_code(self, mock_run):
        """Test a numerical abort exits with code 3"""
        grid = TorusGrid.create(8, 8, 8)
        last_good = ModelState.from_values(grid, np.full(grid.shape, 0.05))
        mock_run.side_effect = SolverAbort("rho exceeds 1", last_good)
        code = main(["run", self.write_config(SMALL_RUN), "--output", str(self.root / "out")])
        self.assertEqual(code, EXIT_ABORT)
        mock_run.assert_called_once()

    def test_uniqueness(self):
        out = self.root / "pair"
        code = main(["uniqueness", self.write_config(SMALL_RUN), "--output", str(out)])
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((out / "first" / "diagnostics.csv").exists())
        self.assertTrue((out / "second" / "diagnostics.csv").exists())
        with open(out / "pair.csv", newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0][0], "t")
        self.assertEqual(len(rows), 7)
        summary = json.loads((out / "uniqueness.json").read_text())
        self.assertTrue(summary["gronwall"]["defined"])
        self.assertIsNotNone(summary["reconstruction"])

    def test_kernel_table(self):
        out = self.root / "kernel.csv"
        code = main(["kernel-table", "--q", "1.0", "1.1", "--tmax", "0.02", "--points", "2", "--output", str(out)])
        self.assertEqual(code, EXIT_OK)
        lines = out.read_text().splitlines()
        self.assertEqual(lines[0], "q,t,norm")
        self.assertEqual(len(lines), 5)

    def test_kernel_table_rejects_critical_exponent(self):
        code = main(["kernel-table", "--q", "1.5", "--tmax", "0.02", "--output", str(self.root / "k.csv")])
        self.assertEqual(code, EXIT_FAILURE)

    def test_inspect(self):
        self.assertEqual(main(["inspect", str(FIXTURE)]), EXIT_OK)
        self.assertEqual(main(["inspect", str(self.root / "absent.taf")]), EXIT_FAILURE)


if __name__ == "__main__":
    unittest.main()
