import math
import unittest

import numpy as np
import numpy.testing as npt

from active_torus.core.diagnostics import (
    TruncationLadder,
    default_scale,
    energy_ledger,
    entropy_dissipation_check,
    h2_monitor,
    interpolation_monitor,
    ladder_energy,
    lower_bound_track,
    norm_report,
    recursion_decay_check,
    stampacchia,
    truncation_energy,
    weak_residual,
    window_monitors,
)
from active_torus.core.evolution import SolverConfig, run
from active_torus.core.spectral import TWO_PI, RealField, TorusGrid
from active_torus.core.state import ModelState
from active_torus.core.types import FieldError, LadderError, TrajectoryError


def smooth_state(grid):
    x1, x2, theta = grid.mesh()
    values = (0.5 + 0.2 * np.cos(x1)) / TWO_PI * (1.0 + 0.5 * np.cos(theta - x2))
    return ModelState.from_values(grid, values)


class TestTruncations(unittest.TestCase):
    def setUp(self):
        self.omega = TorusGrid.square(16)
        x, _ = self.omega.mesh()
        self.w = RealField(self.omega, 1.0 + np.sin(x))

    def test_stampacchia(self):
        expected = np.maximum(np.sin(self.omega.mesh()[0]), 0.0)
        npt.assert_allclose(stampacchia(self.w, 1.0).values, expected, atol=1e-15)
        with self.assertRaises(LadderError):
            stampacchia(self.w, -0.1)

    def test_ladder_geometry(self):
        ladder = TruncationLadder(t0=1.0, n_max=5)
        self.assertAlmostEqual(ladder.time(0), 0.5)
        self.assertAlmostEqual(ladder.time(1), 0.75)
        self.assertEqual(ladder.level(0), 0.0)
        self.assertEqual(ladder.level(2), 0.75)
        self.assertEqual(len(ladder.times()), 6)
        with self.assertRaises(LadderError):
            ladder.level(6)

    def test_constant_series_closed_form(self):
        constant = RealField(self.omega, np.full(self.omega.shape, 1.5))
        series = [(t, constant) for t in np.linspace(0.0, 2.0, 21)]
        ladder = TruncationLadder(t0=1.0, n_max=10)
        for n in range(11):
            energy = truncation_energy(series, ladder.level(n), ladder.time(n))
            self.assertAlmostEqual(energy, (1.5 - ladder.level(n)) ** 2 * TWO_PI**2, places=10)

    def test_energy_decreases_with_level(self):
        series = [(t, self.w) for t in (0.0, 0.5, 1.0)]
        energies = [truncation_energy(series, k, 0.0) for k in (0.0, 0.5, 1.0, 1.5, 2.5)]
        self.assertTrue(all(b <= a for a, b in zip(energies, energies[1:])))
        self.assertEqual(energies[-1], 0.0)

    def test_window_too_short(self):
        series = [(0.0, self.w), (1.0, self.w)]
        with self.assertRaises(LadderError):
            truncation_energy(series, 0.0, 0.5)


class TestRecursion(unittest.TestCase):
    def test_double_exponential_ledger(self):
        values = [1e-2]
        for n in range(1, 10):
            values.append(2.0**n * values[-1] ** 1.5)
        report = recursion_decay_check(values)
        self.assertTrue(report.defined)
        self.assertTrue(report.decays_to_zero)
        self.assertAlmostEqual(report.exponent, 1.5, delta=0.15)
        self.assertAlmostEqual(report.constant, 2.0, delta=0.2)

    def test_all_zero_ledger(self):
        report = recursion_decay_check([0.0] * 6)
        self.assertTrue(report.decays_to_zero)
        self.assertFalse(report.defined)
        self.assertIsNone(report.exponent)

    def test_growing_ledger_does_not_decay(self):
        report = recursion_decay_check([1.0, 2.0, 4.0, 8.0, 16.0])
        self.assertFalse(report.decays_to_zero)

    def test_short_ledger(self):
        with self.assertRaises(LadderError):
            recursion_decay_check([1.0, 0.5, 0.1])


class TestTrajectoryMonitors(unittest.TestCase):
    """Monitors evaluated on a short smooth run"""

    @classmethod
    def setUpClass(cls):
        cls.grid = TorusGrid.create(16, 16, 8)
        cls.initial = smooth_state(cls.grid)
        cls.trajectory = run(cls.initial, SolverConfig(dt=0.02, t_end=0.4, cadence=1))
        cls.drift_free = run(
            cls.initial, SolverConfig(dt=0.02, t_end=0.4, cadence=1, drift=False)
        )

    def test_norm_report_of_constant_state(self):
        c = 0.2 / TWO_PI
        state = ModelState.from_values(self.grid, np.full(self.grid.shape, c))
        report = norm_report(state)
        self.assertAlmostEqual(report.mass, c * TWO_PI**3)
        self.assertAlmostEqual(report.l2_f, c * TWO_PI**1.5)
        self.assertAlmostEqual(report.h1_f, report.l2_f)
        self.assertAlmostEqual(report.min_one_minus_rho, 0.8)
        self.assertIsNone(report.interp_ratio_rho)

    def test_norm_report_without_entropy(self):
        values = np.full(self.grid.shape, 0.1)
        values[0, 0, 0] = -1.0
        report = norm_report(ModelState.from_values(self.grid, values))
        self.assertTrue(math.isnan(report.entropy))

    def test_window_monitors(self):
        samples = self.trajectory.samples
        single = window_monitors(samples[:1])
        self.assertIsNone(single["interp_ratio_rho"])
        full = window_monitors(samples)
        self.assertGreater(full["interp_ratio_rho"], 0.0)
        self.assertAlmostEqual(full["h2_monitor_rho"], h2_monitor(samples))

    def test_h2_monitor_of_constant(self):
        state = ModelState.from_values(self.grid, np.full(self.grid.shape, 0.05))
        self.assertLess(h2_monitor([state, state]), 1e-20)

    def test_ledger_vanishes_after_first_level(self):
        samples = self.trajectory.samples
        ladder = TruncationLadder(t0=0.2, n_max=20, scale=default_scale(samples))
        ledger = energy_ledger(samples, ladder, "g")
        self.assertTrue(ledger.non_increasing)
        self.assertGreater(ledger.values[0], 0.0)
        self.assertIsNotNone(ledger.first_zero())
        self.assertLessEqual(ledger.first_zero(), 20)
        self.assertEqual(ladder_energy(samples, ladder, 3, "g"), ledger.values[3])

    def test_w_variant_needs_h(self):
        ladder = TruncationLadder(t0=0.2, n_max=4)
        with self.assertRaises(LadderError):
            ladder_energy(self.trajectory.samples, ladder, 0, "w")

    def test_lower_bound_track(self):
        track = lower_bound_track(self.trajectory.samples)
        self.assertGreater(track.floor, 0.0)
        self.assertEqual(track.running_infimum[0], track.floor)
        self.assertEqual(track.running_infimum[-1], track.minimum[-1])
        self.assertTrue(all(b >= a for a, b in zip(track.running_infimum, track.running_infimum[1:])))

    def test_interpolation_ratio_scale_invariant(self):
        series = [(s.t, s.rho) for s in self.trajectory.samples]
        doubled = [(t, rho.scaled(2.0)) for t, rho in series]
        a = interpolation_monitor(series)
        b = interpolation_monitor(doubled)
        self.assertEqual(a.q, 4.0)
        self.assertAlmostEqual(a.ratio, b.ratio, places=12)
        with self.assertRaises(TrajectoryError):
            interpolation_monitor(series[:1])

    def test_weak_residual_of_constant_test_function(self):
        phi = RealField(self.grid, np.ones(self.grid.shape))
        residual = weak_residual(self.trajectory.samples, phi)
        mass_change = self.trajectory.final.mass - self.trajectory.initial.mass
        self.assertAlmostEqual(residual.defect, mass_change, places=12)

    def test_weak_residual_small_for_solution(self):
        x1 = self.grid.mesh()[0]
        phi = RealField(self.grid, np.cos(x1))
        residual = weak_residual(self.trajectory.samples, phi)
        self.assertLess(residual.relative, 1e-2)

    def test_weak_residual_linear_in_test_function(self):
        x1, x2, theta = self.grid.mesh()
        a = RealField(self.grid, np.cos(x1))
        b = RealField(self.grid, np.sin(x2) * np.cos(theta))
        samples = self.trajectory.samples
        combined = weak_residual(samples, a + b).defect
        separate = weak_residual(samples, a).defect + weak_residual(samples, b).defect
        self.assertAlmostEqual(combined, separate, places=12)

    def test_weak_residual_rejects_unresolved_test_function(self):
        x1 = self.grid.mesh()[0]
        with self.assertRaises(FieldError):
            weak_residual(self.trajectory.samples, RealField(self.grid, np.cos(7 * x1)))

    def test_entropy_dissipates_without_drift(self):
        check = entropy_dissipation_check(self.drift_free.samples, drift_enabled=False)
        self.assertEqual(check.violations, [])
        self.assertLessEqual(check.max_rate, 1e-8)

    def test_entropy_check_needs_samples(self):
        with self.assertRaises(TrajectoryError):
            entropy_dissipation_check(self.trajectory.samples[:2], drift_enabled=True)


class TestMonitorOracles(unittest.TestCase):
    """Monitors against closed-form values"""

    def test_lower_bound_of_pure_heat(self):
        grid = TorusGrid.create(16, 16, 8)
        x1 = grid.mesh()[0]
        state = ModelState.from_values(grid, (0.5 + 0.4 * np.cos(x1)) / TWO_PI)
        config = SolverConfig(
            dt=0.025, t_end=1.0, cadence=4, drift=False, cross_diffusion=False
        )
        track = lower_bound_track(run(state, config).samples)
        self.assertAlmostEqual(track.times[-1], 1.0, places=12)
        expected = 0.5 - 0.4 * np.exp(-np.asarray(track.times))
        npt.assert_allclose(track.minimum, expected, atol=1e-12)
        self.assertAlmostEqual(track.floor, 0.1, places=12)

    def test_interpolation_ratio_of_constant(self):
        omega = TorusGrid.square(16)
        one = RealField(omega, np.ones(omega.shape))
        report = interpolation_monitor([(0.0, one), (0.5, one), (1.0, one)], p=2.0, m=2.0)
        area = TWO_PI**2
        self.assertEqual(report.q, 4.0)
        self.assertAlmostEqual(report.numerator, area**0.25, places=12)
        self.assertAlmostEqual(report.denominator, 2.0 * math.sqrt(area), places=12)
        self.assertAlmostEqual(report.ratio, math.sqrt(TWO_PI) / (2.0 * TWO_PI), places=12)


if __name__ == "__main__":
    unittest.main()
