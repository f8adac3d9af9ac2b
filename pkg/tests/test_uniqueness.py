import math
import unittest

import numpy as np
import numpy.testing as npt

from active_torus.core.evolution import SolverConfig
from active_torus.core.spectral import TWO_PI, TorusGrid, lq_norm
from active_torus.core.state import ModelState, Trajectory
from active_torus.core.types import DuhamelError, TrajectoryError
from active_torus.core.uniqueness import (
    PairedTrajectory,
    Perturbation,
    difference_fields,
    duhamel_reconstruction,
    evolve_pair,
    forcing_series,
    gronwall_fit,
    linfty_l2_ratio,
    pair_rows,
    small_time_horizon,
)


def smooth_state(grid):
    x1, x2, theta = grid.mesh()
    values = (0.5 + 0.2 * np.cos(x1)) / TWO_PI * (1.0 + 0.5 * np.cos(theta - x2))
    return ModelState.from_values(grid, values)


class TestPerturbation(unittest.TestCase):
    def setUp(self):
        self.state = smooth_state(TorusGrid.create(16, 16, 8))

    def test_angular_pattern_keeps_density(self):
        perturbed = Perturbation(amplitude=1e-3).apply(self.state)
        npt.assert_allclose(perturbed.rho.values, self.state.rho.values, atol=1e-15)

    def test_spatial_pattern_shifts_density(self):
        perturbed = Perturbation(amplitude=1e-3, pattern="cos_x1").apply(self.state)
        x1 = self.state.grid.spatial().mesh()[0]
        npt.assert_allclose(
            perturbed.rho.values - self.state.rho.values, 1e-3 * TWO_PI * np.cos(x1), atol=1e-14
        )

    def test_amplitude_must_be_non_negative(self):
        with self.assertRaises(ValueError):
            Perturbation(amplitude=-1.0)


class TestPairedTrajectories(unittest.TestCase):
    """Difference checks on short paired runs"""

    @classmethod
    def setUpClass(cls):
        cls.grid = TorusGrid.create(16, 16, 8)
        cls.initial = smooth_state(cls.grid)
        cls.config = SolverConfig(dt=0.01, t_end=0.2, cadence=1)
        cls.angular = evolve_pair(cls.initial, Perturbation(amplitude=1e-3), cls.config)
        cls.spatial = evolve_pair(
            cls.initial, Perturbation(amplitude=1e-3, pattern="cos_x1"), cls.config
        )
        cls.identical = evolve_pair(cls.initial, Perturbation(amplitude=0.0), cls.config)

    def test_samples_are_aligned(self):
        self.assertEqual(len(self.angular.times), 21)
        npt.assert_array_equal(self.angular.first.times, self.angular.second.times)

    def test_initial_difference_norm(self):
        fields = difference_fields(self.angular, 0.0)
        pattern_norm = math.pi * math.sqrt(TWO_PI)
        self.assertAlmostEqual(lq_norm(fields.f_bar, 2) / (1e-3 * pattern_norm), 1.0, places=10)
        self.assertLess(lq_norm(fields.rho_bar, math.inf), 1e-15)

    def test_identical_runs(self):
        final = difference_fields(self.identical, 0.2)
        self.assertEqual(float(np.max(np.abs(final.f_bar.values))), 0.0)
        self.assertFalse(linfty_l2_ratio(self.identical, 0.2).defined)
        self.assertFalse(gronwall_fit(self.identical).defined)
        self.assertAlmostEqual(small_time_horizon(self.identical), 0.2)

    def test_density_difference_bounded_by_kinetic_difference(self):
        for a, b in self.spatial.pairs():
            rho_bar = lq_norm(a.rho - b.rho, 2)
            f_bar = lq_norm(a.f - b.f, 2)
            self.assertLessEqual(rho_bar, math.sqrt(TWO_PI) * f_bar * (1 + 1e-12))

    def test_swap_symmetry(self):
        swapped = self.spatial.swapped()
        a = difference_fields(self.spatial, 0.1)
        b = difference_fields(swapped, 0.1)
        npt.assert_allclose(a.f_bar.values, -b.f_bar.values)
        npt.assert_allclose(a.P_bar.values, -b.P_bar.values)
        self.assertEqual(
            linfty_l2_ratio(self.spatial, 0.1).ratio, linfty_l2_ratio(swapped, 0.1).ratio
        )

    def test_ratio_undefined_on_single_sample(self):
        self.assertFalse(linfty_l2_ratio(self.spatial, 0.0).defined)

    def test_ratio_bounded_at_small_times(self):
        report = linfty_l2_ratio(self.spatial, 0.05)
        self.assertTrue(report.defined)
        self.assertTrue(math.isfinite(report.ratio))
        self.assertAlmostEqual(small_time_horizon(self.spatial, bound=1e6), 0.2)

    def test_forcing_is_vector_field_on_space(self):
        series = forcing_series(self.spatial)
        self.assertEqual(len(series), 21)
        self.assertEqual(series[0][1].values.shape, (2, 16, 16))

    def test_reconstruction_matches_direct_difference(self):
        rho, report = duhamel_reconstruction(self.spatial, 0.2)
        self.assertEqual(rho.values.shape, (16, 16))
        self.assertGreater(report.direct_linf, 0.0)
        self.assertLess(report.relative_defect, 1e-2)

    def test_reconstruction_needs_three_samples(self):
        with self.assertRaises(DuhamelError):
            duhamel_reconstruction(self.spatial, 0.01)

    def test_gronwall_envelope(self):
        fit = gronwall_fit(self.angular)
        self.assertTrue(fit.defined)
        self.assertTrue(fit.envelope_holds)
        self.assertTrue(math.isfinite(fit.rate))
        self.assertAlmostEqual(fit.initial_norm_sq / (1e-3 * math.pi) ** 2 / TWO_PI, 1.0, places=8)

    def test_pair_rows(self):
        rows = pair_rows(self.spatial)
        self.assertEqual(len(rows), 21)
        self.assertTrue(math.isnan(rows[0].ratio))
        self.assertTrue(math.isnan(rows[1].reconstruction_defect))
        self.assertFalse(math.isnan(rows[-1].reconstruction_defect))
        self.assertAlmostEqual(rows[0].gronwall_envelope, rows[0].fbar_l2**2)

    def test_mismatched_grids_rejected(self):
        other = Trajectory(samples=[smooth_state(TorusGrid.create(8, 8, 8))])
        with self.assertRaises(TrajectoryError):
            PairedTrajectory(self.angular.first, other, Perturbation(), self.config)


class TestSmallPerturbationLimit(unittest.TestCase):
    """Test case for the delta-independence of the difference monitors"""

    AMPLITUDES = (1e-2, 1e-3, 1e-4)

    @classmethod
    def setUpClass(cls):
        cls.initial = smooth_state(TorusGrid.create(16, 16, 8))
        cls.config = SolverConfig(dt=0.005, t_end=0.1, cadence=1)
        cls.pairs = [
            evolve_pair(
                cls.initial, Perturbation(amplitude=delta, pattern="cos_x1"), cls.config
            )
            for delta in cls.AMPLITUDES
        ]
        cls.angular = evolve_pair(cls.initial, Perturbation(amplitude=1e-3), cls.config)

    def test_ratio_independent_of_amplitude(self):
        ratios = [linfty_l2_ratio(pair, 0.05).ratio for pair in self.pairs]
        for ratio in ratios:
            self.assertAlmostEqual(ratio / ratios[-1], 1.0, delta=0.1)

    def test_ratio_of_density_mode(self):
        """Test the heat-dominated value 2 pi / ||cos x1||_{L2((0, t) x Upsilon)}"""
        ratio = linfty_l2_ratio(self.pairs[-1], 0.05).ratio
        self.assertGreater(ratio, 2.4)
        self.assertLess(ratio, 2.8)

    def test_gronwall_rate_independent_of_amplitude(self):
        rates = [gronwall_fit(pair, end=0.1).rate for pair in self.pairs]
        self.assertLess(rates[-1], 0.0)
        for rate in rates:
            self.assertLessEqual(abs(rate - rates[-1]), 0.1 * abs(rates[-1]))

    def test_ratio_grows_from_zero_density_difference(self):
        early = linfty_l2_ratio(self.angular, 0.01)
        late = linfty_l2_ratio(self.angular, 0.1)
        self.assertTrue(early.defined)
        self.assertLessEqual(early.ratio, 1.1 * late.ratio)


class TestDuhamelOnFinerGrid(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        initial = smooth_state(TorusGrid.create(32, 32, 8))
        config = SolverConfig(dt=0.005, t_end=0.05, cadence=1)
        cls.pairs = [
            evolve_pair(initial, Perturbation(amplitude=1e-3, pattern=pattern), config)
            for pattern in ("cos_x1_cos_theta", "cos_x1")
        ]

    def test_reconstruction_defect(self):
        for pair in self.pairs:
            _, report = duhamel_reconstruction(pair, 0.05)
            self.assertGreater(report.direct_linf, 0.0)
            self.assertLessEqual(report.relative_defect, 5e-3)


if __name__ == "__main__":
    unittest.main()
