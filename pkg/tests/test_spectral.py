import math
import unittest

import numpy as np
import numpy.testing as npt
from hypothesis import given, settings
from hypothesis import strategies as st

from active_torus.core.spectral import (
    RealField,
    TorusGrid,
    dealias,
    dealiased_product,
    derivative,
    gradient,
    integrate,
    inverse,
    laplacian,
    lq_norm,
    lq_time_norm,
    operators,
    resample,
    transform,
)
from active_torus.core.types import FieldError, GridError


class TestTorusGrid(unittest.TestCase):
    """Grid construction and geometry"""

    def test_odd_size_rejected(self):
        with self.assertRaises(GridError):
            TorusGrid.create(15, 16)

    def test_too_small_rejected(self):
        with self.assertRaises(GridError):
            TorusGrid.create(2, 16, 16)

    def test_geometry(self):
        grid = TorusGrid.create(16, 8, 12)
        self.assertEqual(grid.dims, 3)
        self.assertEqual(grid.shape, (16, 8, 12))
        self.assertEqual(grid.point_count, 16 * 8 * 12)
        self.assertAlmostEqual(grid.volume, (2 * math.pi) ** 3)
        self.assertEqual(grid.spatial().shape, (16, 8))
        self.assertEqual(grid.cutoff(0), 5)

    def test_mask_products_do_not_alias(self):
        grid = TorusGrid.cube(16)
        self.assertLess(3 * grid.cutoff(0), 16)


class TestTransforms(unittest.TestCase):
    """Forward/inverse transforms and exact differentiation"""

    def setUp(self):
        self.grid = TorusGrid.square(16)
        self.x, self.y = self.grid.mesh()
        rng = np.random.default_rng(3)
        self.random = RealField(self.grid, rng.standard_normal(self.grid.shape))

    def test_round_trip(self):
        back = inverse(transform(self.random))
        npt.assert_allclose(back.values, self.random.values, atol=1e-12)

    def test_parseval(self):
        coefficients = transform(self.random).coefficients
        physical = np.sum(self.random.values**2)
        spectral = np.sum(np.abs(coefficients) ** 2) / self.grid.point_count
        self.assertLess(abs(physical - spectral), 1e-10 * physical)

    def test_conjugate_symmetry_of_real_field(self):
        self.assertLess(transform(self.random).conjugate_symmetry_defect(), 1e-12)

    def test_first_derivative(self):
        f = RealField(self.grid, np.sin(2 * self.x) * np.cos(self.y))
        df = derivative(f, 0)
        npt.assert_allclose(df.values, 2 * np.cos(2 * self.x) * np.cos(self.y), atol=1e-12)

    def test_second_derivative_matches_twice_first(self):
        once = derivative(derivative(self.random, 1), 1)
        twice = derivative(self.random, 1, order=2)
        npt.assert_allclose(once.values, twice.values, atol=1e-10)

    def test_second_order_symbol_drops_nyquist(self):
        ops = operators(self.grid)
        for axis in (0, 1):
            second = ops.symbol(axis, 2)
            npt.assert_array_equal(second, ops.symbol(axis, 1) ** 2)
            npt.assert_array_equal(np.take(second, 8, axis=axis), 0.0)

    def test_bad_axis_and_order(self):
        with self.assertRaises(GridError):
            derivative(self.random, 2)
        with self.assertRaises(GridError):
            derivative(self.random, 0, order=3)

    def test_laplacian_of_eigenfunction(self):
        f = RealField(self.grid, np.cos(3 * self.x + self.y))
        npt.assert_allclose(laplacian(f).values, -10 * f.values, atol=1e-11)

    def test_gradient_layout(self):
        f = RealField(self.grid, np.sin(self.x) + np.sin(2 * self.y))
        g = gradient(f)
        self.assertEqual(g.values.shape, (2, 16, 16))
        npt.assert_allclose(g.values[0], np.cos(self.x), atol=1e-12)
        npt.assert_allclose(g.values[1], 2 * np.cos(2 * self.y), atol=1e-12)


class TestDealiasing(unittest.TestCase):
    """2/3-rule truncation"""

    def setUp(self):
        self.grid = TorusGrid.square(16)
        self.x, self.y = self.grid.mesh()

    def test_product_inside_band_is_exact(self):
        a = RealField(self.grid, np.cos(self.x))
        b = RealField(self.grid, np.cos(self.x + self.y))
        expected = np.cos(self.x) * np.cos(self.x + self.y)
        npt.assert_allclose(dealiased_product(a, b).values, expected, atol=1e-12)

    def test_high_modes_removed(self):
        f = RealField(self.grid, np.cos(7 * self.x))
        npt.assert_allclose(dealias(f).values, 0.0, atol=1e-12)

    def test_mask_symmetric(self):
        mask = operators(self.grid).mask
        npt.assert_array_equal(mask, np.flip(np.roll(mask, -1, axis=(0, 1)), axis=(0, 1)))


class TestNorms(unittest.TestCase):
    """Rectangle-rule integrals and L^q norms"""

    def setUp(self):
        self.grid = TorusGrid.square(16)
        self.x, self.y = self.grid.mesh()

    def test_integral_of_constant(self):
        f = RealField(self.grid, np.full(self.grid.shape, 2.0))
        self.assertAlmostEqual(integrate(f), 2.0 * (2 * math.pi) ** 2, places=12)

    def test_l2_of_cosine(self):
        f = RealField(self.grid, np.cos(self.x))
        self.assertAlmostEqual(lq_norm(f, 2), math.sqrt(2 * math.pi**2), places=12)

    def test_linf(self):
        f = RealField(self.grid, 3.0 * np.cos(self.x))
        self.assertAlmostEqual(lq_norm(f, math.inf), 3.0, places=12)

    def test_q_below_one_rejected(self):
        f = RealField(self.grid, np.cos(self.x))
        with self.assertRaises(FieldError):
            lq_norm(f, 0.5)

    def test_subdomain_mismatch(self):
        f = RealField(self.grid, np.cos(self.x))
        with self.assertRaises(GridError):
            lq_norm(f, 2, subdomain="upsilon")

    def test_vector_norm_uses_euclidean_magnitude(self):
        f = RealField(self.grid, np.stack([np.full(self.grid.shape, 3.0), np.full(self.grid.shape, 4.0)]))
        self.assertAlmostEqual(lq_norm(f, math.inf), 5.0, places=12)

    def test_time_norm(self):
        self.assertAlmostEqual(lq_time_norm([0.0, 1.0, 2.0], [1.0, 1.0, 1.0], 2), math.sqrt(2.0))
        self.assertEqual(lq_time_norm([0.0, 1.0], [2.0, 5.0], math.inf), 5.0)

    def test_non_finite_values_rejected(self):
        values = np.zeros(self.grid.shape)
        values[0, 0] = np.nan
        with self.assertRaises(FieldError):
            RealField(self.grid, values)

    @settings(max_examples=25, deadline=None)
    @given(
        scale=st.floats(min_value=-50, max_value=50, allow_nan=False),
        q=st.sampled_from([1.0, 1.5, 2.0, 4.0, math.inf]),
    )
    def test_norm_is_absolutely_homogeneous(self, scale, q):
        f = RealField(self.grid, np.cos(self.x) + 0.5 * np.sin(self.y))
        self.assertAlmostEqual(
            lq_norm(f.scaled(scale), q), abs(scale) * lq_norm(f, q), delta=1e-9 * (1 + abs(scale))
        )


class TestResample(unittest.TestCase):
    """Spectral interpolation between grids"""

    def test_band_limited_field_is_exact(self):
        coarse = TorusGrid.square(16)
        fine = TorusGrid.square(32)
        xc, yc = coarse.mesh()
        xf, yf = fine.mesh()
        f = RealField(coarse, 0.3 + np.cos(xc) * np.sin(2 * yc))
        g = resample(f, fine)
        npt.assert_allclose(g.values, 0.3 + np.cos(xf) * np.sin(2 * yf), atol=1e-12)
        back = resample(g, coarse)
        npt.assert_allclose(back.values, f.values, atol=1e-12)

    def test_dimension_mismatch(self):
        f = RealField(TorusGrid.square(16), np.zeros((16, 16)))
        with self.assertRaises(GridError):
            resample(f, TorusGrid.cube(16))


if __name__ == "__main__":
    unittest.main()
