"""Numerical core: grids, moments, evolution, diagnostics, heat kernel, uniqueness."""
