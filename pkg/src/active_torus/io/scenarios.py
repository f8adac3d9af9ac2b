"""Initial-data presets selected by ``[scenario] name``."""

import math
from typing import Callable, Dict, Tuple

import numpy as np

from ..config import RunConfig
from ..core.spectral import TWO_PI, RealField, TorusGrid, operators
from ..core.state import ModelState
from ..logging_setup import get_logger

logger = get_logger("scenarios")

NEAR_DEGENERATE_MEAN = 0.6
NEAR_DEGENERATE_AMPLITUDE = 0.35


def _angular_profile(grid: TorusGrid) -> np.ndarray:
    """1 + cos(theta - x2) / 2, which has theta-average 1."""
    _, x2, theta = grid.mesh()
    return 1.0 + 0.5 * np.cos(theta - x2)


def constant_state(config: RunConfig, grid: TorusGrid) -> np.ndarray:
    return np.full(grid.shape, config.scenario.density / TWO_PI)


def smooth_state(config: RunConfig, grid: TorusGrid) -> np.ndarray:
    x1 = grid.mesh()[0]
    rho0 = config.scenario.density + config.scenario.amplitude * np.cos(x1)
    return rho0 / TWO_PI * _angular_profile(grid)


def near_degenerate_state(config: RunConfig, grid: TorusGrid) -> np.ndarray:
    """rho0 = 0.6 + 0.35 cos x1, peaking at 0.95."""
    x1 = grid.mesh()[0]
    rho0 = NEAR_DEGENERATE_MEAN + NEAR_DEGENERATE_AMPLITUDE * np.cos(x1)
    return rho0 / TWO_PI * _angular_profile(grid)


def pure_heat_state(config: RunConfig, grid: TorusGrid) -> np.ndarray:
    x1 = grid.mesh()[0]
    return (config.scenario.density + config.scenario.amplitude * np.cos(x1)) / TWO_PI


def noise_state(config: RunConfig, grid: TorusGrid) -> np.ndarray:
    """Seeded random trigonometric polynomial with |k| <= noise_modes in every axis.

    The perturbation is normalised to sup 1 and scaled by amplitude / density,
    so rho stays within density +- amplitude.
    """
    scenario = config.scenario
    rng = np.random.default_rng(scenario.seed)
    ops = operators(grid)
    band = np.ones(grid.shape, dtype=bool)
    for k in ops.k:
        band &= np.abs(k) <= scenario.noise_modes
    band &= ops.mask
    coefficients = np.zeros(grid.shape, dtype=np.complex128)
    count = int(np.count_nonzero(band))
    coefficients[band] = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    coefficients[(0,) * grid.dims] = 0.0
    noise = ops.ifft(coefficients)
    peak = float(np.max(np.abs(noise)))
    if peak > 0:
        noise /= peak
    scale = min(1.0, scenario.amplitude / scenario.density)
    return scenario.density / TWO_PI * (1.0 + scale * noise)


SCENARIOS: Dict[str, Callable[[RunConfig, TorusGrid], np.ndarray]] = {
    "constant": constant_state,
    "smooth": smooth_state,
    "near-degenerate": near_degenerate_state,
    "pure-heat": pure_heat_state,
    "noise": noise_state,
    "uniqueness-pair": smooth_state,
}


def prepare_run(config: RunConfig) -> Tuple[RunConfig, ModelState]:
    """Initial state for the configured scenario and the config it runs with.

    ``pure-heat`` switches drift and cross-diffusion off, whatever the solver
    section says.
    """
    name = config.scenario.name
    if name == "pure-heat" and (config.solver.drift or config.solver.cross_diffusion):
        solver = config.solver.model_copy(update={"drift": False, "cross_diffusion": False})
        config = config.model_copy(update={"solver": solver})
        logger.info("pure-heat scenario: drift and cross-diffusion switched off")
    grid = config.make_grid()
    values = SCENARIOS[name](config, grid)
    state = ModelState(RealField(grid, values), max_moment_order=config.solver.max_moment_order)
    logger.info(
        "initial state prepared",
        extra={
            "data": {
                "scenario": name,
                "grid": list(grid.shape),
                "mass": state.mass,
                "max_rho": float(np.max(state.rho.values)),
                "mean_rho": state.mass / (2 * math.pi) ** 2,
            }
        },
    )
    return config, state
