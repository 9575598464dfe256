"""Scenario library: RunConfig -> initial FlowState plus the sharp geometry behind it."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.schemas import GridSpec, RunConfig, Scenario
from app.services.errors import InvalidFieldError
from app.services.minimizing_movements import FlowState, operator_for
from app.services.potential import SurfaceTension, sharp_energy, well_prepared_data
from app.services.spectral_core import ScalarField

logger = logging.getLogger(__name__)

RANDOM_MAX_MODE = 8


@dataclass(frozen=True)
class ScenarioSetup:
    state: FlowState
    signed_distance: Optional[ScalarField]
    interface_measure: Optional[float]   # H^{d-1} of the sharp interface, None for random data

    def sharp_fields(self) -> Tuple[ScalarField, ScalarField]:
        """(phi, sigma) of the sharp configuration u = +-1 with the same sigma."""
        if self.signed_distance is None:
            raise InvalidFieldError("random data has no sharp limit configuration")
        u = self.signed_distance.map(lambda d: np.where(d >= 0, 1.0, -1.0))
        sigma = self.state.sigma
        return u + sigma, sigma

    def sharp_energy(self, st: SurfaceTension) -> float:
        phi, sigma = self.sharp_fields()
        return sharp_energy(self.interface_measure, phi, sigma, st, self.state.op, self.state.s)


def _center(config: RunConfig) -> np.ndarray:
    if config.center is not None:
        return np.asarray(config.center, dtype=float)
    return 0.5 * np.asarray(config.grid.lengths, dtype=float)


def signed_distance(config: RunConfig) -> Tuple[ScalarField, float]:
    """Signed distance to the sharp interface (positive in Omega+) and the interface measure."""
    grid = config.grid
    c = _center(config)
    mesh = grid.mesh()
    if config.scenario == Scenario.profile_1d:
        d = mesh[0] - c[0]
        return ScalarField(grid, values=d), 1.0
    if config.scenario == Scenario.stripe_2d:
        a, b = c[0] - config.stripe_halfwidth, c[0] + config.stripe_halfwidth
        d = np.minimum(mesh[0] - a, b - mesh[0])
        return ScalarField(grid, values=d), 2.0 * grid.lengths[1]
    if config.scenario == Scenario.circle_2d:
        r = np.sqrt((mesh[0] - c[0]) ** 2 + (mesh[1] - c[1]) ** 2)
        return ScalarField(grid, values=config.radius - r), 2.0 * np.pi * config.radius
    raise InvalidFieldError(f"scenario {config.scenario.value} has no signed distance")


def random_field(grid: GridSpec, seed: int, amplitude: float) -> ScalarField:
    """Smooth seeded field: low cosine modes with decaying random amplitudes, zero mean."""
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(grid.shape)
    low = tuple(slice(0, min(RANDOM_MAX_MODE, n)) for n in grid.counts)
    lam = operator_for(grid).eigenvalues[low]
    block = rng.standard_normal(lam.shape) / (1.0 + lam / lam.flat[1])
    block.flat[0] = 0.0
    coeffs[low] = block
    field = ScalarField(grid, coeffs=coeffs)
    peak = field.max_abs()
    return field * (amplitude / peak) if peak > 0 else field


def build_initial_state(config: RunConfig) -> ScenarioSetup:
    grid = config.grid
    sigma0 = ScalarField.constant(grid, config.sigma0)
    op = operator_for(grid)
    if config.scenario == Scenario.random_2d:
        u0 = random_field(grid, config.seed, config.random_amplitude)
        phi0 = u0 + sigma0
        state = FlowState.create(phi0, sigma0, config.eps, config.tau, config.s)
        logger.info("random_2d initial data: seed=%d amplitude=%g", config.seed, config.random_amplitude)
        return ScenarioSetup(state=state, signed_distance=None, interface_measure=None)

    d, measure = signed_distance(config)
    closed = config.scenario != Scenario.stripe_2d
    phi0, sigma0 = well_prepared_data(d, sigma0, config.eps, require_closed=closed, op=op, s=config.s)
    state = FlowState.create(phi0, sigma0, config.eps, config.tau, config.s)
    logger.info("%s initial data: eps=%g, interface measure %.6f", config.scenario.value, config.eps, measure)
    return ScenarioSetup(state=state, signed_distance=d, interface_measure=measure)
