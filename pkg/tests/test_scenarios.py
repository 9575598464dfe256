import numpy as np
import pytest

from app.schemas import GridSpec, RunConfig
from app.services.errors import InvalidFieldError, WellPreparedError
from app.services.potential import SurfaceTension
from app.services.scenarios import build_initial_state, random_field

SIGMA_MM = 4.0 * np.sqrt(2.0) / 3.0


def config(scenario: str, counts=(64, 64), **kwargs) -> RunConfig:
    return RunConfig(scenario=scenario, grid=GridSpec.create(counts), **kwargs)


class TestSharpScenarios:
    def test_circle(self):
        setup = build_initial_state(config("circle_2d"))
        assert setup.interface_measure == pytest.approx(2.0 * np.pi * 0.2)
        u = setup.state.u
        assert u.values[32, 32] == pytest.approx(1.0, abs=1e-4)
        assert u.values[0, 0] == pytest.approx(-1.0, abs=1e-6)
        assert setup.sharp_energy(SurfaceTension()) == pytest.approx(SIGMA_MM * 2.0 * np.pi * 0.2, rel=1e-12)

    def test_off_center_circle_too_close_to_wall(self):
        with pytest.raises(WellPreparedError, match="wall"):
            build_initial_state(config("circle_2d", center=(0.3, 0.5)))

    def test_stripe(self):
        setup = build_initial_state(config("stripe_2d"))
        assert setup.interface_measure == pytest.approx(2.0)
        x, _ = setup.state.grid.mesh()
        u = setup.state.u.values
        assert np.all(u[np.abs(x - 0.5) < 0.1] > 0.9)
        assert np.all(u[np.abs(x - 0.5) > 0.35] < -0.9)

    def test_profile_1d(self):
        setup = build_initial_state(config("profile_1d", counts=(128,)))
        u = setup.state.u.values
        assert setup.interface_measure == 1.0
        assert u[0] < -0.99 and u[-1] > 0.99

    def test_sigma0_enters_phi(self):
        setup = build_initial_state(config("circle_2d", sigma0=0.1))
        np.testing.assert_allclose(setup.state.sigma.values, 0.1)
        np.testing.assert_allclose((setup.state.phi - setup.state.sigma).values, setup.state.u.values)


class TestRandomScenario:
    def test_zero_mean_and_amplitude(self):
        setup = build_initial_state(config("random_2d", counts=(32, 32), random_amplitude=0.2, seed=7))
        u = setup.state.u
        assert u.mean() == pytest.approx(0.0, abs=1e-14)
        assert u.max_abs() == pytest.approx(0.2)
        assert setup.signed_distance is None and setup.interface_measure is None

    def test_seed_is_reproducible(self):
        grid = GridSpec.create((32, 32))
        a = random_field(grid, 3, 0.1)
        b = random_field(grid, 3, 0.1)
        c = random_field(grid, 4, 0.1)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.allclose(a.values, c.values)

    def test_has_no_sharp_limit(self):
        setup = build_initial_state(config("random_2d", counts=(32, 32)))
        with pytest.raises(InvalidFieldError, match="no sharp limit"):
            setup.sharp_fields()
