"""
Tests for interface extraction and sharp-limit diagnostics.

Validates:
- marching-squares contour of circles and stripes (length, position, orientation)
- curvature sign convention (+1/R on a disc)
- Gibbs-Thomson probe on the optimal circle profile
- energy density, equipartition, bulk residual, area radius, signed distance
"""

import numpy as np
import pytest

from app.schemas import GridSpec
from app.services.errors import EmptyMaskError, InvalidFieldError, NoInterfaceError
from app.services.interface_diagnostics import (
    C_W,
    SIGMA_MM,
    band_mask,
    bulk_residual,
    curvature,
    diagnostics_row,
    energy_measure_density,
    equipartition_defect,
    extract_interface,
    gibbs_thomson_correlation,
    gibbs_thomson_probe,
    hypothesis_report,
    radius_from_area,
    sample,
    signed_distance,
)
from app.services.potential import chemical_potential
from app.services.spectral_core import FractionalOperator, ScalarField, apply_power
from tests.conftest import circle_profile

RADIUS = 0.25
EPS = 0.05


@pytest.fixture(scope="module")
def grid():
    return GridSpec.create((128, 128))


@pytest.fixture(scope="module")
def circle(grid):
    return circle_profile(grid, RADIUS, EPS)


@pytest.fixture(scope="module")
def contour(circle):
    c = extract_interface(circle)
    return c.with_curvature(curvature(circle, c))


class TestExtractInterface:
    def test_circle_is_one_closed_polyline(self, contour):
        assert len(contour.polylines) == 1
        assert contour.closed == (True,)
        assert contour.size > 100

    def test_points_sit_on_the_circle(self, contour):
        r = np.hypot(contour.points[:, 0] - 0.5, contour.points[:, 1] - 0.5)
        np.testing.assert_allclose(r, RADIUS, atol=1e-4)

    def test_length(self, contour):
        assert contour.length == pytest.approx(2 * np.pi * RADIUS, rel=1e-3)

    def test_normals_point_out_of_the_positive_phase(self, contour):
        outward = contour.points - 0.5
        assert np.all(np.sum(outward * contour.normals, axis=1) > 0)
        np.testing.assert_allclose(np.linalg.norm(contour.normals, axis=1), 1.0, atol=1e-12)

    def test_stripe_gives_two_open_segments(self):
        grid = GridSpec.create((64, 64))
        u = ScalarField.from_function(
            grid, lambda x, y: np.tanh(np.sqrt(2.0) * np.minimum(x - 0.25, 0.75 - x) / EPS) + 0.0 * y
        )
        c = extract_interface(u)
        assert c.closed == (False, False)
        assert c.length == pytest.approx(2.0, rel=1e-6)
        x = c.points[:, 0]
        assert np.all(np.minimum(np.abs(x - 0.25), np.abs(x - 0.75)) < 1e-3)
        assert np.any(x < 0.5) and np.any(x > 0.5)

    def test_constant_field_has_no_interface(self, grid):
        with pytest.raises(NoInterfaceError, match="no interface"):
            extract_interface(ScalarField.constant(grid, 1.0))

    def test_needs_2d(self):
        grid = GridSpec.create((64,))
        u = ScalarField.from_function(grid, lambda x: x - 0.5)
        with pytest.raises(InvalidFieldError, match="2D"):
            extract_interface(u)


class TestCurvature:
    def test_disc_has_positive_curvature(self, contour):
        assert np.mean(contour.kappa) == pytest.approx(1.0 / RADIUS, rel=1e-2)
        assert np.max(np.abs(contour.kappa - 1.0 / RADIUS)) < 0.1

    def test_complement_has_negative_curvature(self, circle):
        inverted = -circle
        c = extract_interface(inverted)
        kappa = curvature(inverted, c)
        assert np.mean(kappa) == pytest.approx(-1.0 / RADIUS, rel=1e-2)

    def test_flat_interface_has_zero_curvature(self):
        grid = GridSpec.create((64, 64))
        u = ScalarField.from_function(grid, lambda x, y: np.tanh(np.sqrt(2.0) * (0.5 - x) / EPS) + 0.0 * y)
        c = extract_interface(u)
        assert np.max(np.abs(curvature(u, c))) < 1e-6

    def test_ellipse_vertex_on_the_major_axis(self):
        a, b, eps = 0.3, 0.2, 0.03
        grid = GridSpec.create((256, 256))
        u = ScalarField.from_function(
            grid, lambda x, y: np.tanh(np.sqrt(2.0) * b * (1.0 - np.hypot((x - 0.5) / a, (y - 0.5) / b)) / eps)
        )
        c = extract_interface(u)
        kappa = curvature(u, c)
        vertex = np.argmin(np.hypot(c.points[:, 0] - 0.8, c.points[:, 1] - 0.5))
        assert kappa[vertex] == pytest.approx(a / b ** 2, rel=0.1)


class TestGibbsThomson:
    def test_optimal_circle_coefficient(self, circle, contour):
        op = FractionalOperator(circle.grid)
        probe = gibbs_thomson_probe(op, circle, EPS, contour)
        assert probe.kappa_mean == pytest.approx(1.0 / RADIUS, rel=1e-2)
        assert probe.coef == pytest.approx(0.5 * SIGMA_MM, rel=0.02)
        assert probe.relative_to_modica_mortola_half < 0.02
        assert probe.relative_to_paper_cw == pytest.approx(abs(probe.coef - C_W) / C_W)
        assert probe.v.shape == (contour.size,)

    def test_band_mask(self, grid, contour):
        mask = band_mask(grid, contour, 0.05)
        x, y = grid.mesh()
        r = np.hypot(x - 0.5, y - 0.5)
        assert mask[np.abs(r - RADIUS) < 0.04].all()
        assert not mask[np.abs(r - RADIUS) > 0.06].any()

    def test_correlation_against_inward_curvature(self):
        assert gibbs_thomson_correlation([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]) == pytest.approx(1.0)
        assert np.isnan(gibbs_thomson_correlation([1.0], [2.0]))

    def test_sample_interpolates(self, circle):
        pts = np.array([[0.5, 0.5], [0.02, 0.02]])
        values = sample(circle, pts)
        assert values[0] == pytest.approx(1.0, abs=1e-4)
        assert values[1] == pytest.approx(-1.0, abs=1e-4)

    def test_signed_distance_is_positive_inside(self, grid, contour):
        rho = signed_distance(grid, contour)
        x, y = grid.mesh()
        r = np.hypot(x - 0.5, y - 0.5)
        away = np.abs(r - RADIUS) > 0.05
        np.testing.assert_allclose(rho[away], (RADIUS - r)[away], atol=2e-3)
        assert np.all(np.sign(rho[away]) == np.sign(RADIUS - r)[away])


class TestEnergyDiagnostics:
    def test_circle_energy_density(self, circle, contour):
        density = energy_measure_density(circle, EPS, contour)
        assert density.density == pytest.approx(SIGMA_MM, rel=1e-2)
        assert density.relative_to_modica_mortola < 1e-2
        assert density.relative_to_twice_paper_cw > 0.1

    def test_equipartition_on_the_optimal_profile(self, circle):
        _, normalized = equipartition_defect(circle, EPS)
        assert normalized < 0.05

    def test_equipartition_detects_a_wide_layer(self, grid):
        # twice as wide as optimal: the gradient part falls behind the potential part
        wide = circle_profile(grid, RADIUS, 2 * EPS)
        _, normalized = equipartition_defect(wide, EPS)
        assert normalized > 0.2

    def test_radius_from_area(self, circle):
        assert radius_from_area(circle) == pytest.approx(RADIUS, rel=5e-3)

    def test_radius_from_area_improves_with_resolution(self):
        errors = [abs(radius_from_area(circle_profile(GridSpec.create((n, n)), RADIUS, EPS)) - RADIUS)
                  for n in (64, 128, 256)]
        assert errors[2] <= 0.5 * errors[0]
        assert errors[2] < 1e-3 * RADIUS

    def test_density_does_not_depend_on_shape_or_orientation(self):
        eps, halfwidth = 0.02, 0.2
        grid = GridSpec.create((256, 256))
        nx, ny = np.cos(0.3), np.sin(0.3)
        profiles = [
            circle_profile(grid, RADIUS, eps),
            ScalarField.from_function(
                grid, lambda x, y: np.tanh(np.sqrt(2.0) * (halfwidth - np.abs(x - 0.5)) / eps) + 0.0 * y),
            ScalarField.from_function(
                grid, lambda x, y: np.tanh(np.sqrt(2.0) * (halfwidth - np.abs(nx * (x - 0.5) + ny * (y - 0.5))) / eps)),
        ]
        densities = [energy_measure_density(u, eps).density for u in profiles]
        assert max(densities) / min(densities) - 1.0 <= 0.03


class TestBulkResidual:
    def test_relative_residual_is_small_for_consistent_data(self, grid, circle, contour):
        op = FractionalOperator(grid)
        v = chemical_potential(op, circle, EPS)
        sigma = ScalarField.constant(grid, 0.0)
        phi = apply_power(op, 1.0, v) + v
        assert bulk_residual(op, 1.0, v, phi, sigma, circle, 4 * EPS, contour) < 1e-10

    def test_no_interface_keeps_every_node(self, grid):
        op = FractionalOperator(grid)
        u = ScalarField.constant(grid, 1.0)
        sigma = ScalarField.constant(grid, -0.5)
        phi = u + sigma
        v = ScalarField.constant(grid, 0.0)
        # phi + sigma = 0: the absolute residual is returned
        assert bulk_residual(op, 1.0, v, phi, sigma, u, 0.2) == pytest.approx(0.0, abs=1e-12)

    def test_empty_mask(self, grid, circle, contour):
        op = FractionalOperator(grid)
        zero = ScalarField.constant(grid, 0.0)
        with pytest.raises(EmptyMaskError, match="no node"):
            bulk_residual(op, 1.0, zero, zero + 1.0, zero, circle, 2.0, contour)


class TestHypotheses:
    @pytest.mark.parametrize("s,regime", [
        (1.0, "multiplicity_one_assumed"),
        (1.5, "multiplicity_one_assumed"),
        (2.0, "unconditional"),
    ])
    def test_regime(self, s, regime):
        assert hypothesis_report(s, SIGMA_MM).regime == regime

    def test_multiplicity(self):
        report = hypothesis_report(1.0, 2.0 * SIGMA_MM)
        assert report.theta == pytest.approx(2.0)
        assert report.theta_nearest_integer == 2
        assert not report.multiplicity_one

    def test_rejects_small_s(self):
        with pytest.raises(InvalidFieldError):
            hypothesis_report(0.5, SIGMA_MM)


class TestDiagnosticsRow:
    def test_circle_row_is_complete(self, grid, circle):
        op = FractionalOperator(grid)
        zero = ScalarField.constant(grid, 0.0)
        row = diagnostics_row("tag", 0.0, op, 1.0, EPS, circle, zero)
        assert row.config_hash == "tag"
        assert row.R == pytest.approx(RADIUS, rel=5e-3)
        assert row.kappa_mean == pytest.approx(1.0 / RADIUS, rel=1e-2)
        assert row.coef == pytest.approx(0.5 * SIGMA_MM, rel=0.02)
        assert row.bulk_residual is not None
        assert row.theta == pytest.approx(1.0, rel=0.02)
        assert row.regime == "multiplicity_one_assumed"

    def test_row_without_interface(self, grid):
        op = FractionalOperator(grid)
        row = diagnostics_row("tag", 1.0, op, 1.0, EPS, ScalarField.constant(grid, 0.5),
                              ScalarField.constant(grid, -0.5))
        assert row.R is None and row.coef is None
        assert row.bulk_residual is not None
