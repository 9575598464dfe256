"""
Tests for the command layer shared by the CLI and the API.

Validates:
- run artifacts (ledger, diagnostics, snapshots, oracle table, summary)
- run registry status transitions
- Gamma and Gibbs-Thomson sweeps
- the verification checks
"""

import json

import numpy as np
import pytest

from app.models import SimulationRun
from app.schemas import GridSpec, RunConfig
from app.services.campaigns import (
    GAP_FLOOR,
    _decreasing,
    _short_run_checks,
    check_operator_identities,
    check_profile_energy,
    check_spectral_exactness,
    check_stationary_state,
    check_surface_tension_constants,
    cmd_gamma_sweep,
    cmd_gibbs_sweep,
    cmd_run,
    cmd_verify,
    register_run,
    run_directory,
    sweep_config,
)
from app.services.errors import PhaseFieldError, WellPreparedError
from app.services.snapshots import load_snapshot, read_csv


class TestCmdRun:
    def test_artifacts(self, small_circle_config, db_session):
        summary = cmd_run(small_circle_config, db_session)
        out = run_directory(small_circle_config)
        assert summary.output_dir == str(out)
        assert summary.steps == 3
        assert summary.energy_final <= summary.energy_initial
        assert summary.mean_drift <= 1e-12

        ledger = read_csv(out / "ledger.csv")
        assert [int(r["step"]) for r in ledger] == [1, 2, 3]
        assert {r["config_hash"] for r in ledger} == {small_circle_config.config_hash()}

        # initial state plus one row per step
        diagnostics = read_csv(out / "diagnostics.csv")
        assert len(diagnostics) == 4
        assert float(diagnostics[0]["R"]) == pytest.approx(0.2, rel=1e-2)

        for name in ("phi_000000", "sigma_000000", "phi_000002", "sigma_000002"):
            assert (out / "snapshots" / f"{name}.bin").exists()
        assert not (out / "snapshots" / "phi_000001.bin").exists()
        phi2, sidecar = load_snapshot(out / "snapshots" / "phi_000002.bin")
        assert sidecar["step"] == 2
        assert sidecar["time"] == pytest.approx(2e-4)

        oracle = read_csv(out / "oracle.csv")
        assert len(oracle) == 4
        assert all(r["R_dot_measured"] != "" for r in oracle)
        assert oracle[0]["energy_rate_sharp"] == ""
        assert all(r["energy_rate_sharp"] != "" for r in oracle[1:])
        assert all(r["regime"] == "multiplicity_one_assumed" for r in diagnostics)
        assert all(float(r["theta"]) > 0 for r in diagnostics)

        stored = json.loads((out / "summary.json").read_text())
        assert stored["steps"] == 3
        assert "gibbs_thomson_correlation" in stored
        assert RunConfig.model_validate_json((out / "config.json").read_text()) == small_circle_config

        row = db_session.query(SimulationRun).one()
        assert row.status == "completed"
        assert row.command == "run"
        assert row.steps == 3
        assert row.finished_at is not None

    def test_failure_is_recorded(self, small_circle_config, db_session):
        config = small_circle_config.model_copy(update={"radius": 0.45})
        with pytest.raises(WellPreparedError):
            cmd_run(config, db_session)
        row = db_session.query(SimulationRun).one()
        assert row.status == "failed"
        assert "6*eps" in row.message

    def test_uses_an_existing_registry_row(self, small_circle_config, db_session):
        row = register_run(db_session, "run", small_circle_config)
        cmd_run(small_circle_config, db_session, registry=row)
        assert db_session.query(SimulationRun).count() == 1
        assert row.status == "completed"

    def test_works_without_registry(self, small_circle_config):
        assert cmd_run(small_circle_config).steps == 3

    def test_same_config_same_ledger(self, small_circle_config, tmp_path):
        first = small_circle_config.model_copy(update={"output_dir": str(tmp_path / "a")})
        second = small_circle_config.model_copy(update={"output_dir": str(tmp_path / "b")})
        cmd_run(first)
        cmd_run(second)
        a = (run_directory(first) / "ledger.csv").read_text()
        b = (run_directory(second) / "ledger.csv").read_text()
        assert a == b


@pytest.fixture
def shrinking_disc_config(output_dir):
    return RunConfig(
        grid=GridSpec.create((256, 256)), eps=0.02, tau=1e-4, t_end=5e-3, radius=0.25,
        output_dir=str(output_dir), snapshot_every=None, diagnostics_every=10,
    )


@pytest.mark.slow
class TestShrinkingDisc:
    def test_radial_velocity_tracks_the_diffuse_run(self, shrinking_disc_config):
        cmd_run(shrinking_disc_config)
        rows = read_csv(run_directory(shrinking_disc_config) / "oracle.csv")[1:]
        window = [r for r in rows if 0.15 <= float(r["R"]) <= 0.25]
        assert window
        for r in window:
            assert float(r["R_dot_measured"]) < 0
            assert float(r["relative_gap"]) <= 0.25, r

    def test_sharp_energy_rate_follows_the_trajectory(self, shrinking_disc_config):
        cmd_run(shrinking_disc_config)
        rows = read_csv(run_directory(shrinking_disc_config) / "oracle.csv")[1:]
        assert rows
        for r in rows:
            assert float(r["energy_rate_sharp"]) < 0
            assert float(r["energy_rate_measured"]) < 0

    def test_s2_jump_has_the_shrinking_sign(self, shrinking_disc_config):
        config = shrinking_disc_config.model_copy(update={"s": 2.0, "t_end": 3e-3})
        cmd_run(config)
        rows = read_csv(run_directory(config) / "oracle.csv")[1:]
        assert rows
        for r in rows:
            assert float(r["R_dot_measured"]) < 0
            assert float(r["R_dot_oracle"]) < 0
            assert np.sign(float(r["jump"])) == np.sign(-2.0 * float(r["R_dot_measured"]))


class TestSweepConfig:
    def test_circle_resolution_and_margin(self):
        config = sweep_config(RunConfig(), 0.02, 6.0)
        assert config.eps == 0.02
        assert config.grid.lengths == (1.0, 1.0)
        assert config.grid.counts == (512, 512)

    def test_box_grows_for_large_eps(self):
        config = sweep_config(RunConfig(), 0.08, 6.0)
        assert config.grid.lengths[0] == pytest.approx(2.0 * (0.2 + 0.48))

    def test_stripe_refines_x_only(self):
        config = sweep_config(RunConfig(scenario="stripe_2d"), 0.01, 6.0)
        assert config.grid.counts == (1024, 128)


class TestGammaSweep:
    def test_recovery_energies_approach_the_sharp_energy(self, db_session):
        report = cmd_gamma_sweep(RunConfig(radius=0.25), [0.08, 0.04, 0.02, 0.01], db_session)
        assert [row.eps for row in report.rows] == [0.08, 0.04, 0.02, 0.01]
        assert report.converging is True
        assert 0.97 <= report.rows[-1].ratio <= 1.03
        for row in report.rows:
            assert row.gap_paper_cw > row.gap_modica_mortola
        assert db_session.query(SimulationRun).one().status == "completed"

    def test_single_eps_has_no_verdict(self):
        report = cmd_gamma_sweep(RunConfig(scenario="stripe_2d"), [0.05])
        assert report.converging is None
        assert report.rows[0].E0_modica_mortola == pytest.approx(2.0 * 4.0 * np.sqrt(2.0) / 3.0)

    def test_random_has_no_sharp_limit(self):
        with pytest.raises(PhaseFieldError, match="sharp limit"):
            cmd_gamma_sweep(RunConfig(scenario="random_2d"), [0.05])


class TestDecreasing:
    def test_gaps_tied_at_rounding_level_still_converge(self):
        assert _decreasing([1e-8, 2.7e-15, 4.4e-16, 4.4e-16], 3e-12)

    def test_ties_above_the_floor_do_not(self):
        assert not _decreasing([1e-3, 1e-5, 1e-5], GAP_FLOOR)

    def test_growth_is_not_decrease(self):
        assert not _decreasing([1.0, 2.0])


class TestGibbsSweep:
    def test_needs_a_circle(self):
        with pytest.raises(PhaseFieldError, match="circle_2d"):
            cmd_gibbs_sweep(RunConfig(scenario="stripe_2d"), [0.05])

    @pytest.mark.slow
    def test_coefficient_near_half_modica_mortola(self):
        config = RunConfig(tau=1e-5, t_end=5e-5)
        report = cmd_gibbs_sweep(config, [0.08, 0.04])
        assert report.rows[-1].cauchy_difference is not None
        assert report.rows[-1].relative_to_modica_mortola_half < 0.05

    @pytest.mark.slow
    def test_three_eps_coefficient_and_bulk_residual(self):
        report = cmd_gibbs_sweep(RunConfig(tau=1e-5, t_end=5e-5), [0.08, 0.04, 0.02])
        final = report.rows[-1]
        assert final.eps == 0.02
        assert final.coef == pytest.approx(2.0 * np.sqrt(2.0) / 3.0, rel=0.15)
        residuals = [row.bulk_residual for row in report.rows]
        assert all(r is not None and np.isfinite(r) for r in residuals)
        # the far-field residual carries -du/dt, of order eps times dv/dt, so it is not small at eps = 0.02
        assert residuals[-1] < residuals[0]


class TestVerifyChecks:
    def test_spectral_exactness(self):
        assert check_spectral_exactness(GridSpec.create((64,))).passed
        assert check_spectral_exactness(GridSpec.create((32, 32)), orders=(1.0, 2.0)).passed

    def test_operator_identities(self):
        assert check_operator_identities(GridSpec.create((32, 32))).passed

    def test_surface_tension_constants(self):
        assert check_surface_tension_constants().passed

    def test_stationary_state(self):
        check = check_stationary_state(steps=5)
        assert check.passed
        assert check.value <= 1e-9

    def test_profile_energy(self):
        assert all(c.passed for c in check_profile_energy())

    def test_short_run(self, small_circle_config):
        checks = _short_run_checks(small_circle_config, 3)
        assert [c.name for c in checks] == [
            "energy nonincreasing", "cumulative dissipation balance", "mean conservation", "PDE-form identity",
        ]
        assert all(c.passed for c in checks), [c for c in checks if not c.passed]

    @pytest.mark.slow
    def test_full_suite(self, db_session, output_dir):
        report = cmd_verify(RunConfig(output_dir=str(output_dir)), db_session)
        assert report.passed, [c for c in report.checks if not c.passed]
        assert db_session.query(SimulationRun).one().status == "completed"
