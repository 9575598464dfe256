"""Command implementations shared by the CLI and the HTTP routers."""

import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sqlalchemy.orm import Session

from app.models import SimulationRun
from app.schemas import (
    DiagnosticsRow,
    GammaSweepReport,
    GammaSweepRow,
    GibbsSweepReport,
    GibbsSweepRow,
    GridSpec,
    LedgerRow,
    OracleRow,
    RunConfig,
    RunSummary,
    Scenario,
    SurfaceTensionMode,
    VerificationCheck,
    VerifyReport,
)
from app.services.errors import EmptyMaskError, PhaseFieldError
from app.services.interface_diagnostics import (
    bulk_residual,
    curvature,
    diagnostics_row,
    equipartition_defect,
    extract_interface,
    gibbs_thomson_correlation,
    gibbs_thomson_probe,
    sample,
)
from app.services.minimizing_movements import (
    FlowState,
    SchemeOptions,
    StepEvent,
    pde_residual,
    run,
    step,
)
from app.services.potential import SurfaceTension, chemical_potential, coupling_energy, modica_mortola_energy
from app.services.scenarios import build_initial_state
from app.services.sharp_limit_oracle import (
    radial_problem_from_state,
    radial_sharp_velocity,
    s2_jump_probe,
    sharp_energy_rate,
)
from app.services.snapshots import CsvTable, SnapshotSchedule, write_snapshot
from app.services.spectral_core import (
    FractionalOperator,
    ScalarField,
    apply_inverse_power,
    apply_power,
)

logger = logging.getLogger(__name__)

# relative size below which sweep gaps are rounding noise
GAP_FLOOR = 1e-12

# ------------------------------
# Run registry
# ------------------------------

def register_run(db: Optional[Session], command: str, config: RunConfig, output_dir: Optional[str] = None):
    if db is None:
        return None
    row = SimulationRun(
        command=command,
        scenario=config.scenario.value,
        config_hash=config.config_hash(),
        config_json=config.model_dump_json(),
        status="running",
        output_dir=output_dir,
    )
    db.add(row)
    db.commit()
    db.refresh(row)
    return row


def _finish(db: Optional[Session], row: Optional[SimulationRun], status: str, message: str = "", **fields):
    if db is None or row is None:
        return
    row.status = status
    row.message = message or None
    row.finished_at = datetime.utcnow()
    for key, value in fields.items():
        setattr(row, key, value)
    db.commit()


def run_directory(config: RunConfig) -> Path:
    return Path(config.output_dir) / config.config_hash()


def _surface_tension(config: RunConfig) -> SurfaceTension:
    return SurfaceTension(mode=config.surface_tension)


def _gibbs_coef(config: RunConfig) -> float:
    # u jumps by 2 across the interface, so v carries half the surface tension
    return 0.5 * _surface_tension(config).value


# ------------------------------
# cmd_run
# ------------------------------

class _RunRecorder:
    """Step callback: ledger rows, scheduled snapshots, diagnostics and oracle rows."""

    def __init__(self, config: RunConfig, out: Path):
        self.config = config
        self.tag = config.config_hash()
        self.out = out
        self.ledger = CsvTable(out / "ledger.csv", LedgerRow)
        self.two_d = config.grid.dim == 2
        self.diagnostics = CsvTable(out / "diagnostics.csv", DiagnosticsRow) if self.two_d else None
        self.schedule = SnapshotSchedule(config.snapshot_every, config.snapshot_interval)
        self.diag_rows: List[DiagnosticsRow] = []
        self.oracle_rows: List[OracleRow] = []
        self._previous: Optional[Tuple[FlowState, float, float]] = None

    def snapshot(self, index: int, state: FlowState) -> None:
        extra = {"step": index, "config_hash": self.tag}
        write_snapshot(self.out / "snapshots", f"phi_{index:06d}", state.phi, state.t, extra=extra)
        write_snapshot(self.out / "snapshots", f"sigma_{index:06d}", state.sigma, state.t, extra=extra)
        logger.info("snapshot %d at t=%.6g", index, state.t)

    def diagnose(self, state: FlowState) -> None:
        if not self.two_d:
            return
        row = diagnostics_row(self.tag, state.t, state.op, state.s, state.eps, state.phi, state.sigma)
        self.diagnostics.append(row)
        self.diag_rows.append(row)
        if self.config.scenario == Scenario.circle_2d and row.R is not None:
            oracle = self._oracle(state, row.R)
            if oracle is not None:
                self._energy_rate(state, row, oracle)
                self.oracle_rows.append(oracle)

    def _oracle(self, state: FlowState, R: float) -> Optional[OracleRow]:
        R_out = float(np.sqrt(state.grid.volume / np.pi))
        if not 0.0 < R < R_out:
            return None
        if state.s == 1:
            problem = radial_problem_from_state(R, R_out, state.phi, state.sigma, state.u, _gibbs_coef(self.config))
            result = radial_sharp_velocity(problem)
            jump = result.jump
        elif state.s == 2:
            v = chemical_potential(state.op, state.u, state.eps)
            try:
                jump = s2_jump_probe(state.op, v, extract_interface(state.u), 6.0 * state.eps, width=state.eps)
            except EmptyMaskError:
                logger.info("s2 jump skipped at t=%.6g: R = %.4f leaves no room for the offsets", state.t, R)
                return None
        else:
            return None
        return OracleRow(config_hash=self.tag, t=state.t, R=R, jump=jump, R_dot_oracle=-0.5 * jump)

    def _energy_rate(self, state: FlowState, row: DiagnosticsRow, oracle: OracleRow) -> None:
        """Geometric sharp energy rate against the backward difference of E^0 = st |Gamma| + F."""
        st = _surface_tension(self.config)
        e0 = st.value * row.contour_length + coupling_energy(state.op, state.s, state.phi, state.sigma)
        previous, self._previous = self._previous, (state, row.R, e0)
        if previous is None:
            return
        prev_state, prev_R, prev_e0 = previous
        dt = state.t - prev_state.t
        if not dt > 0:
            return
        contour = extract_interface(state.u)
        sigma_gamma = contour.weighted_mean(sample(state.sigma, contour.points))
        rate = sharp_energy_rate(
            (row.R - prev_R) / dt, row.kappa_mean, row.contour_length, state.sigma,
            (state.sigma - prev_state.sigma) / dt, state.u, state.op, state.s, st,
            sigma_interface_mean=sigma_gamma, curvature_factor=1.0,
        )
        measured = (e0 - prev_e0) / dt
        oracle.energy_rate_sharp = rate
        oracle.energy_rate_measured = measured
        if measured != 0:
            oracle.energy_rate_gap = abs(rate - measured) / abs(measured)

    def __call__(self, event: StepEvent) -> None:
        self.ledger.append(event.ledger)
        if self.schedule.due(event.step, event.state.t):
            self.snapshot(event.step, event.state)
        if event.step % self.config.diagnostics_every == 0:
            self.diagnose(event.state)

    def close(self) -> None:
        self.ledger.close()
        if self.diagnostics is not None:
            self.diagnostics.close()
        if self.oracle_rows:
            self._attach_measured_velocity()
            with CsvTable(self.out / "oracle.csv", OracleRow) as table:
                table.extend(self.oracle_rows)

    def _attach_measured_velocity(self) -> None:
        t = np.array([r.t for r in self.oracle_rows])
        R = np.array([r.R for r in self.oracle_rows])
        if t.size < 2:
            return
        dRdt = np.gradient(R, t)
        for row, measured in zip(self.oracle_rows, dRdt):
            row.R_dot_measured = float(measured)
            if measured != 0:
                row.relative_gap = float(abs(row.R_dot_oracle - measured) / abs(measured))


def _correlation(rows: Sequence[DiagnosticsRow]) -> Optional[float]:
    pairs = [(r.v_mean, r.kappa_mean) for r in rows if r.v_mean is not None and r.kappa_mean is not None]
    if len(pairs) < 2:
        return None
    value = gibbs_thomson_correlation(*zip(*pairs))
    return value if np.isfinite(value) else None


def cmd_run(config: RunConfig, db: Optional[Session] = None,
            registry: Optional[SimulationRun] = None) -> RunSummary:
    """Well-prepared data, minimizing-movement run, artifacts under output_dir/<config hash>.

    ``registry`` is an already inserted row to update (the HTTP surface creates
    it before scheduling the job); otherwise a new row is registered.
    """
    tag = config.config_hash()
    out = run_directory(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.model_dump_json(indent=2), encoding="utf-8")
    if registry is None:
        registry = register_run(db, "run", config, str(out))

    try:
        setup = build_initial_state(config)
    except PhaseFieldError as exc:
        _finish(db, registry, "failed", str(exc))
        raise
    state = setup.state
    recorder = _RunRecorder(config, out)
    recorder.snapshot(0, state)
    recorder.diagnose(state)
    try:
        result = run(state, config.t_end, SchemeOptions.from_config(config), callbacks=[recorder], tag=tag)
        final = result.final_state
        if result.steps % config.diagnostics_every != 0:
            recorder.diagnose(final)
    except PhaseFieldError as exc:
        logger.error("run %s failed: %s", tag, exc)
        _finish(db, registry, "failed", str(exc))
        raise
    finally:
        recorder.close()

    summary = RunSummary(
        config_hash=tag,
        output_dir=str(out),
        steps=result.steps,
        retries=result.retries,
        energy_initial=result.energy_initial,
        energy_final=result.energy_final,
        dissipation_total=result.dissipation_total,
        mean_drift=abs(final.phi.mean() - state.phi_mean0),
        wall_time=result.wall_time,
        gibbs_thomson_correlation=_correlation(recorder.diag_rows),
    )
    (out / "summary.json").write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    _finish(db, registry, "completed", steps=result.steps,
            energy_initial=result.energy_initial, energy_final=result.energy_final)
    return summary


# ------------------------------
# Sweeps
# ------------------------------

def _pow2_at_least(x: float) -> int:
    return int(2 ** int(np.ceil(np.log2(max(x, 8.0)))))


def sweep_config(config: RunConfig, eps: float, points_per_eps: float) -> RunConfig:
    """Config for one sweep entry: box large enough for the 6 eps wall margin, h about eps/points_per_eps."""
    if config.scenario == Scenario.circle_2d:
        extent = config.radius
    elif config.scenario == Scenario.stripe_2d:
        extent = config.stripe_halfwidth
    else:
        extent = 0.0
    L = max(max(config.grid.lengths), 2.0 * (extent + 6.0 * eps))
    n = max(max(config.grid.counts), _pow2_at_least(points_per_eps * L / eps))
    if config.scenario == Scenario.stripe_2d:
        # translation invariant in y: only x needs the eps resolution
        lengths = (L, config.grid.lengths[1])
        counts = (n, config.grid.counts[1])
    else:
        lengths = (L,) * config.grid.dim
        counts = (n,) * config.grid.dim
    grid = GridSpec(dim=config.grid.dim, lengths=lengths, counts=counts)
    return config.model_copy(update={"eps": eps, "grid": grid, "center": None})


def _gamma_row(config: RunConfig) -> GammaSweepRow:
    setup = build_initial_state(config)
    energy = setup.state.energy()
    e0_mm = setup.sharp_energy(SurfaceTension(mode=SurfaceTensionMode.modica_mortola))
    e0_cw = setup.sharp_energy(SurfaceTension(mode=SurfaceTensionMode.paper_cw))
    return GammaSweepRow(
        config_hash=config.config_hash(),
        eps=config.eps,
        n=config.grid.counts[0],
        E_eps=energy.total,
        M_eps=energy.m_eps,
        E0_modica_mortola=e0_mm,
        E0_paper_cw=e0_cw,
        gap_modica_mortola=abs(energy.total - e0_mm),
        gap_paper_cw=abs(energy.total - e0_cw),
        ratio=energy.total / e0_mm if e0_mm != 0 else float("nan"),
    )


def _decreasing(values: Sequence[float], floor: float = 0.0) -> bool:
    """Strictly decreasing until the values reach ``floor``; entries at the floor count as converged."""
    return all(b < a or b <= floor for a, b in zip(values, values[1:]))


def cmd_gamma_sweep(config: RunConfig, eps_list: Sequence[float], db: Optional[Session] = None,
                    max_workers: int = 1, points_per_eps: float = 6.0) -> GammaSweepReport:
    """Recovery-sequence energies E^eps against the sharp energy E^0 for both constants."""
    if config.scenario == Scenario.random_2d:
        raise PhaseFieldError("gamma sweep needs a scenario with a sharp limit (not random_2d)")
    registry = register_run(db, "gamma-sweep", config)
    configs = [sweep_config(config, eps, points_per_eps) for eps in sorted(eps_list, reverse=True)]
    try:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(_gamma_row, configs))
    except PhaseFieldError as exc:
        _finish(db, registry, "failed", str(exc))
        raise

    converging = None
    if len(rows) > 1:
        floor = GAP_FLOOR * max(abs(r.E0_modica_mortola) for r in rows)
        converging = _decreasing([r.gap_modica_mortola for r in rows], floor)
        message = (f"|E^eps - E^0| {'decreases' if converging else 'does NOT decrease'} monotonically; "
                   f"final ratio E^eps/E^0 = {rows[-1].ratio:.4f}")
    else:
        message = "single eps: no convergence verdict"
    logger.info("gamma sweep: %s", message)
    _finish(db, registry, "completed", message)
    return GammaSweepReport(scenario=config.scenario, rows=rows, converging=converging, message=message)


def _gibbs_row(config: RunConfig) -> GibbsSweepRow:
    setup = build_initial_state(config)
    result = run(setup.state, config.t_end, SchemeOptions.from_config(config), tag=config.config_hash())
    state = result.final_state
    u = state.u
    contour = extract_interface(u)
    contour = contour.with_curvature(curvature(u, contour))
    v = chemical_potential(state.op, u, state.eps)
    probe = gibbs_thomson_probe(state.op, u, state.eps, contour, v=v)
    bulk = bulk_residual(state.op, state.s, v, state.phi, state.sigma, u, 4.0 * state.eps, contour)
    return GibbsSweepRow(
        config_hash=config.config_hash(),
        eps=config.eps,
        n=config.grid.counts[0],
        coef=probe.coef,
        kappa_mean=probe.kappa_mean,
        v_mean=probe.v_mean,
        relative_to_modica_mortola_half=probe.relative_to_modica_mortola_half,
        relative_to_paper_cw=probe.relative_to_paper_cw,
        bulk_residual=bulk,
    )


def cmd_gibbs_sweep(config: RunConfig, eps_list: Sequence[float], db: Optional[Session] = None,
                    max_workers: int = 1, points_per_eps: float = 10.0) -> GibbsSweepReport:
    """Short dynamics per eps, then the measured coefficient in v = coef * kappa."""
    if config.scenario != Scenario.circle_2d:
        raise PhaseFieldError("gibbs sweep is defined for the circle_2d scenario")
    registry = register_run(db, "gibbs-sweep", config)
    configs = [sweep_config(config, eps, points_per_eps) for eps in sorted(eps_list, reverse=True)]
    try:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(_gibbs_row, configs))
    except PhaseFieldError as exc:
        _finish(db, registry, "failed", str(exc))
        raise

    for prev, row in zip(rows, rows[1:]):
        row.cauchy_difference = abs(row.coef - prev.coef)
    diffs = [r.cauchy_difference for r in rows[1:]]
    cauchy = _decreasing(diffs, GAP_FLOOR * abs(rows[-1].coef)) if len(diffs) > 1 else None
    message = f"coef at eps={rows[-1].eps:g}: {rows[-1].coef:.4f} (2*sqrt(2)/3 = {2 * np.sqrt(2) / 3:.4f}, c_W = {16 / 15:.4f})"
    logger.info("gibbs sweep: %s", message)
    _finish(db, registry, "completed", message)
    return GibbsSweepReport(rows=rows, cauchy_decreasing=cauchy, message=message)


# ------------------------------
# cmd_verify
# ------------------------------

def _check(name: str, value: float, threshold: float, detail: str = "") -> VerificationCheck:
    passed = bool(np.isfinite(value) and value <= threshold)
    if not passed:
        logger.warning("verify: %s failed (%.3e > %.3e)", name, value, threshold)
    return VerificationCheck(name=name, passed=passed, value=float(value), threshold=threshold, detail=detail)


def check_spectral_exactness(grid: GridSpec, orders=(1.0, 1.3, 1.6, 2.0)) -> VerificationCheck:
    """max over sampled modes k <= N/4 of ||A^s e_k - lambda_k^s e_k||_inf / (lambda_k^s ||e_k||_inf)."""
    op = FractionalOperator(grid)
    mesh = grid.mesh()
    picks = [sorted({1, max(1, n // 8), n // 4}) for n in grid.counts]
    worst = 0.0
    for index in np.array(np.meshgrid(*picks, indexing="ij")).reshape(grid.dim, -1).T:
        coeffs = np.zeros(grid.shape)
        coeffs[tuple(index)] = 1.0
        exact = np.ones(grid.shape)
        for axis, k in enumerate(index):
            exact = exact * np.cos(np.pi * k * mesh[axis] / grid.lengths[axis])
        e_k = ScalarField(grid, coeffs=coeffs)
        lam = op.eigenvalues[tuple(index)]
        for s in orders:
            err = np.max(np.abs(apply_power(op, s, e_k).values - lam ** s * exact))
            worst = max(worst, err / (lam ** s * np.max(np.abs(exact))))
        # nodal e_k must transform to a single coefficient
        nodal = ScalarField(grid, values=exact)
        worst = max(worst, float(np.max(np.abs(nodal.coeffs - coeffs))))
    return _check("spectral exactness", worst, 1e-12, f"grid {grid.shape}, s in {list(orders)}")


def check_stationary_state(steps: int = 100, tau: float = 1e-3) -> VerificationCheck:
    grid = GridSpec.create((32, 32))
    state = FlowState.create(ScalarField.constant(grid, 0.5), ScalarField.constant(grid, -0.5),
                             eps=0.05, tau=tau, s=1.0)
    start = state
    for _ in range(steps):
        state, _ = step(state)
    change = max(np.max(np.abs(state.phi.values - start.phi.values)),
                 np.max(np.abs(state.sigma.values - start.sigma.values)))
    return _check("stationary state", float(change), 1e-9, f"{steps} steps at tau={tau:g}")


def check_profile_energy(eps: float = 0.02, n: int = 2048) -> List[VerificationCheck]:
    grid = GridSpec.create((n,))
    u = ScalarField.from_function(grid, lambda x: np.tanh(np.sqrt(2.0) * (x - 0.5) / eps))
    sigma_mm = SurfaceTension().value
    energy = modica_mortola_energy(u, eps)
    _, normalized = equipartition_defect(u, eps)
    return [
        _check("profile energy", abs(energy - sigma_mm) / sigma_mm, 0.01, f"M^eps = {energy:.6f}"),
        _check("profile equipartition", normalized, 0.02),
    ]


def check_surface_tension_constants() -> VerificationCheck:
    worst = max(abs(st.quadrature() - st.value)
                for st in (SurfaceTension(mode=m) for m in SurfaceTensionMode))
    return _check("surface tension constants", worst, 1e-12)


def check_operator_identities(grid: GridSpec, seed: int = 0) -> VerificationCheck:
    """Semigroup, self-adjointness and inverse round trip on band-limited random data."""
    op = FractionalOperator(grid)
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(grid.shape)
    low = tuple(slice(0, max(2, n // 8)) for n in grid.counts)
    coeffs[low] = rng.standard_normal(coeffs[low].shape)
    f = ScalarField(grid, coeffs=coeffs)
    coeffs2 = np.zeros(grid.shape)
    coeffs2[low] = rng.standard_normal(coeffs2[low].shape)
    g = ScalarField(grid, coeffs=coeffs2)

    def rel(a: ScalarField, b: ScalarField) -> float:
        return (a - b).max_abs() / max(b.max_abs(), 1e-300)

    semigroup = rel(apply_power(op, 0.7, apply_power(op, 0.6, f)), apply_power(op, 1.3, f))
    lhs, rhs = apply_power(op, 1.6, f).inner(g), f.inner(apply_power(op, 1.6, g))
    adjoint = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    f0 = f.project_mean_zero()
    round_trip = rel(apply_power(op, 1.6, apply_inverse_power(op, 1.6, f0)), f0)
    return _check("operator identities", max(semigroup, adjoint, round_trip), 1e-11)


def _short_run_checks(config: RunConfig, steps: int) -> List[VerificationCheck]:
    setup = build_initial_state(config)
    t_end = setup.state.t + steps * config.tau
    opts = SchemeOptions.from_config(config)
    energies = [setup.state.energy().total]
    states = [setup.state]
    result = run(setup.state, t_end, opts,
                 callbacks=[lambda ev: (energies.append(ev.energy.total), states.append(ev.state))])
    increases = max((b - a) / max(abs(a), 1.0) for a, b in zip(energies, energies[1:]))
    balance = (result.dissipation_total - (result.energy_initial - result.energy_final)) / max(abs(result.energy_initial), 1.0)
    drift = max(abs(s.phi.mean() - setup.state.phi_mean0) for s in states)
    r = pde_residual(states[-2], states[-1])
    identity = abs(r.r_phi - r.r_phi_pde) / max(r.r_phi, 1e-300)
    return [
        _check("energy nonincreasing", increases, config.ledger_tol, f"{result.steps} steps"),
        _check("cumulative dissipation balance", balance, 1e-6),
        _check("mean conservation", drift, 1e-12),
        _check("PDE-form identity", identity, 1e-9),
    ]


def cmd_verify(config: Optional[RunConfig] = None, db: Optional[Session] = None,
               steps: int = 20) -> VerifyReport:
    """Invariant suite; ``passed`` is False as soon as one check fails."""
    config = config or RunConfig()
    registry = register_run(db, "verify", config)
    checks: List[VerificationCheck] = [
        check_spectral_exactness(GridSpec.create((256,))),
        check_spectral_exactness(GridSpec.create((256, 256)), orders=(1.0, 2.0)),
        check_operator_identities(GridSpec.create((64, 64))),
        check_surface_tension_constants(),
        check_stationary_state(),
        *check_profile_energy(),
    ]
    if config.scenario != Scenario.random_2d:
        checks.extend(_short_run_checks(config, steps))
    passed = all(c.passed for c in checks)
    _finish(db, registry, "completed" if passed else "failed",
            f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return VerifyReport(config_hash=config.config_hash(), passed=passed, checks=checks)
