"""Implicit minimizing-movement scheme for the coupled (phi, sigma) gradient flow.

Each step first minimizes in sigma (L2 metric), then in phi (H^{-s} metric on
the affine space of fixed mean), both with the quartic part implicit and the
concave part explicit. The Euler conditions are solved by damped Newton with
spectrally preconditioned conjugate gradients.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from app.schemas import EnergyBreakdown, GridSpec, LedgerRow, RunConfig, StepReport
from app.services.errors import (
    AprioriBoundViolation,
    DissipationViolation,
    InvalidFieldError,
    NewtonConvergenceError,
)
from app.services.potential import (
    DoubleWell,
    apriori_bounds,
    chemical_potential,
    coercivity_witness,
    total_energy_eps,
)
from app.services.spectral_core import (
    FractionalOperator,
    ScalarField,
    apply_inverse_power,
    apply_power,
    bilinear_as,
    norm_h_minus_s,
    pointwise,
    solve_diagonal,
)

logger = logging.getLogger(__name__)


@lru_cache(maxsize=32)
def operator_for(grid: GridSpec) -> FractionalOperator:
    return FractionalOperator(grid)


@dataclass(frozen=True)
class SchemeOptions:
    tol_newton: float = 1e-10
    max_newton_iters: int = 50
    ledger_tol: float = 1e-8
    mean_tol: float = 1e-10
    max_retries: int = 4
    dealias: bool = False
    cg_rtol: float = 1e-12
    cg_maxiter: int = 2000
    max_halvings: int = 30
    check_apriori: bool = True

    @classmethod
    def from_config(cls, config: RunConfig) -> "SchemeOptions":
        return cls(
            tol_newton=config.tol_newton,
            max_newton_iters=config.max_newton_iters,
            ledger_tol=config.ledger_tol,
            mean_tol=config.mean_tol,
            max_retries=config.max_retries,
            dealias=config.dealias,
        )


@dataclass(frozen=True)
class FlowState:
    phi: ScalarField
    sigma: ScalarField
    t: float
    eps: float
    tau: float
    s: float
    phi_mean0: float

    @classmethod
    def create(cls, phi: ScalarField, sigma: ScalarField, eps: float, tau: float, s: float,
               t: float = 0.0) -> "FlowState":
        if phi.grid != sigma.grid:
            raise InvalidFieldError("phi and sigma live on different grids")
        for name, value in (("eps", eps), ("tau", tau)):
            if not np.isfinite(value) or value <= 0:
                raise InvalidFieldError(f"{name} must be in (0, inf), got {value}")
        if not np.isfinite(s) or s < 1:
            raise InvalidFieldError(f"fractional order s must be >= 1, got {s}")
        state = cls(phi=phi, sigma=sigma, t=float(t), eps=float(eps), tau=float(tau), s=float(s),
                    phi_mean0=phi.mean())
        if not np.isfinite(state.energy().total):
            raise InvalidFieldError("initial state has non-finite energy")
        return state

    @property
    def grid(self) -> GridSpec:
        return self.phi.grid

    @property
    def op(self) -> FractionalOperator:
        return operator_for(self.grid)

    @property
    def u(self) -> ScalarField:
        return self.phi - self.sigma

    def energy(self) -> EnergyBreakdown:
        return total_energy_eps(self.op, self.s, self.phi, self.sigma, self.eps)


# ------------------------------
# Newton machinery
# ------------------------------

def _pcg(grid: GridSpec, apply_jacobian: Callable[[ScalarField], ScalarField],
         half_precond: Callable[[ScalarField], ScalarField], rhs: ScalarField,
         opts: SchemeOptions, stage: str) -> ScalarField:
    """Solve J x = rhs with CG on the symmetrically scaled P^{-1/2} J P^{-1/2}."""
    shape = grid.shape

    def matvec(y):
        z = half_precond(ScalarField(grid, values=np.reshape(y, shape)))
        return half_precond(apply_jacobian(z)).values.ravel()

    b = half_precond(rhs).values.ravel()
    operator = LinearOperator((grid.size, grid.size), matvec=matvec, dtype=float)
    y, info = cg(operator, b, rtol=opts.cg_rtol, atol=0.0, maxiter=opts.cg_maxiter)
    if info < 0:
        raise NewtonConvergenceError(stage, float("nan"), 0)
    if info > 0:
        logger.debug("%s: CG stopped after %d iterations without reaching rtol", stage, info)
    return half_precond(ScalarField(grid, values=np.reshape(y, shape)))


def _newton(stage: str, x0: ScalarField,
            residual: Callable[[ScalarField], ScalarField],
            certificate: Callable[[ScalarField, ScalarField], float],
            newton_direction: Callable[[ScalarField, ScalarField], ScalarField],
            opts: SchemeOptions,
            project: Callable[[ScalarField], ScalarField] = lambda x: x) -> Tuple[ScalarField, int, float]:
    x = x0
    F = residual(x)
    cert = certificate(x, F)
    iters = 0
    while cert > opts.tol_newton:
        if iters >= opts.max_newton_iters:
            raise NewtonConvergenceError(stage, cert, iters)
        dx = newton_direction(x, F)
        damping = 1.0
        for _ in range(opts.max_halvings):
            trial = project(x + damping * dx)
            F_trial = residual(trial)
            cert_trial = certificate(trial, F_trial)
            if cert_trial < cert:
                break
            damping *= 0.5
        else:
            raise NewtonConvergenceError(stage, cert, iters)
        x, F, cert = trial, F_trial, cert_trial
        iters += 1
    return x, iters, cert


# ------------------------------
# Subproblems
# ------------------------------

def sigma_step(state: FlowState, opts: SchemeOptions = SchemeOptions()) -> Tuple[ScalarField, int, float]:
    """sigma_k from the Euler condition of the sigma subproblem.

    Strong form:
        (sigma - sigma_p)/tau - W~'(phi_p - sigma)/eps - W-'(phi_p - sigma_p)/eps
            - eps A (phi_p - sigma) + phi_p + sigma + A^s sigma = 0
    """
    op, eps, tau, s = state.op, state.eps, state.tau, state.s
    phi_p, sigma_p = state.phi, state.sigma
    explicit = pointwise(phi_p - sigma_p, DoubleWell.dW_concave, opts.dealias) / eps
    base = phi_p - explicit
    scale = 1.0 + sigma_p.l2_norm()

    def residual(sigma):
        u = phi_p - sigma
        return ((sigma - sigma_p) / tau
                - pointwise(u, DoubleWell.dW_convex, opts.dealias) / eps
                - eps * apply_power(op, 1.0, u)
                + sigma + apply_power(op, s, sigma) + base)

    def shift(sigma) -> Tuple[ScalarField, float]:
        well_hessian = pointwise(phi_p - sigma, DoubleWell.d2W_convex, opts.dealias) / eps
        return well_hessian, 1.0 / tau + 1.0 + well_hessian.mean()

    def certificate(sigma, F):
        _, c = shift(sigma)
        return solve_diagonal(op, 1.0, eps, c, F, s).l2_norm() / scale

    def direction(sigma, F):
        well_hessian, c = shift(sigma)

        def jacobian(z):
            return (z * (1.0 / tau + 1.0) + well_hessian * z
                    + eps * apply_power(op, 1.0, z) + apply_power(op, s, z))

        def half(r):
            return solve_diagonal(op, 1.0, eps, c, r, s, power=0.5)

        return _pcg(state.grid, jacobian, half, -F, opts, "sigma")

    return _newton("sigma", sigma_p, residual, certificate, direction, opts)


def phi_step(state: FlowState, sigma_k: ScalarField,
             opts: SchemeOptions = SchemeOptions()) -> Tuple[ScalarField, int, float]:
    """phi_k = phi_p + delta with mean(delta) = 0 solving

        A^{-s} delta / tau + P0[W~'(phi - sigma_k)/eps + W-'(phi_p - sigma_k)/eps
                               + eps A (phi - sigma_k) + sigma_k] = 0
    """
    op, eps, tau, s = state.op, state.eps, state.tau, state.s
    phi_p = state.phi
    explicit = pointwise(phi_p - sigma_k, DoubleWell.dW_concave, opts.dealias) / eps
    base = explicit + sigma_k
    scale = 1.0 + phi_p.l2_norm()

    def project(delta):
        return delta.project_mean_zero()

    def residual(delta):
        u = phi_p + delta - sigma_k
        bulk = (pointwise(u, DoubleWell.dW_convex, opts.dealias) / eps
                + eps * apply_power(op, 1.0, u) + base)
        return apply_inverse_power(op, s, delta, opts.mean_tol) / tau + bulk.project_mean_zero()

    def shift(delta) -> Tuple[ScalarField, float]:
        well_hessian = pointwise(phi_p + delta - sigma_k, DoubleWell.d2W_convex, opts.dealias) / eps
        return well_hessian, well_hessian.mean()

    def certificate(delta, G):
        _, c = shift(delta)
        return solve_diagonal(op, 1.0 / tau, eps, c, G, -s, mean_zero=True).l2_norm() / scale

    def direction(delta, G):
        well_hessian, c = shift(delta)

        def jacobian(z):
            return (apply_inverse_power(op, s, z, opts.mean_tol) / tau
                    + (well_hessian * z + eps * apply_power(op, 1.0, z)).project_mean_zero())

        def half(r):
            return solve_diagonal(op, 1.0 / tau, eps, c, r, -s, power=0.5, mean_zero=True)

        return _pcg(state.grid, jacobian, half, -G, opts, "phi")

    delta0 = ScalarField.constant(state.grid, 0.0)
    delta, iters, cert = _newton("phi", delta0, residual, certificate, direction, opts, project)
    phi_k = phi_p + delta
    phi_k = phi_k + (state.phi_mean0 - phi_k.mean())
    return phi_k, iters, cert


# ------------------------------
# Step and run
# ------------------------------

def _dissipation(state: FlowState, sigma_k: ScalarField, phi_k: ScalarField,
                 opts: SchemeOptions) -> Tuple[float, float]:
    tau = state.tau
    d_sigma = (sigma_k - state.sigma).l2_norm() ** 2 / tau
    d_phi_field = (phi_k - state.phi).project_mean_zero()
    d_phi = norm_h_minus_s(state.op, state.s, d_phi_field, opts.mean_tol) ** 2 / tau
    return d_sigma, d_phi


def step(state: FlowState, opts: SchemeOptions = SchemeOptions(),
         energy_before: Optional[EnergyBreakdown] = None) -> Tuple[FlowState, StepReport]:
    if energy_before is None:
        energy_before = state.energy()
    sigma_k, it_sigma, res_sigma = sigma_step(state, opts)
    phi_k, it_phi, res_phi = phi_step(state, sigma_k, opts)
    new_state = replace(state, phi=phi_k, sigma=sigma_k, t=state.t + state.tau)
    energy_after = new_state.energy()
    d_sigma, d_phi = _dissipation(state, sigma_k, phi_k, opts)

    e0, e1 = energy_before.total, energy_after.total
    tol = opts.ledger_tol * max(abs(e0), 1.0)
    if e1 + d_sigma + d_phi > e0 + tol:
        logger.warning("ledger violation at t=%.6g: E %.12e -> %.12e, dissipation %.3e", new_state.t, e0, e1,
                       d_sigma + d_phi)
        raise DissipationViolation(e0, e1, d_sigma + d_phi, tol)

    report = StepReport(
        t=new_state.t, tau=state.tau,
        energy_before=e0, energy_after=e1,
        diss_sigma=d_sigma, diss_phi=d_phi,
        newton_iters_sigma=it_sigma, newton_iters_phi=it_phi,
        residual_sigma=res_sigma, residual_phi=res_phi,
    )
    logger.debug("t=%.6g E=%.12e newton=(%d,%d) residuals=(%.2e,%.2e)",
                 report.t, e1, it_sigma, it_phi, res_sigma, res_phi)
    return new_state, report


@dataclass
class StepEvent:
    step: int
    state: FlowState
    report: StepReport
    energy: EnergyBreakdown
    ledger: LedgerRow


@dataclass
class RunResult:
    final_state: FlowState
    energy_initial: float
    reports: List[StepReport] = field(default_factory=list)
    ledger: List[LedgerRow] = field(default_factory=list)
    retries: int = 0
    wall_time: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.reports)

    @property
    def energy_final(self) -> float:
        return self.reports[-1].energy_after if self.reports else self.energy_initial

    @property
    def dissipation_total(self) -> float:
        return sum(r.diss_sigma + r.diss_phi for r in self.reports)


def _ledger_row(tag: str, index: int, state: FlowState, energy: EnergyBreakdown,
                report: StepReport, diss_sigma_cum: float, diss_phi_cum: float) -> LedgerRow:
    return LedgerRow(
        config_hash=tag, step=index, t=state.t,
        E_eps=energy.total, M_eps=energy.m_eps,
        F=energy.f_coupling + energy.f_sigma_l2 + energy.f_as,
        diss_sigma_cum=diss_sigma_cum, diss_phi_cum=diss_phi_cum,
        mean_phi=state.phi.mean(), mean_sigma=state.sigma.mean(),
        newton_iters=report.newton_iters_sigma + report.newton_iters_phi,
        residual_sigma=report.residual_sigma, residual_phi=report.residual_phi,
    )


def check_apriori(state: FlowState, energy: EnergyBreakdown, energy_initial: float,
                  dissipation_cum: float, rel: float = 1e-8) -> None:
    bounds = apriori_bounds(energy_initial, state.grid.volume, state.eps)
    slack = rel * max(abs(energy_initial), 1.0)
    sigma_hs = state.sigma.l2_norm() ** 2 + bilinear_as(state.op, state.s, state.sigma, state.sigma)
    l4, witness = coercivity_witness(state.u, state.eps)
    checks = (
        ("||sigma||^2_{H^s}", sigma_hs, bounds.sigma_hs_squared),
        ("M^eps", energy.m_eps, bounds.m_eps),
        ("||u||^4_{L4}", l4, bounds.u_l4_fourth),
        ("||u||^4_{L4} (coercivity)", l4, witness),
        ("cumulative dissipation", dissipation_cum, bounds.dissipation_total),
    )
    for name, value, bound in checks:
        if value > bound + slack:
            raise AprioriBoundViolation(name, value, bound)


def run(initial: FlowState, t_end: float, opts: SchemeOptions = SchemeOptions(),
        callbacks: Sequence[Callable[[StepEvent], None]] = (), tag: str = "") -> RunResult:
    """Advance ``initial`` to ``t_end`` with nominal step initial.tau.

    A step whose Newton solve fails is retried with tau halved, at most
    ``opts.max_retries`` times. Callbacks receive every accepted step.
    """
    if not t_end > initial.t:
        raise InvalidFieldError(f"t_end = {t_end} must exceed the initial time {initial.t}")
    started = time.perf_counter()
    energy = initial.energy()
    result = RunResult(final_state=initial, energy_initial=energy.total)
    logger.info("run %s: grid=%s eps=%g tau=%g s=%g t_end=%g E0=%.10e",
                tag or "-", initial.grid.shape, initial.eps, initial.tau, initial.s, t_end, energy.total)

    nominal_tau = initial.tau
    state = initial
    diss_sigma_cum = diss_phi_cum = 0.0
    index = 0
    t_tol = 1e-12 * max(1.0, abs(t_end))
    while state.t < t_end - t_tol:
        tau = min(nominal_tau, t_end - state.t)
        attempt = 0
        while True:
            try:
                new_state, report = step(replace(state, tau=tau), opts, energy)
                break
            except NewtonConvergenceError as exc:
                if attempt >= opts.max_retries:
                    logger.error("run %s aborted at t=%.6g: %s", tag or "-", state.t, exc)
                    raise
                attempt += 1
                result.retries += 1
                tau *= 0.5
                logger.warning("Newton failed at t=%.6g (%s); retrying with tau=%g", state.t, exc.stage, tau)

        index += 1
        state = replace(new_state, tau=nominal_tau)
        energy = state.energy()
        diss_sigma_cum += report.diss_sigma
        diss_phi_cum += report.diss_phi
        if opts.check_apriori:
            check_apriori(state, energy, result.energy_initial, diss_sigma_cum + diss_phi_cum)
        row = _ledger_row(tag, index, state, energy, report, diss_sigma_cum, diss_phi_cum)
        result.reports.append(report)
        result.ledger.append(row)
        result.final_state = state
        for callback in callbacks:
            callback(StepEvent(step=index, state=state, report=report, energy=energy, ledger=row))

    dissipated = diss_sigma_cum + diss_phi_cum
    if result.energy_initial - energy.total < dissipated - 1e-6 * abs(result.energy_initial):
        raise DissipationViolation(result.energy_initial, energy.total, dissipated,
                                   1e-6 * abs(result.energy_initial))
    result.wall_time = time.perf_counter() - started
    logger.info("run %s finished: %d steps, E=%.10e, dissipated %.6e, %.2fs",
                tag or "-", result.steps, energy.total, dissipated, result.wall_time)
    return result


# ------------------------------
# Consistency with the continuous system
# ------------------------------

@dataclass(frozen=True)
class PdeResidual:
    r_phi: float
    r_sigma: float
    r_phi_pde: float


def pde_residual(previous: FlowState, current: FlowState, mean_tol: float = 1e-10) -> PdeResidual:
    """Difference-quotient residuals of the continuous system at the newer state.

    r_phi uses phi' = -A^s (v + sigma); r_phi_pde rebuilds the same quantity from
    the u-equation u' + A^s v = 2 sigma + u - v plus the sigma-equation.
    """
    op, s, eps = current.op, current.s, current.eps
    dt = current.t - previous.t
    if not dt > 0:
        raise InvalidFieldError(f"states must be consecutive in time, got dt = {dt}")
    u = current.u
    v = chemical_potential(op, u, eps)
    sigma = current.sigma
    phi_dot = (current.phi - previous.phi) / dt
    sigma_dot = (current.sigma - previous.sigma) / dt
    u_dot = (current.u - previous.u) / dt

    r_phi_field = (phi_dot + apply_power(op, s, v + sigma)).project_mean_zero()
    sigma_field = sigma_dot + apply_power(op, s, sigma) - v + current.phi + sigma
    u_field = u_dot + apply_power(op, s, v) - (2.0 * sigma + u - v)
    r_pde_field = (u_field + sigma_field).project_mean_zero()

    return PdeResidual(
        r_phi=norm_h_minus_s(op, s, r_phi_field, mean_tol),
        r_sigma=sigma_field.l2_norm(),
        r_phi_pde=norm_h_minus_s(op, s, r_pde_field, mean_tol),
    )
