"""Radial sharp-interface reference solutions.

Finite differences on uniform radial grids, independent of the spectral
machinery used by the diffuse runs.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import spsolve

from app.services.errors import EmptyMaskError, InvalidFieldError, OracleError
from app.services.interface_diagnostics import Contour, signed_distance
from app.services.potential import SurfaceTension
from app.services.spectral_core import FractionalOperator, ScalarField, apply_power

logger = logging.getLogger(__name__)

Profile = Union[float, Callable[[np.ndarray], np.ndarray]]


def _evaluate(profile: Profile, r: np.ndarray) -> np.ndarray:
    if callable(profile):
        return np.broadcast_to(np.asarray(profile(r), dtype=float), r.shape)
    return np.full(r.shape, float(profile))


@dataclass(frozen=True)
class RadialProblem:
    """Interface at r = R, Omega+ = {r < R}, truncated at R_out with a Neumann wall."""

    R: float
    R_out: float
    gibbs_coef: float
    s: float = 1.0
    phi_plus: Profile = 0.0
    phi_minus: Profile = 0.0
    sigma_plus: Profile = 0.0
    sigma_minus: Profile = 0.0
    n_r: int = 400
    dim: int = 2

    def __post_init__(self):
        if not (0.0 < self.R < self.R_out) or not np.isfinite(self.R_out):
            raise OracleError(f"need 0 < R < R_out, got R = {self.R}, R_out = {self.R_out}")
        if self.n_r < 200:
            raise InvalidFieldError(f"n_r must be >= 200, got {self.n_r}")
        if self.dim not in (2, 3):
            raise InvalidFieldError(f"radial dimension must be 2 or 3, got {self.dim}")

    @property
    def interface_value(self) -> float:
        """Gibbs-Thomson boundary value of v on the sphere: gibbs_coef times its mean curvature."""
        return self.gibbs_coef * (self.dim - 1) / self.R


@dataclass(frozen=True)
class RadialVelocity:
    r_inner: np.ndarray
    v_inner: np.ndarray
    r_outer: np.ndarray
    v_outer: np.ndarray
    jump: float
    R_dot: float
    residual_max: float


def _radial_matrix(r: np.ndarray, h: float, d: int, regular_origin: bool, neumann_end: bool):
    """-v'' - (d-1)/r v' + v on the unknown nodes r (tridiagonal)."""
    n = r.size
    main = np.full(n, 2.0 / h ** 2 + 1.0)
    lower = np.empty(n - 1)
    upper = np.empty(n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        adv = np.where(r > 0, (d - 1) / (2.0 * h * r), 0.0)
    lower[:] = -1.0 / h ** 2 + adv[1:]
    upper[:] = -1.0 / h ** 2 - adv[:-1]
    if regular_origin:
        # Laplacian at r = 0 is d v''(0) with v''(0) ~ 2 (v1 - v0) / h^2
        main[0] = 2.0 * d / h ** 2 + 1.0
        upper[0] = -2.0 * d / h ** 2
    if neumann_end:
        lower[-1] = -2.0 / h ** 2
    return diags([lower, main, upper], offsets=[-1, 0, 1], format="csc")


def _solve(matrix, rhs: np.ndarray, what: str) -> np.ndarray:
    diag = matrix.diagonal()
    if np.any(diag <= 0) or not np.all(np.isfinite(matrix.data)):
        raise OracleError(f"{what}: degenerate tridiagonal system")
    x = spsolve(matrix, rhs)
    if not np.all(np.isfinite(x)):
        raise OracleError(f"{what}: ill-conditioned solve produced non-finite values")
    return x


def radial_sharp_velocity(p: RadialProblem) -> RadialVelocity:
    """Solve -Delta v + v = phi + sigma on both sides of r = R with v(R) fixed.

    jump = dv/dr(R-) - dv/dr(R+) and R_dot = -jump / 2.
    """
    if p.s != 1:
        raise OracleError(f"radial oracle handles s = 1 only, got s = {p.s}; use s2_jump_probe")
    d, vg, n = p.dim, p.interface_value, p.n_r

    # inner: r_i = i h, i = 0..n, v_n = vg
    h_in = p.R / n
    r_in = h_in * np.arange(n + 1)
    f_in = _evaluate(p.phi_plus, r_in) + _evaluate(p.sigma_plus, r_in)
    A_in = _radial_matrix(r_in[:-1], h_in, d, regular_origin=True, neumann_end=False)
    b_in = f_in[:-1].copy()
    b_in[-1] += (1.0 / h_in ** 2 + (d - 1) / (2.0 * h_in * r_in[-2])) * vg
    v_in = np.append(_solve(A_in, b_in, "inner radial problem"), vg)

    # outer: r_j = R + j h, j = 0..n, v_0 = vg, Neumann at R_out
    h_out = (p.R_out - p.R) / n
    r_out = p.R + h_out * np.arange(n + 1)
    f_out = _evaluate(p.phi_minus, r_out) + _evaluate(p.sigma_minus, r_out)
    A_out = _radial_matrix(r_out[1:], h_out, d, regular_origin=False, neumann_end=True)
    b_out = f_out[1:].copy()
    b_out[0] += (1.0 / h_out ** 2 - (d - 1) / (2.0 * h_out * r_out[1])) * vg
    v_out = np.insert(_solve(A_out, b_out, "outer radial problem"), 0, vg)

    dv_inner = (3.0 * v_in[-1] - 4.0 * v_in[-2] + v_in[-3]) / (2.0 * h_in)
    dv_outer = (-3.0 * v_out[0] + 4.0 * v_out[1] - v_out[2]) / (2.0 * h_out)
    jump = dv_inner - dv_outer

    residual = max(
        float(np.max(np.abs(A_in @ v_in[:-1] - b_in))),
        float(np.max(np.abs(A_out @ v_out[1:] - b_out))),
    )
    logger.debug("radial oracle R=%.5f: v_G=%.5f jump=%.6e residual=%.2e", p.R, vg, jump, residual)
    return RadialVelocity(
        r_inner=r_in, v_inner=v_in, r_outer=r_out, v_outer=v_out,
        jump=float(jump), R_dot=float(-0.5 * jump), residual_max=residual,
    )


def sharp_energy_rate(V: float, kappa_mean: float, gamma_length: float, sigma: ScalarField,
                      sigma_dot: ScalarField, u: ScalarField, op: FractionalOperator, s: float,
                      st: SurfaceTension, sigma_interface_mean: float = 0.0,
                      curvature_factor: float = 2.0) -> float:
    """d/dt E^0 for a constant normal velocity V and curvature kappa on Gamma.

    kappa is the geometric curvature (+1/R on a disc); the interface term uses
    the inward curvature -kappa. curvature_factor = 1 gives d/dt(st |Gamma|).
    """
    if gamma_length < 0:
        raise InvalidFieldError(f"interface length must be >= 0, got {gamma_length}")
    interface = -curvature_factor * st.value * V * (-kappa_mean) * gamma_length
    transport = 2.0 * V * sigma_interface_mean * gamma_length
    bulk_field = apply_power(op, s, sigma) + u + 3.0 * sigma
    return float(interface + transport + sigma_dot.inner(bulk_field))


def _offset_fluxes(op: FractionalOperator, w: ScalarField, rho: np.ndarray, d: float,
                   width: float) -> Optional[Tuple[float, float]]:
    """Mean d w/dn on the smoothed offset curves {rho = d} and {rho = -d}.

    With chi a smooth indicator of the region beyond the curve, the flux of
    grad w through it is -(A chi, w) up to sign, so w is never differentiated
    pointwise. None when the inner region is thinner than four widths.
    """
    grid = w.grid
    dv = grid.cell_volume
    means = []
    for sign, x in ((1.0, (rho - d) / width), (-1.0, (-rho - d) / width)):
        t = np.tanh(x)
        chi = 0.5 * (1.0 + t)
        kernel = 0.5 * (1.0 - t * t) / width
        area, perimeter = float(np.sum(chi)) * dv, float(np.sum(kernel)) * dv
        if perimeter <= 0 or area < 2.0 * width * perimeter:
            return None
        flux = apply_power(op, 1.0, ScalarField(grid, values=chi)).inner(w)
        means.append(-sign * flux / perimeter)
    return means[0], means[1]


def s2_jump_probe(op: FractionalOperator, v: ScalarField, contour: Contour, band: float,
                  width: Optional[float] = None, offsets: int = 5) -> float:
    """[d(Av)/dn] across the contour, inside minus outside along the outward normal.

    One-sided means are taken on offset curves at distances band, 1.125 band,
    ... (transition width ``width``, default band / 6) and the difference is
    extrapolated linearly to the contour. ``band`` should clear the inner
    layer, 6 eps or more.
    """
    if band <= 0:
        raise InvalidFieldError(f"offset band must be > 0, got {band}")
    width = band / 6.0 if width is None else width
    if width <= 0:
        raise InvalidFieldError(f"transition width must be > 0, got {width}")
    w = apply_power(op, 1.0, v)
    rho = signed_distance(v.grid, contour)

    samples = []
    for d in band * (1.0 + 0.125 * np.arange(max(offsets, 1))):
        means = _offset_fluxes(op, w, rho, float(d), width)
        if means is not None:
            samples.append((d, means[0] - means[1]))
    if not samples:
        raise EmptyMaskError(f"no offset curve at distance >= {band:g} fits inside the interface")
    if len(samples) == 1:
        return float(samples[0][1])
    d, jump = np.array(samples).T
    _, intercept = np.polyfit(d, jump, 1)
    logger.debug("s2 jump: %d offsets, values %s, extrapolated %.6e", len(d), np.round(jump, 6), intercept)
    return float(intercept)


def radial_problem_from_state(R: float, R_out: float, phi: ScalarField, sigma: ScalarField, u: ScalarField,
                              gibbs_coef: float, n_r: int = 400) -> RadialProblem:
    """Radial data from a diffuse state: phase averages of phi and sigma over {u > 0} and {u < 0}."""
    plus = u.values > 0
    if not plus.any() or plus.all():
        raise OracleError("state has no interface to feed the radial oracle")
    return RadialProblem(
        R=R, R_out=R_out, gibbs_coef=gibbs_coef,
        phi_plus=float(np.mean(phi.values[plus])), phi_minus=float(np.mean(phi.values[~plus])),
        sigma_plus=float(np.mean(sigma.values[plus])), sigma_minus=float(np.mean(sigma.values[~plus])),
        n_r=n_r,
    )
