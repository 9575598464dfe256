"""Double-well potential, energy functionals and well-prepared initial data."""

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import integrate

from app.schemas import AprioriBounds, EnergyBreakdown, SurfaceTensionMode
from app.services.errors import InvalidFieldError, SharpConfigurationError, WellPreparedError
from app.services.spectral_core import (
    FractionalOperator,
    ScalarField,
    apply_power,
    bilinear_as,
    gradient_norm_squared,
    pointwise,
)

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


# ------------------------------
# Double well and its splitting
# ------------------------------

class DoubleWell:
    """W(x) = (x^2 - 1)^2 split as W = W_convex + W_concave."""

    @staticmethod
    def W(x):
        return (x * x - 1.0) ** 2

    @staticmethod
    def dW(x):
        return 4.0 * x * (x * x - 1.0)

    @staticmethod
    def W_convex(x):
        return x ** 4 + 1.0

    @staticmethod
    def dW_convex(x):
        return 4.0 * x ** 3

    @staticmethod
    def d2W_convex(x):
        return 12.0 * x * x

    @staticmethod
    def W_concave(x):
        return -2.0 * x * x

    @staticmethod
    def dW_concave(x):
        return -4.0 * x

    @staticmethod
    def optimal_profile(signed_distance, eps: float):
        """Solution of eps u' = sqrt(2 W(u)) through zero: tanh(sqrt(2) d / eps)."""
        return np.tanh(SQRT2 * np.asarray(signed_distance) / eps)


class SurfaceTension(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: SurfaceTensionMode = SurfaceTensionMode.modica_mortola

    @property
    def value(self) -> float:
        if self.mode == SurfaceTensionMode.paper_cw:
            return 16.0 / 15.0
        return 4.0 * SQRT2 / 3.0

    def quadrature(self) -> float:
        """The defining integral over [-1, 1], evaluated numerically."""
        if self.mode == SurfaceTensionMode.paper_cw:
            integrand = DoubleWell.W
        else:
            integrand = lambda x: np.sqrt(2.0 * DoubleWell.W(x))
        value, _ = integrate.quad(integrand, -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)
        return float(value)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or eps <= 0:
        raise InvalidFieldError(f"interface width eps must be > 0, got {eps}")
    return eps


# ------------------------------
# Energies
# ------------------------------

def modica_mortola_parts(u: ScalarField, eps: float) -> Tuple[float, float]:
    """(gradient part, potential part) of M^eps(u)."""
    eps = _check_eps(eps)
    dv = u.grid.cell_volume
    grad = 0.5 * eps * float(np.sum(gradient_norm_squared(u))) * dv
    pot = float(np.sum(DoubleWell.W(u.values))) * dv / eps
    return grad, pot


def modica_mortola_energy(u: ScalarField, eps: float) -> float:
    grad, pot = modica_mortola_parts(u, eps)
    return grad + pot


def coupling_energy(op: FractionalOperator, s: float, phi: ScalarField, sigma: ScalarField) -> float:
    """F(phi, sigma) = <sigma, phi> + a_s(sigma, sigma)/2 + ||sigma||^2/2."""
    op.check(phi)
    op.check(sigma)
    return sigma.inner(phi) + 0.5 * bilinear_as(op, s, sigma, sigma) + 0.5 * sigma.l2_norm() ** 2


def total_energy_eps(op: FractionalOperator, s: float, phi: ScalarField, sigma: ScalarField,
                     eps: float) -> EnergyBreakdown:
    u = phi - sigma
    m_grad, m_pot = modica_mortola_parts(u, eps)
    f_coupling = sigma.inner(phi)
    f_sigma_l2 = 0.5 * sigma.l2_norm() ** 2
    f_as = 0.5 * bilinear_as(op, s, sigma, sigma)
    m_eps = m_grad + m_pot
    return EnergyBreakdown(
        m_eps=m_eps,
        m_gradient=m_grad,
        m_potential=m_pot,
        f_coupling=f_coupling,
        f_sigma_l2=f_sigma_l2,
        f_as=f_as,
        total=m_eps + f_coupling + f_sigma_l2 + f_as,
    )


def sharp_energy(interface_measure: float, phi: ScalarField, sigma: ScalarField, st: SurfaceTension,
                 op: FractionalOperator, s: float, exclude: Optional[np.ndarray] = None,
                 tol: float = 1e-6) -> float:
    """E^0 = st * H^{d-1}(Gamma) + F(phi, sigma) for a two-valued u = phi - sigma.

    ``exclude`` masks the nodes of a declared interface band, where u is not
    required to sit in {-1, 1}.
    """
    if interface_measure < 0 or not np.isfinite(interface_measure):
        raise InvalidFieldError(f"interface measure must be finite and >= 0, got {interface_measure}")
    u = (phi - sigma).values
    keep = np.ones(u.shape, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    defect = np.abs(np.abs(u[keep]) - 1.0)
    if defect.size and float(np.max(defect)) > tol:
        raise SharpConfigurationError(f"max | |u| - 1 | = {float(np.max(defect)):.3e} outside the band")
    return st.value * interface_measure + coupling_energy(op, s, phi, sigma)


def chemical_potential(op: FractionalOperator, u: ScalarField, eps: float, dealias: bool = False) -> ScalarField:
    """v = W'(u)/eps + eps A u."""
    eps = _check_eps(eps)
    reaction = pointwise(u, DoubleWell.dW, dealias=dealias)
    return reaction / eps + eps * apply_power(op, 1.0, u)


# ------------------------------
# Initial data
# ------------------------------

def _interface_nodes(d: np.ndarray, spacing) -> np.ndarray:
    return np.abs(d) <= max(spacing)


def well_prepared_data(signed_distance: ScalarField, sigma0: ScalarField, eps: float,
                       require_closed: bool = True,
                       op: Optional[FractionalOperator] = None, s: float = 1.0) -> Tuple[ScalarField, ScalarField]:
    """Recovery data u0 = tanh(sqrt(2) d / eps), phi0 = u0 + sigma0.

    The interface has to stay 6 eps away from the walls. An open interface
    (``require_closed=False``, e.g. a stripe) may meet the walls, and is then
    only checked along its normal direction.
    """
    eps = _check_eps(eps)
    grid = signed_distance.grid
    d = signed_distance.values
    if not (np.any(d > 0) and np.any(d < 0)):
        raise WellPreparedError("signed distance does not change sign, there is no interface")

    near = _interface_nodes(d, grid.spacing)
    margin = 6.0 * eps - max(grid.spacing)
    if np.any(near):
        grads = np.gradient(d, *grid.spacing) if grid.dim > 1 else [np.gradient(d, grid.spacing[0])]
        for axis in range(grid.dim):
            x = grid.mesh()[axis][near]
            wall = np.minimum(x, grid.lengths[axis] - x)
            if not require_closed:
                normal = np.abs(grads[axis][near]) > 0.5
                wall = wall[normal]
            if wall.size and float(np.min(wall)) < margin:
                raise WellPreparedError(
                    f"interface lies {float(np.min(wall)):.4f} from the wall along axis {axis}, "
                    f"needs at least 6*eps = {6.0 * eps:.4f}"
                )

    u0 = ScalarField(grid, values=DoubleWell.optimal_profile(d, eps))
    phi0 = u0 + sigma0
    if op is not None:
        energy = total_energy_eps(op, s, phi0, sigma0, eps).total
        if not np.isfinite(energy):
            raise WellPreparedError("initial energy is not finite")
    logger.debug("well-prepared data: eps=%g, interface nodes=%d", eps, int(np.count_nonzero(near)))
    return phi0, sigma0


# ------------------------------
# A-priori certificates
# ------------------------------

def apriori_bounds(energy_initial: float, volume: float, eps: float) -> AprioriBounds:
    """Explicit bounds implied by E^eps(phi_k, sigma_k) <= E0 for eps <= 1.

    From <sigma, u> >= -(|sigma|^2 + |u|^2)/2 and u^2/2 <= W(u)/2 + 5/8, the
    energy controls M^eps/2 + ||sigma||^2 + a_s/2 up to 5|Omega|/8.
    """
    eps = _check_eps(eps)
    if eps > 1.0:
        raise InvalidFieldError(f"a-priori bounds need eps <= 1, got {eps}")
    base = 2.0 * energy_initial + 1.5 * volume
    return AprioriBounds(
        sigma_hs_squared=base,
        m_eps=base,
        u_l4_fourth=2.0 * (eps * base + volume),
        dissipation_total=energy_initial + 0.75 * volume,
    )


def coercivity_witness(u: ScalarField, eps: float) -> Tuple[float, float]:
    """(||u||_{L4}^4, 2 (eps M^eps(u) + |Omega|)); the first never exceeds the second."""
    lhs = float(np.sum(u.values ** 4)) * u.grid.cell_volume
    rhs = 2.0 * (eps * modica_mortola_energy(u, eps) + u.grid.volume)
    return lhs, rhs
