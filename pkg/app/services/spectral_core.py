"""Spectral realization of the Neumann Laplacian on a rectangular box.

Fields are sampled on the cosine-collocation nodes x_j = L (j + 1/2) / N and
expanded in the unnormalised tensor cosine basis

    e_k(x) = prod_i cos(pi k_i x_i / L_i),     f = sum_k c_k e_k,

so that c_0 is exactly the mean of the field. The DCT-II / DST-II pair from
``scipy.fft`` maps nodal values to coefficients and back; every power of A is
diagonal in this basis with eigenvalues lambda_k = sum_i (pi k_i / L_i)^2.
"""

import logging
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from app.config import get_settings
from app.schemas import GridSpec
from app.services.errors import DiagonalSolveError, InvalidFieldError, MeanZeroError

logger = logging.getLogger(__name__)

DEFAULT_MEAN_TOL = 1e-10


def _workers() -> int:
    return get_settings().fft_workers


def _broadcast(vec: np.ndarray, axis: int, dim: int) -> np.ndarray:
    shape = [1] * dim
    shape[axis] = vec.size
    return vec.reshape(shape)


def _coefficient_scale(grid: GridSpec) -> np.ndarray:
    """Maps raw DCT-II output to basis coefficients: 1/(2N) on k_i = 0, 1/N otherwise."""
    scale = np.ones(grid.shape)
    for axis, n in enumerate(grid.counts):
        w = np.full(n, 1.0 / n)
        w[0] = 0.5 / n
        scale = scale * _broadcast(w, axis, grid.dim)
    return scale


def _parseval_weights(grid: GridSpec) -> np.ndarray:
    """||e_k||^2 / |Omega| = prod_i (1 if k_i == 0 else 1/2)."""
    nu = np.ones(grid.shape)
    for axis, n in enumerate(grid.counts):
        w = np.full(n, 0.5)
        w[0] = 1.0
        nu = nu * _broadcast(w, axis, grid.dim)
    return nu


# ------------------------------
# ScalarField
# ------------------------------

class ScalarField:
    """A real field on a GridSpec, carried in nodal and/or cosine-spectral form.

    Either representation is computed lazily from the other and cached; both
    are treated as immutable once set.
    """

    def __init__(self, grid: GridSpec, values: Optional[np.ndarray] = None,
                 coeffs: Optional[np.ndarray] = None):
        if values is None and coeffs is None:
            raise InvalidFieldError("a ScalarField needs nodal values or coefficients")
        self.grid = grid
        self._values = None if values is None else self._checked(values, "nodal values")
        self._coeffs = None if coeffs is None else self._checked(coeffs, "coefficients")

    def _checked(self, array, what: str) -> np.ndarray:
        array = np.asarray(array, dtype=float)
        if array.shape != self.grid.shape:
            raise InvalidFieldError(f"{what} have shape {array.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(array)):
            bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
            raise InvalidFieldError(f"{what} contain {bad} non-finite entries (NaN/Inf)")
        array.setflags(write=False)
        return array

    # ---- constructors ----

    @classmethod
    def from_values(cls, grid: GridSpec, values) -> "ScalarField":
        return cls(grid, values=np.array(values, dtype=float))

    @classmethod
    def from_coeffs(cls, grid: GridSpec, coeffs) -> "ScalarField":
        return cls(grid, coeffs=np.array(coeffs, dtype=float))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, values=np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[..., np.ndarray]) -> "ScalarField":
        return cls(grid, values=np.broadcast_to(fn(*grid.mesh()), grid.shape).astype(float))

    # ---- representations ----

    @property
    def has_values(self) -> bool:
        return self._values is not None

    @property
    def has_coeffs(self) -> bool:
        return self._coeffs is not None

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            raw = self._coeffs / _coefficient_scale(self.grid)
            self._values = self._checked(sfft.idctn(raw, type=2, workers=_workers()), "nodal values")
        return self._values

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            raw = sfft.dctn(self._values, type=2, workers=_workers())
            self._coeffs = self._checked(raw * _coefficient_scale(self.grid), "coefficients")
        return self._coeffs

    # ---- quadrature ----

    def mean(self) -> float:
        if self._coeffs is not None:
            return float(self._coeffs.flat[0])
        return float(np.mean(self._values))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def inner(self, other: "ScalarField") -> float:
        _check_same_grid(self, other)
        return float(np.sum(self.values * other.values) * self.grid.cell_volume)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2) * self.grid.cell_volume))

    def spectral_l2_norm(self) -> float:
        """Parseval side of the L2 norm: |Omega| sum_k nu_k c_k^2."""
        return float(np.sqrt(self.grid.volume * np.sum(_parseval_weights(self.grid) * self.coeffs ** 2)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    # ---- arithmetic (nodal) ----

    def _combine(self, other, op) -> "ScalarField":
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return ScalarField(self.grid, values=op(self.values, other.values))
        return ScalarField(self.grid, values=op(self.values, float(other)))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __radd__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    def __rmul__(self, other):
        return self._combine(other, np.multiply)

    def __truediv__(self, other):
        return self._combine(other, np.divide)

    def __neg__(self):
        return ScalarField(self.grid, values=-self.values)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return ScalarField(self.grid, values=fn(self.values))

    def project_mean_zero(self) -> "ScalarField":
        return ScalarField(self.grid, values=self.values - np.mean(self.values))

    def __repr__(self) -> str:
        forms = [name for name, arr in (("nodal", self._values), ("spectral", self._coeffs)) if arr is not None]
        return f"ScalarField(shape={self.grid.shape}, forms={forms})"


def _check_same_grid(a: ScalarField, b: ScalarField) -> None:
    if a.grid != b.grid:
        raise InvalidFieldError(f"grid mismatch: {a.grid.shape} vs {b.grid.shape}")


def to_spectral(f: ScalarField) -> ScalarField:
    """Return f carrying its cosine coefficients (computed if missing)."""
    return ScalarField(f.grid, values=f.values if f.has_values else None, coeffs=f.coeffs)


def to_nodal(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, values=f.values, coeffs=f.coeffs if f.has_coeffs else None)


# ------------------------------
# FractionalOperator
# ------------------------------

class FractionalOperator:
    """Neumann Laplacian A = -Delta on a box, diagonal in the cosine basis."""

    def __init__(self, grid: GridSpec, mean_tol: float = DEFAULT_MEAN_TOL):
        self.grid = grid
        self.mean_tol = mean_tol

    @cached_property
    def wavenumbers(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.pi * np.arange(n) / L for n, L in zip(self.grid.counts, self.grid.lengths))

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        lam = np.zeros(self.grid.shape)
        for axis, k in enumerate(self.wavenumbers):
            lam = lam + _broadcast(k ** 2, axis, self.grid.dim)
        lam.setflags(write=False)
        return lam

    @cached_property
    def parseval_weights(self) -> np.ndarray:
        return _parseval_weights(self.grid)

    def power_symbol(self, s: float) -> np.ndarray:
        """lambda_k^s with the convention 0^s = 0 for s > 0 and 0^0 = 1."""
        if s == 0:
            return np.ones(self.grid.shape)
        lam = self.eigenvalues
        out = np.zeros_like(lam)
        nz = lam > 0
        out[nz] = lam[nz] ** s
        return out

    def check(self, f: ScalarField) -> None:
        if f.grid != self.grid:
            raise InvalidFieldError(f"grid mismatch: field {f.grid.shape}, operator {self.grid.shape}")

    def check_mean_zero(self, f: ScalarField, mean_tol: Optional[float] = None) -> None:
        tol = self.mean_tol if mean_tol is None else mean_tol
        mean = f.mean()
        scale = max(f.spectral_l2_norm() / np.sqrt(self.grid.volume), 1.0)
        if abs(mean) > tol * scale:
            raise MeanZeroError(mean, tol * scale)


def _validate_order(s: float, strictly_positive: bool = False) -> float:
    s = float(s)
    if not np.isfinite(s) or s < 0 or (strictly_positive and s == 0):
        raise InvalidFieldError(f"fractional order must be {'> 0' if strictly_positive else '>= 0'}, got {s}")
    return s


def apply_power(op: FractionalOperator, s: float, f: ScalarField) -> ScalarField:
    """A^s f: coefficients multiplied by lambda_k^s."""
    s = _validate_order(s)
    op.check(f)
    return ScalarField(op.grid, coeffs=op.power_symbol(s) * f.coeffs)


def apply_inverse_power(op: FractionalOperator, s: float, f: ScalarField,
                        mean_tol: Optional[float] = None) -> ScalarField:
    """A^{-s} f on the mean-zero subspace; the output has zero mean."""
    s = _validate_order(s, strictly_positive=True)
    op.check(f)
    op.check_mean_zero(f, mean_tol)
    return ScalarField(op.grid, coeffs=_inverse_symbol(op, s) * f.coeffs)


def _inverse_symbol(op: FractionalOperator, s: float) -> np.ndarray:
    lam = op.eigenvalues
    out = np.zeros_like(lam)
    nz = lam > 0
    out[nz] = lam[nz] ** (-s)
    return out


def diagonal_symbol(op: FractionalOperator, a: float, b: float, c: float, s: float = 1.0) -> np.ndarray:
    """a lambda^s + b lambda + c per mode. For s > 0 the k = 0 entry uses 0^s = 0."""
    lam = op.eigenvalues
    lam_s = np.zeros_like(lam)
    nz = lam > 0
    lam_s[nz] = lam[nz] ** s
    if s == 0:
        lam_s[~nz] = 1.0
    return a * lam_s + b * lam + c


def solve_diagonal(op: FractionalOperator, a: float, b: float, c: float, rhs: ScalarField,
                   s: float = 1.0, *, power: float = 1.0, mean_zero: bool = False) -> ScalarField:
    """Solve (a A^s + b A + c I)^power g = rhs exactly in the cosine basis.

    With ``mean_zero`` the k = 0 mode is dropped (and s may be negative, e.g.
    the H^{-s} metric term of the phi subproblem).
    """
    op.check(rhs)
    symbol = diagonal_symbol(op, a, b, c, s)
    retained = np.ones(op.grid.shape, dtype=bool)
    if mean_zero:
        retained.flat[0] = False
    if not np.all(np.isfinite(symbol[retained])) or np.any(symbol[retained] <= 0):
        bad = float(np.min(symbol[retained]))
        raise DiagonalSolveError(f"diagonal symbol must be positive on retained modes, min = {bad:.3e}")
    out = np.zeros(op.grid.shape)
    out[retained] = rhs.coeffs[retained] / symbol[retained] ** power
    return ScalarField(op.grid, coeffs=out)


# ------------------------------
# Derivatives
# ------------------------------

def derivative(f: ScalarField, orders: Sequence[int]) -> ScalarField:
    """Mixed spectral derivative d^{o_1}/dx_1^{o_1} ... of a cosine series, o_i in {0, 1, 2}.

    Odd orders turn the cosine series into a sine series along that axis, which
    is synthesized with the DST-II inverse.
    """
    grid = f.grid
    if len(orders) != grid.dim or any(o not in (0, 1, 2) for o in orders):
        raise InvalidFieldError(f"derivative orders must be one of 0, 1, 2 per axis, got {orders}")
    raw = np.array(f.coeffs, dtype=float)
    for axis, (o, n, L) in enumerate(zip(orders, grid.counts, grid.lengths)):
        k = np.pi * np.arange(n) / L
        if o:
            raw = raw * _broadcast(-(k ** o), axis, grid.dim)
        if o % 2:
            # sine mode m sits at DST index m - 1; amplitude b_m needs raw value N b_m
            raw = np.moveaxis(raw, axis, 0)
            shifted = np.zeros_like(raw)
            shifted[:-1] = raw[1:] * n
            raw = np.moveaxis(shifted, 0, axis)
            raw = sfft.idst(raw, type=2, axis=axis, workers=_workers())
        else:
            w = np.full(n, float(n))
            w[0] = 2.0 * n
            raw = raw * _broadcast(w, axis, grid.dim)
            raw = sfft.idct(raw, type=2, axis=axis, workers=_workers())
    return ScalarField(grid, values=raw)


def gradient(f: ScalarField) -> Tuple[ScalarField, ...]:
    dim = f.grid.dim
    return tuple(derivative(f, [1 if a == axis else 0 for a in range(dim)]) for axis in range(dim))


def hessian(f: ScalarField) -> dict:
    """Second derivatives keyed by axis pair (i, j), i <= j."""
    dim = f.grid.dim
    out = {}
    for i in range(dim):
        for j in range(i, dim):
            orders = [0] * dim
            orders[i] += 1
            orders[j] += 1
            out[(i, j)] = derivative(f, orders)
    return out


def gradient_norm_squared(f: ScalarField) -> np.ndarray:
    return sum(g.values ** 2 for g in gradient(f))


# ------------------------------
# Sobolev products
# ------------------------------

def bilinear_as(op: FractionalOperator, s: float, u: ScalarField, v: ScalarField) -> float:
    """a_s(u, v) = (A^{s/2} u, A^{s/2} v) evaluated through Parseval."""
    s = _validate_order(s)
    op.check(u)
    op.check(v)
    weights = op.power_symbol(s) * op.parseval_weights
    return float(op.grid.volume * np.sum(weights * u.coeffs * v.coeffs))


def inner_h_minus_s(op: FractionalOperator, s: float, f: ScalarField, g: ScalarField,
                    mean_tol: Optional[float] = None) -> float:
    """(A^{-s/2} f, A^{-s/2} g) for mean-zero f and g."""
    s = _validate_order(s, strictly_positive=True)
    op.check(f)
    op.check(g)
    op.check_mean_zero(f, mean_tol)
    op.check_mean_zero(g, mean_tol)
    weights = _inverse_symbol(op, s) * op.parseval_weights
    return float(op.grid.volume * np.sum(weights * f.coeffs * g.coeffs))


def norm_h_minus_s(op: FractionalOperator, s: float, f: ScalarField,
                   mean_tol: Optional[float] = None) -> float:
    return float(np.sqrt(max(inner_h_minus_s(op, s, f, f, mean_tol), 0.0)))


def norm_hs_squared(op: FractionalOperator, s: float, f: ScalarField) -> float:
    """||f||^2_{H^s_n} := ||f||^2 + a_s(f, f)."""
    return f.l2_norm() ** 2 + bilinear_as(op, s, f, f)


# ------------------------------
# Pointwise nonlinearities
# ------------------------------

def pad_spectral(f: ScalarField, factor: int) -> ScalarField:
    """Zero-pad the cosine coefficients onto a grid ``factor`` times finer."""
    fine = f.grid.refined(factor)
    coeffs = np.zeros(fine.shape)
    coeffs[tuple(slice(0, n) for n in f.grid.counts)] = f.coeffs
    return ScalarField(fine, coeffs=coeffs)


def truncate_spectral(f: ScalarField, grid: GridSpec) -> ScalarField:
    return ScalarField(grid, coeffs=f.coeffs[tuple(slice(0, n) for n in grid.counts)])


def pointwise(f: ScalarField, fn: Callable[[np.ndarray], np.ndarray], dealias: bool = False) -> ScalarField:
    """Evaluate fn(f) at the nodes, optionally on a 2x zero-padded grid."""
    if not dealias:
        return ScalarField(f.grid, values=fn(f.values))
    fine = pad_spectral(f, 2)
    return truncate_spectral(ScalarField(fine.grid, values=fn(fine.values)), f.grid)
