"""Diffuse-interface measurements: contour, curvature and sharp-limit diagnostics.

Conventions: Omega+ = {u > 0}; contour normals point from Omega+ into Omega-;
curvature is the divergence of that normal, so a disc of Omega+ with radius R
has kappa = +1/R.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree

from app.schemas import DiagnosticsRow, SurfaceTensionMode
from app.services.errors import (
    DegenerateGradientError,
    EmptyMaskError,
    InvalidFieldError,
    NoInterfaceError,
)
from app.services.potential import DoubleWell, SurfaceTension, chemical_potential, modica_mortola_energy
from app.services.spectral_core import (
    FractionalOperator,
    ScalarField,
    apply_power,
    gradient,
    hessian,
)

logger = logging.getLogger(__name__)

PROJECTION_ITERS = 4
SIGMA_MM = SurfaceTension(mode=SurfaceTensionMode.modica_mortola).value
C_W = SurfaceTension(mode=SurfaceTensionMode.paper_cw).value


@dataclass(frozen=True)
class Contour:
    points: np.ndarray                  # (M, 2)
    normals: np.ndarray                 # (M, 2), Omega+ -> Omega-
    weights: np.ndarray                 # (M,) arc-length quadrature weights
    polylines: Tuple[np.ndarray, ...]   # index arrays into points, in traversal order
    closed: Tuple[bool, ...]
    kappa: Optional[np.ndarray] = None

    @property
    def length(self) -> float:
        return float(np.sum(self.weights))

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def weighted_mean(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values) / np.sum(self.weights))

    def with_curvature(self, kappa: np.ndarray) -> "Contour":
        return replace(self, kappa=np.asarray(kappa, dtype=float))


# ------------------------------
# Interpolation helpers
# ------------------------------

def _spline(grid, values: np.ndarray) -> RectBivariateSpline:
    x, y = grid.axis_nodes(0), grid.axis_nodes(1)
    return RectBivariateSpline(x, y, values, bbox=[0.0, grid.lengths[0], 0.0, grid.lengths[1]], kx=3, ky=3)


def sample(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Bicubic interpolation of a nodal field at arbitrary points of the box."""
    if field.grid.dim != 2:
        raise InvalidFieldError("point sampling is only available in 2D")
    points = np.atleast_2d(points)
    return _spline(field.grid, field.values).ev(points[:, 0], points[:, 1])


# ------------------------------
# Contour extraction
# ------------------------------

def _edge_point(key, u, xs, ys) -> np.ndarray:
    kind, i, j = key
    if kind == "x":
        u0, u1 = u[i, j], u[i + 1, j]
        t = u0 / (u0 - u1)
        return np.array([xs[i] + t * (xs[i + 1] - xs[i]), ys[j]])
    u0, u1 = u[i, j], u[i, j + 1]
    t = u0 / (u0 - u1)
    return np.array([xs[i], ys[j] + t * (ys[j + 1] - ys[j])])


def _cell_segments(u: np.ndarray, pos: np.ndarray) -> List[Tuple[tuple, tuple]]:
    """Marching-squares segments, each a pair of edge keys."""
    case = (pos[:-1, :-1].astype(int) + 2 * pos[1:, :-1] + 4 * pos[1:, 1:] + 8 * pos[:-1, 1:])
    segments = []
    for i, j in np.argwhere((case > 0) & (case < 15)):
        corners = (pos[i, j], pos[i + 1, j], pos[i + 1, j + 1], pos[i, j + 1])
        edges = (("x", i, j), ("y", i + 1, j), ("x", i, j + 1), ("y", i, j))
        crossed = [edges[e] for e in range(4) if corners[e] != corners[(e + 1) % 4]]
        if len(crossed) == 2:
            segments.append((crossed[0], crossed[1]))
            continue
        # saddle: resolved by the cell-centre average
        centre = 0.25 * (u[i, j] + u[i + 1, j] + u[i + 1, j + 1] + u[i, j + 1])
        e0, e1, e2, e3 = edges
        if (centre > 0) == corners[0]:
            segments.extend([(e0, e1), (e2, e3)])
        else:
            segments.extend([(e0, e3), (e1, e2)])
    return segments


def _chain(segments) -> List[Tuple[List[tuple], bool]]:
    adjacency: Dict[tuple, List[tuple]] = {}
    for a, b in segments:
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)

    visited = set()
    chains = []

    def walk(start):
        path = [start]
        visited.add(start)
        prev, current = None, start
        while True:
            nxt = [n for n in adjacency[current] if n != prev and n not in visited]
            if not nxt:
                closes = len(path) > 2 and start in adjacency[current] and prev is not None
                return path, closes
            prev, current = current, nxt[0]
            visited.add(current)
            path.append(current)

    for key, nbrs in adjacency.items():
        if len(nbrs) == 1 and key not in visited:
            path, _ = walk(key)
            chains.append((path, False))
    for key in adjacency:
        if key not in visited:
            path, closes = walk(key)
            chains.append((path, closes))
    return chains


def _wall_point(p: np.ndarray, lengths) -> np.ndarray:
    dist = [p[0], lengths[0] - p[0], p[1], lengths[1] - p[1]]
    side = int(np.argmin(dist))
    q = p.copy()
    q[side // 2] = 0.0 if side % 2 == 0 else lengths[side // 2]
    return q


def _project(points: np.ndarray, u_s, ux_s, uy_s, lengths) -> np.ndarray:
    """A few Newton iterations moving each point onto the zero level of the interpolant."""
    p = points.copy()
    for _ in range(PROJECTION_ITERS):
        val = u_s.ev(p[:, 0], p[:, 1])
        gx, gy = ux_s.ev(p[:, 0], p[:, 1]), uy_s.ev(p[:, 0], p[:, 1])
        g2 = gx * gx + gy * gy
        ok = g2 > 0
        p[ok, 0] -= val[ok] * gx[ok] / g2[ok]
        p[ok, 1] -= val[ok] * gy[ok] / g2[ok]
        p[:, 0] = np.clip(p[:, 0], 0.0, lengths[0])
        p[:, 1] = np.clip(p[:, 1], 0.0, lengths[1])
    return p


def _arc_weights(pts: np.ndarray, closed: bool) -> np.ndarray:
    if len(pts) < 2:
        return np.zeros(len(pts))
    if closed:
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        return 0.5 * (seg + np.roll(seg, 1))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    w = np.zeros(len(pts))
    w[:-1] += 0.5 * seg
    w[1:] += 0.5 * seg
    return w


def extract_interface(u: ScalarField) -> Contour:
    """Zero level set of u as oriented polylines (marching squares plus projection)."""
    grid = u.grid
    if grid.dim != 2:
        raise InvalidFieldError(f"contouring needs a 2D field, got dim = {grid.dim}")
    values = u.values
    pos = values > 0
    if pos.all() or not pos.any():
        raise NoInterfaceError()

    xs, ys = grid.axis_nodes(0), grid.axis_nodes(1)
    chains = _chain(_cell_segments(values, pos))
    gx, gy = gradient(u)
    u_s, ux_s, uy_s = _spline(grid, values), _spline(grid, gx.values), _spline(grid, gy.values)

    all_points, all_normals, all_weights, polylines, closed_flags = [], [], [], [], []
    offset = 0
    for keys, closed in chains:
        pts = np.array([_edge_point(k, values, xs, ys) for k in keys])
        if not closed:
            pts = np.vstack([_wall_point(pts[0], grid.lengths), pts, _wall_point(pts[-1], grid.lengths)])
        pts = _project(pts, u_s, ux_s, uy_s, grid.lengths)

        grad = np.column_stack([ux_s.ev(pts[:, 0], pts[:, 1]), uy_s.ev(pts[:, 0], pts[:, 1])])
        norm = np.linalg.norm(grad, axis=1)
        normals = -grad / np.where(norm > 0, norm, 1.0)[:, None]

        # traverse Omega+ counterclockwise: outward normal on the right of the tangent
        tangent = np.gradient(pts, axis=0)
        if np.sum(tangent[:, 1] * normals[:, 0] - tangent[:, 0] * normals[:, 1]) < 0:
            pts, normals = pts[::-1], normals[::-1]

        weights = _arc_weights(pts, closed)
        polylines.append(np.arange(offset, offset + len(pts)))
        closed_flags.append(closed)
        offset += len(pts)
        all_points.append(pts)
        all_normals.append(normals)
        all_weights.append(weights)

    contour = Contour(
        points=np.vstack(all_points),
        normals=np.vstack(all_normals),
        weights=np.concatenate(all_weights),
        polylines=tuple(polylines),
        closed=tuple(closed_flags),
    )
    logger.debug("contour: %d polylines, %d points, length %.6f", len(polylines), contour.size, contour.length)
    return contour


# ------------------------------
# Curvature and Gibbs-Thomson
# ------------------------------

def curvature(u: ScalarField, contour: Contour, rel_tol: float = 1e-8) -> np.ndarray:
    """kappa = -(u_xx u_y^2 - 2 u_x u_y u_xy + u_yy u_x^2) / |grad u|^3 at the contour points."""
    gx, gy = gradient(u)
    h = hessian(u)
    px, py = contour.points[:, 0], contour.points[:, 1]
    ux = _spline(u.grid, gx.values).ev(px, py)
    uy = _spline(u.grid, gy.values).ev(px, py)
    uxx = _spline(u.grid, h[(0, 0)].values).ev(px, py)
    uxy = _spline(u.grid, h[(0, 1)].values).ev(px, py)
    uyy = _spline(u.grid, h[(1, 1)].values).ev(px, py)
    g = np.sqrt(ux * ux + uy * uy)
    floor = rel_tol * max(float(np.max(np.sqrt(gx.values ** 2 + gy.values ** 2))), 1e-300)
    if np.any(g <= floor):
        raise DegenerateGradientError(
            f"|grad u| = {float(np.min(g)):.3e} on the contour, curvature undefined"
        )
    return -(uxx * uy * uy - 2.0 * ux * uy * uxy + uyy * ux * ux) / g ** 3


def band_mask(grid, contour: Contour, band: float) -> np.ndarray:
    """Nodes whose distance to the contour points is at most ``band``."""
    tree = cKDTree(contour.points)
    nodes = np.column_stack([m.ravel() for m in grid.mesh()])
    dist, _ = tree.query(nodes)
    return (dist <= band).reshape(grid.shape)


def signed_distance(grid, contour: Contour) -> np.ndarray:
    """Distance of every node to the contour points, positive on the Omega+ side."""
    tree = cKDTree(contour.points)
    nodes = np.column_stack([m.ravel() for m in grid.mesh()])
    dist, nearest = tree.query(nodes)
    side = np.einsum("ij,ij->i", nodes - contour.points[nearest], contour.normals[nearest])
    return np.where(side > 0, -dist, dist).reshape(grid.shape)


@dataclass(frozen=True)
class GibbsThomsonProbe:
    v_mean: float
    kappa_mean: float
    coef: float
    points: np.ndarray
    kappa: np.ndarray
    v: np.ndarray

    @property
    def relative_to_modica_mortola_half(self) -> float:
        return abs(self.coef - 0.5 * SIGMA_MM) / (0.5 * SIGMA_MM)

    @property
    def relative_to_paper_cw(self) -> float:
        return abs(self.coef - C_W) / C_W


def gibbs_thomson_probe(op: FractionalOperator, u: ScalarField, eps: float, contour: Contour,
                        band: Optional[float] = None, v: Optional[ScalarField] = None) -> GibbsThomsonProbe:
    """Measure v against kappa on the interface.

    v_mean is the coarea average of v over the layer of width ``band`` (default
    4 eps) weighted by |grad u|; kappa_mean is the arc-length mean over the
    contour. coef = v_mean / kappa_mean, the constant in v = coef * kappa.
    """
    if v is None:
        v = chemical_potential(op, u, eps)
    kappa = contour.kappa if contour.kappa is not None else curvature(u, contour)
    band = 4.0 * eps if band is None else band
    mask = band_mask(u.grid, contour, band)
    gx, gy = gradient(u)
    weight = np.sqrt(gx.values ** 2 + gy.values ** 2) * mask
    v_mean = float(np.sum(weight * v.values) / np.sum(weight))
    kappa_mean = contour.weighted_mean(kappa)
    coef = v_mean / kappa_mean if kappa_mean != 0 else float("nan")
    return GibbsThomsonProbe(
        v_mean=v_mean, kappa_mean=kappa_mean, coef=coef,
        points=contour.points, kappa=kappa, v=sample(v, contour.points),
    )


def gibbs_thomson_correlation(v_means: Sequence[float], kappa_means: Sequence[float]) -> float:
    """Pearson correlation of v against the inward curvature k = -kappa."""
    v = np.asarray(v_means, dtype=float)
    k = -np.asarray(kappa_means, dtype=float)
    if v.size < 2 or np.std(v) == 0 or np.std(k) == 0:
        return float("nan")
    return float(np.corrcoef(v, k)[0, 1])


# ------------------------------
# Energy diagnostics
# ------------------------------

def equipartition_defect(u: ScalarField, eps: float) -> Tuple[float, float]:
    """(integral of |eps/2 |grad u|^2 - W(u)/eps|, same divided by M^eps)."""
    gx = gradient(u)
    grad2 = sum(g.values ** 2 for g in gx)
    integrand = np.abs(0.5 * eps * grad2 - DoubleWell.W(u.values) / eps)
    defect = float(np.sum(integrand)) * u.grid.cell_volume
    m = modica_mortola_energy(u, eps)
    return defect, defect / m if m > 0 else float("inf")


@dataclass(frozen=True)
class EnergyDensity:
    density: float
    relative_to_modica_mortola: float
    relative_to_twice_paper_cw: float


def energy_measure_density(u: ScalarField, eps: float, contour: Optional[Contour] = None) -> EnergyDensity:
    """Total M^eps divided by the interface length."""
    if contour is None:
        contour = extract_interface(u)
    density = modica_mortola_energy(u, eps) / contour.length
    return EnergyDensity(
        density=density,
        relative_to_modica_mortola=abs(density - SIGMA_MM) / SIGMA_MM,
        relative_to_twice_paper_cw=abs(density - 2.0 * C_W) / (2.0 * C_W),
    )


def bulk_residual(op: FractionalOperator, s: float, v: ScalarField, phi: ScalarField, sigma: ScalarField,
                  u: ScalarField, band: float, contour: Optional[Contour] = None) -> float:
    """||A^s v + v - phi - sigma||_{L2} away from the interface, over ||phi + sigma||_{L2(Omega)}.

    Nodes closer than ``band`` to the contour are masked out; a field without
    interface keeps every node. With phi + sigma = 0 the absolute residual is
    returned.
    """
    residual = apply_power(op, s, v) + v - phi - sigma
    if band > 0 and np.any(u.values > 0) and np.any(u.values <= 0):
        contour = contour if contour is not None else extract_interface(u)
        keep = ~band_mask(u.grid, contour, band)
    else:
        keep = np.ones(u.grid.shape, dtype=bool)
    if not np.any(keep):
        raise EmptyMaskError(f"no node lies farther than {band:g} from the interface")
    dv = u.grid.cell_volume
    numerator = float(np.sqrt(np.sum(residual.values[keep] ** 2) * dv))
    denominator = (phi + sigma).l2_norm()
    return numerator / denominator if denominator > 0 else numerator


def radius_from_area(u: ScalarField) -> float:
    """sqrt(|{u > 0}| / pi), each node weighted by a linear ramp of u/|grad u| over one cell."""
    if u.grid.dim != 2:
        raise InvalidFieldError("radius_from_area needs a 2D field")
    values = u.values
    g = np.sqrt(sum(c.values ** 2 for c in gradient(u)))
    h = max(u.grid.spacing)
    with np.errstate(divide="ignore", invalid="ignore"):
        distance = np.where(g > 1e-12, values / g, np.sign(values) * np.inf)
    fraction = np.clip(0.5 + distance / h, 0.0, 1.0)
    area = float(np.sum(fraction)) * u.grid.cell_volume
    return float(np.sqrt(area / np.pi))


# ------------------------------
# Hypotheses
# ------------------------------

@dataclass(frozen=True)
class HypothesisReport:
    regime: str
    theta: float
    theta_nearest_integer: int
    multiplicity_one: bool


def hypothesis_report(s: float, density: float, single_layer_density: float = SIGMA_MM,
                      tolerance: float = 0.1) -> HypothesisReport:
    """Regime of s and the measured multiplicity density / single-layer density.

    For 1 <= s <= 3/2 the limit relies on unit multiplicity, which this can only refute.
    """
    if s < 1:
        raise InvalidFieldError(f"s must be >= 1, got {s}")
    theta = density / single_layer_density
    nearest = int(round(theta))
    return HypothesisReport(
        regime="unconditional" if s > 1.5 else "multiplicity_one_assumed",
        theta=theta,
        theta_nearest_integer=nearest,
        multiplicity_one=abs(theta - 1.0) <= tolerance,
    )


# ------------------------------
# One-shot diagnostics row
# ------------------------------

def diagnostics_row(tag: str, t: float, op: FractionalOperator, s: float, eps: float,
                    phi: ScalarField, sigma: ScalarField, band_factor: float = 4.0) -> DiagnosticsRow:
    """Every scalar diagnostic of one 2D state; entries that need an interface are None without one."""
    u = phi - sigma
    defect, normalized = equipartition_defect(u, eps)
    v = chemical_potential(op, u, eps)
    row = DiagnosticsRow(config_hash=tag, t=t, equipartition_defect=normalized)
    try:
        contour = extract_interface(u)
    except NoInterfaceError:
        row.bulk_residual = bulk_residual(op, s, v, phi, sigma, u, 0.0)
        return row
    contour = contour.with_curvature(curvature(u, contour))
    probe = gibbs_thomson_probe(op, u, eps, contour, band=band_factor * eps, v=v)
    row.R = radius_from_area(u)
    row.contour_length = contour.length
    row.kappa_mean = probe.kappa_mean
    row.v_mean = probe.v_mean
    row.coef = probe.coef
    row.energy_density = energy_measure_density(u, eps, contour).density
    hypotheses = hypothesis_report(s, row.energy_density)
    row.theta = hypotheses.theta
    row.regime = hypotheses.regime
    try:
        row.bulk_residual = bulk_residual(op, s, v, phi, sigma, u, band_factor * eps, contour)
    except EmptyMaskError:
        row.bulk_residual = None
    return row
