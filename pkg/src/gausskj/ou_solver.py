"""Galerkin discretisation of the Ornstein-Uhlenbeck operator ``L u = Lap u - <x, grad u>``.

The weak form is the Gaussian Dirichlet form
``a(u, w) = int_K <grad u, grad w> dgamma`` against the mass form
``m(u, w) = int_K u w dgamma`` on continuous piecewise-linear functions
vanishing on the Dirichlet boundary.  The drift term never appears
explicitly, so both matrices are symmetric by construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import HalfLine, Mesh, ScalarField, build_mesh, integrate_field
from .special import HalfSpaceTables, halfspace_torsion

logger = logging.getLogger(__name__)

LINEAR_RTOL = 1e-12
EIGEN_RTOL = 1e-10
# inverse iteration hands over to Rayleigh quotient iteration below this residual
RQI_SWITCH = 1e-4
RESIDUAL_SAFETY = 1.0


class NumericalError(RuntimeError):
    """A linear or eigen solve failed to reach its tolerance.

    ``stage`` names the failing computation, ``residual`` is the last
    residual, ``best`` holds the best iterate when one exists.
    """

    def __init__(self, message, stage="", residual=np.nan, best=None):
        super().__init__(message)
        self.stage = stage
        self.residual = residual
        self.best = best


@dataclass(frozen=True, eq=False)
class Operators:
    """Assembled forms on the full node set plus the interior restriction."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    load: np.ndarray
    interior: np.ndarray
    A: sparse.csc_matrix = field(repr=False)
    M: sparse.csc_matrix = field(repr=False)
    b: np.ndarray = field(repr=False)


def assemble(mesh: Mesh) -> Operators:
    """Stiffness, mass and load (``int w dgamma``) for the P1 space on ``mesh``.

    ``A``, ``M`` and ``b`` are the restrictions to interior nodes, i.e. with
    Dirichlet rows and columns eliminated.
    """
    el = mesh.elements
    k = el.shape[1]
    rho = mesh.element_measures  # int_e dgamma
    local_a = rho[:, None, None] * np.einsum("eid,ejd->eij", mesh.grads, mesh.grads)
    local_m = np.einsum("eq,qi,qj->eij", mesh.qweights, mesh.shape, mesh.shape)
    local_b = mesh.qweights @ mesh.shape
    rows = np.repeat(el, k, axis=1).ravel()
    cols = np.tile(el, (1, k)).ravel()
    n = mesh.n_nodes
    stiff = sparse.coo_matrix((local_a.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mass = sparse.coo_matrix((local_m.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    load = np.bincount(el.ravel(), weights=local_b.ravel(), minlength=n)
    if len(mesh.point_masses):
        mass = mass + sparse.coo_matrix((mesh.point_masses, (mesh.point_mass_nodes, mesh.point_mass_nodes)),
                                        shape=(n, n)).tocsr()
        np.add.at(load, mesh.point_mass_nodes, mesh.point_masses)
    # exact symmetry: average out summation-order round-off
    stiff = ((stiff + stiff.T) * 0.5).tocsr()
    mass = ((mass + mass.T) * 0.5).tocsr()
    interior = mesh.interior_nodes
    A = stiff[interior][:, interior].tocsc()
    M = mass[interior][:, interior].tocsc()
    return Operators(stiff, mass, load, interior, A, M, load[interior])


@lru_cache(maxsize=8)
def _cached_operators(mesh: Mesh) -> Operators:
    return assemble(mesh)


def _operators(mesh: Mesh, ops: Operators | None) -> Operators:
    return ops if ops is not None else _cached_operators(mesh)


def _extend(mesh: Mesh, ops: Operators, interior_values: np.ndarray) -> ScalarField:
    vals = np.zeros(mesh.n_nodes)
    vals[ops.interior] = interior_values
    return ScalarField(mesh, vals)


def _backward_error(A, x, b) -> float:
    """Normwise backward error ``|Ax - b| / (|A| |x| + |b|)`` in the inf-norm."""
    r = np.abs(A @ x - b).max()
    scale = spla.norm(A, np.inf) * np.abs(x).max() + np.abs(b).max()
    return float(r / scale)


def solve_torsion(mesh: Mesh, ops: Operators | None = None) -> ScalarField:
    """Galerkin torsion function: ``A v = b`` with ``v = 0`` on the boundary.

    Raises :class:`NumericalError` when the normwise backward error exceeds 1e-12
    or the discrete maximum principle is violated beyond that tolerance.
    """
    ops = _operators(mesh, ops)
    if len(ops.interior) == 0:
        raise NumericalError("mesh has no interior nodes", stage="torsion")
    lu = spla.splu(ops.A)
    v = lu.solve(ops.b)
    v += lu.solve(ops.b - ops.A @ v)  # one step of iterative refinement
    res = _backward_error(ops.A, v, ops.b)
    if not np.isfinite(res) or res > LINEAR_RTOL:
        raise NumericalError(f"torsion solve residual {res:.3e} above {LINEAR_RTOL}", stage="torsion",
                             residual=res, best=v)
    if v.min() < -LINEAR_RTOL * np.abs(v).max():
        logger.warning("discrete torsion function has negative nodal values (min %.3e); "
                       "obtuse fraction %.3f", v.min(), mesh.obtuse_fraction())
    return _extend(mesh, ops, v)


@dataclass(frozen=True)
class TorsionDiagnostics:
    """The four torsion characterisations evaluated on the discrete solution."""

    mass: float          # int v dgamma
    energy: float        # int |grad v|^2 dgamma
    ratio: float         # (int v)^2 / int |grad v|^2
    functional: float    # 2 int v - int |grad v|^2
    relative_gap: float  # max pairwise relative disagreement
    field: ScalarField = field(repr=False, compare=False)


def torsional_rigidity(mesh: Mesh, ops: Operators | None = None) -> tuple[float, TorsionDiagnostics]:
    """Discrete Gaussian torsional rigidity ``T = int v dgamma`` and its cross-checks."""
    ops = _operators(mesh, ops)
    v = solve_torsion(mesh, ops)
    mass = integrate_field(mesh, v)
    vi = v.values[ops.interior]
    energy = float(vi @ (ops.A @ vi))
    ratio = mass * mass / energy
    functional = 2.0 * mass - energy
    vals = np.array([mass, energy, ratio, functional])
    gap = float((vals.max() - vals.min()) / abs(mass))
    return mass, TorsionDiagnostics(mass, energy, ratio, functional, gap, v)


@dataclass(frozen=True, eq=False)
class SpectralResult:
    """First Dirichlet eigenpair; eigenfunction normalised so ``int u^2 dgamma = 1``, ``u >= 0``."""

    eigenvalue: float
    eigenfunction: ScalarField
    residual: float
    iterations: int
    positive: bool          # no interior value below -1e-12 max|u|
    tolerance: float = EIGEN_RTOL


def _rq(A, M, x):
    return float(x @ (A @ x)) / float(x @ (M @ x))


def _residual(A, M, x, lam):
    mx = M @ x
    return float(np.linalg.norm(A @ x - lam * mx) / np.linalg.norm(mx))


def _residual_floor(A, M, x, lam) -> float:
    """Rounding level of :func:`_residual` itself, ``eps |A||x| / |Mx|`` (a worst-case bound).

    On fine 1D meshes ``|A||x|`` exceeds ``|Mx|`` by ``~4/h^2``, so at
    ``h = 1e-3`` the computed residual of the exact eigenvector is already of
    order 1e-10.
    """
    absx = np.abs(x)
    scale = np.linalg.norm(abs(A) @ absx + abs(lam) * (abs(M) @ absx)) / np.linalg.norm(M @ x)
    return float(RESIDUAL_SAFETY * np.finfo(float).eps * scale)


def solve_frequency(mesh: Mesh, ops: Operators | None = None, max_iter: int = 500) -> SpectralResult:
    """Smallest generalised eigenpair of ``(A, M)``.

    Zero-shift inverse iteration from the interior indicator until the
    eigen-residual drops below 1e-4, then Rayleigh quotient iteration down to
    1e-10, or down to the rounding level of the residual when that is higher
    (fine 1D meshes); the tolerance used is returned with the result.
    """
    ops = _operators(mesh, ops)
    A, M = ops.A, ops.M
    if A.shape[0] == 0:
        raise NumericalError("mesh has no interior nodes", stage="frequency")
    lu0 = spla.splu(A)
    x = np.ones(A.shape[0])
    x /= np.sqrt(x @ (M @ x))
    lam = _rq(A, M, x)
    res = _residual(A, M, x, lam)
    it = 0
    best = (res, lam, x)
    tol = EIGEN_RTOL
    while it < max_iter and res > tol:
        it += 1
        if res > RQI_SWITCH:
            y = lu0.solve(M @ x)
        else:
            try:
                y = spla.splu((A - lam * M).tocsc()).solve(M @ x)
            except RuntimeError:  # exactly singular shift: converged
                break
            if not np.all(np.isfinite(y)):
                break
        x = y / np.sqrt(y @ (M @ y))
        lam = _rq(A, M, x)
        res = _residual(A, M, x, lam)
        if res < best[0]:
            best = (res, lam, x)
        if res < RQI_SWITCH:
            tol = max(EIGEN_RTOL, _residual_floor(A, M, x, lam))
    res, lam, x = best
    if res > tol:
        raise NumericalError(f"eigen-iteration stalled at residual {res:.3e}", stage="frequency",
                             residual=res, best=(lam, _extend(mesh, ops, x)))
    if x.sum() < 0:
        x = -x
    # deep in a half-line tail the values underflow to +-1e-70 or so; that is rounding, not a sign change
    floor = 1e-12 * np.abs(x).max()
    positive = bool(np.all(x > -floor))
    if not positive:
        logger.warning("first eigenfunction has %d negative interior values (min %.3e)",
                       int(np.sum(x <= -floor)), x.min())
    elif np.any(x <= 0):
        logger.debug("%d interior values are zero to rounding (min %.3e)", int(np.sum(x <= 0)), x.min())
    return SpectralResult(lam, _extend(mesh, ops, x), res, it, positive, tol)


def rayleigh_quotient(mesh: Mesh, field: ScalarField, ops: Operators | None = None) -> float:
    """``int |grad u|^2 dgamma / int u^2 dgamma`` for a field vanishing on the boundary."""
    if field.mesh is not mesh:
        raise ValueError("field is defined on a different mesh")
    ops = _operators(mesh, ops)
    u = field.values
    den = float(u @ (ops.mass @ u))
    if not den > 0.0:
        raise ValueError("Rayleigh quotient of the zero function is undefined")
    return float(u @ (ops.stiffness @ u)) / den


def dirichlet_energy(mesh: Mesh, field: ScalarField, ops: Operators | None = None) -> float:
    ops = _operators(mesh, ops)
    return float(field.values @ (ops.stiffness @ field.values))


def l2_mass(mesh: Mesh, field: ScalarField, ops: Operators | None = None) -> float:
    ops = _operators(mesh, ops)
    return float(field.values @ (ops.mass @ field.values))


# --------------------------------------------------------------------------
# half-space problems (exactly one-dimensional)
# --------------------------------------------------------------------------

HALFSPACE_H = 4e-3


def halfspace_frequency(s: float, h: float = HALFSPACE_H, richardson: bool = True) -> float:
    """``Lambda_gamma(H_s)`` from the 1D solver on the truncated half-line.

    With ``richardson`` the values at ``h`` and ``h/2`` are combined as
    ``(4 lam_{h/2} - lam_h) / 3`` (the P1 eigenvalue error is ``O(h^2)``).
    """
    lam = solve_frequency(build_mesh(HalfLine(float(s)), h)).eigenvalue
    if not richardson:
        return lam
    lam2 = solve_frequency(build_mesh(HalfLine(float(s)), 0.5 * h)).eigenvalue
    return (4.0 * lam2 - lam) / 3.0


def build_halfspace_tables(s_grid, h: float = HALFSPACE_H) -> HalfSpaceTables:
    """Tabulate ``T(s)`` (quadrature) and ``Lambda_gamma(H_s)`` (1D solver + Richardson)."""
    s_grid = np.asarray(s_grid, dtype=float)
    torsion = halfspace_torsion(s_grid)
    freq = np.array([halfspace_frequency(s, h) for s in s_grid])
    return HalfSpaceTables(s_grid, torsion, freq)
