"""Level-set functionals of a nonnegative piecewise-linear field.

For ``u >= 0`` vanishing on the boundary and ``K_t = {u > t}`` this module
samples

* ``gamma(t) = gamma(K_t)`` by exact slicing of every element,
* ``ell(t) = int_{u = t} |grad u| dgamma_surface`` as the exact derivative
  ``-E'(t)`` of the truncated energy ``E(t) = int_{K_t} |grad u|^2 dgamma``,
* ``D(t) = int_t^{u_max} gamma^2 / ell`` (modified torsional rigidity of
  ``K_t`` with respect to ``u - t``),

and the optimal profile ``phi0(t) = int_0^t gamma / ell``.

The cone of the P1 interpolant over the star of the maximal node is not
sampled; the integrals over that last panel are closed by a power-law fit
whose uncertainty is carried along (see :func:`endpoint_integral`).
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import isotonic_regression
from scipy.sparse.csgraph import connected_components

from .geometry import (TRI6_BARY, TRI6_W, Mesh, ScalarField, ValidationError, _density, _interval_measure,
                       integrate_field)
from .ou_solver import dirichlet_energy

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = 256
_FIT_POINTS = 5
_CAP_RINGS = 4
_ALPHA_FLOOR = -0.95  # keeps the last-panel integral finite
_GL3_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL3_W = np.array([5.0, 8.0, 5.0]) / 9.0


class LevelSetWarning(UserWarning):
    """Plateaus or disconnected superlevel sets in a reference field."""


# --------------------------------------------------------------------------
# last-panel closure
# --------------------------------------------------------------------------

def power_law_fit(x, y):
    """Least-squares fit ``y ~ c x^alpha`` in log-log coordinates.

    Returns ``(c, alpha)``; ``alpha`` is clamped from below so that the
    integral of the fit over ``[0, x]`` stays finite.  Nonpositive samples make
    the fit meaningless and give ``(nan, nan)``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x <= 0) or np.any(y <= 0) or len(x) < 2:
        return math.nan, math.nan
    alpha, logc = np.polyfit(np.log(x), np.log(y), 1)
    alpha = max(alpha, _ALPHA_FLOOR)
    logc = float(np.mean(np.log(y) - alpha * np.log(x)))
    return math.exp(logc), float(alpha)


def endpoint_integral(x, y) -> tuple[float, float]:
    """Integral over ``[0, x[-1]]`` of a function sampled at distances ``x`` from a singular end.

    ``x`` is increasing and positive (distance to the endpoint); ``y`` are
    samples.  The fit uses all given samples; the error estimate compares it
    with the fit on the three closest ones.  When no fit is possible the
    panel falls back to the linear value ``y[0] x[0] / 2`` and the error
    estimate equals that value.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    x0 = x[0]

    def integral(xx, yy):
        c, a = power_law_fit(xx, yy)
        if not np.isfinite(c):
            return math.nan
        return c * x0 ** (a + 1.0) / (a + 1.0)

    full = integral(x, y)
    if not np.isfinite(full):
        lin = 0.5 * max(y[0], 0.0) * x0
        return lin, lin
    near = integral(x[:3], y[:3])
    err = abs(full - near) if np.isfinite(near) else abs(full)
    return float(full), float(err)


def panel_integrals(t, y) -> np.ndarray:
    """Per-panel integrals of positive samples by the logarithmic-mean rule.

    On ``[t_j, t_{j+1}]`` the value is ``dt (y_j - y_{j+1}) / log(y_j / y_{j+1})``,
    exact for exponentials and second order otherwise; it keeps the
    Gaussian-like decay of level-set integrands from being overestimated on
    coarse panels.  Panels with a nonpositive end use the trapezoid rule.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    a, b = y[:-1], y[1:]
    dt = np.abs(np.diff(t))
    out = 0.5 * dt * (a + b)
    pos = (a > 0) & (b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(pos, b / np.where(pos, a, 1.0), 1.0)
        lr = np.log(r)
        far = pos & (np.abs(lr) > 1e-6)
        out = np.where(far, dt * (b - a) / np.where(far, lr, 1.0), out)
        near = pos & ~far  # series of the logarithmic mean around r = 1
        out = np.where(near, dt * a * (1.0 + 0.5 * lr + lr * lr / 6.0), out)
    return out


_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


def panel_weights(x, y, log_x: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes for averaging a weight against the density ``y`` on each panel.

    Returns ``(lam, w)`` of shape (panels, 8): ``lam`` is the relative position
    of each node inside its panel (uniform in ``log x`` when ``log_x``) and
    each row of ``w`` sums to one.  The density between samples is the
    exponential interpolant behind :func:`panel_integrals`; in ``log x`` the
    Jacobian turns it into a power law.  Panels with a nonpositive end use a
    linear density.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    lam = np.broadcast_to(0.5 * (1.0 + _GL8_X), (len(x) - 1, 8))
    a, b = y[:-1, None], y[1:, None]
    pos = (a > 0) & (b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log(np.where(pos, b, 1.0) / np.where(pos, a, 1.0))
        if log_x:
            lr = lr + np.log(x[1:, None] / x[:-1, None])
        dens = np.where(pos, np.exp(lam * lr), np.maximum((1.0 - lam) * a + lam * b, 0.0))
    w = _GL8_W * dens
    tot = w.sum(axis=1, keepdims=True)
    w = np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), 0.5 * _GL8_W)
    return lam, w


def weighted_panel_integrals(x, y, a, weight, log_x: bool = False) -> np.ndarray:
    """``int y weight(a) dx`` per panel: the log-mean integral of ``y`` times the mean of ``weight``.

    ``a`` is sampled with ``y`` and interpolated linearly (in ``log x`` when
    ``log_x``); ``weight`` is applied exactly at the Gauss nodes.  A constant
    weight reproduces :func:`panel_integrals` to rounding.
    """
    a = np.asarray(a, float)
    lam, w = panel_weights(x, y, log_x)
    at = a[:-1, None] * (1.0 - lam) + a[1:, None] * lam
    return panel_integrals(x, y) * np.sum(w * weight(at), axis=1)


def _cumulative_from_top(t, y, tail):
    """``int_{t_i}^{t_end} y`` on the sampled grid plus ``tail`` for the last panel."""
    panels = panel_integrals(t, y)
    out = np.empty_like(t)
    out[-1] = tail
    out[:-1] = tail + np.cumsum(panels[::-1])[::-1]
    return out


# --------------------------------------------------------------------------
# exact slicing of P1 fields
# --------------------------------------------------------------------------

def _lumped_weights(mesh: Mesh) -> np.ndarray:
    w = np.bincount(mesh.elements.ravel(), weights=(mesh.qweights @ mesh.shape).ravel(),
                    minlength=mesh.n_nodes)
    if len(mesh.point_masses):
        np.add.at(w, mesh.point_mass_nodes, mesh.point_masses)
    return w


def _tri_measure(a, b, c):
    """Gaussian measure of triangles (a, b, c), arrays (E, 2), by the 6-point rule."""
    pts = (TRI6_BARY[None, :, 0, None] * a[:, None, :] + TRI6_BARY[None, :, 1, None] * b[:, None, :]
           + TRI6_BARY[None, :, 2, None] * c[:, None, :])
    area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    return area * (_density(pts) @ TRI6_W)


def _segment_flux(p, q):
    """``int_{[p, q]} density ds`` by 3-point Gauss-Legendre; p, q arrays (E, 2)."""
    mid = 0.5 * (p + q)
    half = 0.5 * (q - p)
    pts = mid[:, None, :] + _GL3_X[None, :, None] * half[:, None, :]
    return np.linalg.norm(q - p, axis=1) * 0.5 * (_density(pts) @ _GL3_W)


class _Slicer:
    """Precomputed per-element data for repeated threshold queries."""

    def __init__(self, mesh: Mesh, values: np.ndarray):
        self.mesh = mesh
        self.u = values
        self.ue = values[mesh.elements]
        self.xe = mesh.nodes[mesh.elements]
        self.gnorm = np.linalg.norm(np.einsum("ek,ekd->ed", self.ue, mesh.grads), axis=1)
        self.full = mesh.element_measures
        self.efull = self.gnorm ** 2 * self.full
        self.umin = self.ue.min(axis=1)
        self.umax = self.ue.max(axis=1)

    def slice(self, t: float) -> tuple[float, float, float, float]:
        """``gamma(K_t)``, exact ``ell(t)``, ``E(t)`` and the flux-weighted element span at ``t``."""
        m = self.mesh
        above_all = self.umin > t
        gam = float(self.full[above_all].sum())
        energy = float(self.efull[above_all].sum())
        cut = np.flatnonzero((self.umax > t) & ~above_all)
        ell = span = 0.0
        if len(cut):
            if m.dimension == 1:
                g, l = self._cut_1d(cut, t)
            else:
                g, l = self._cut_2d(cut, t)
            gam += float(g.sum())
            energy += float(np.sum(self.gnorm[cut] ** 2 * g))
            ell = float(l.sum())
            if ell > 0:
                span = float(np.sum(l * (self.umax[cut] - self.umin[cut])) / ell)
        if len(m.point_masses):
            gam += float(m.point_masses[self.u[m.point_mass_nodes] > t].sum())
        return gam, ell, energy, span

    def energy_above(self, t: float) -> float:
        return self.slice(t)[2]

    def cap_integral(self, lo: float, hi: float, order: int = 8) -> float:
        """``int_lo^hi gamma^2 / ell dt`` of the discrete field itself.

        Composite Gauss-Legendre with breaks at the nodal values in
        ``(lo, hi)``, where the P1 integrand has kinks.
        """
        if not hi > lo:
            return 0.0
        brk = np.unique(np.concatenate([[lo, hi], self.u[(self.u > lo) & (self.u < hi)]]))
        gx, gw = np.polynomial.legendre.leggauss(order)
        total = 0.0
        for a, b in zip(brk[:-1], brk[1:]):
            for x, w in zip(0.5 * (a + b) + 0.5 * (b - a) * gx, 0.5 * (b - a) * gw):
                g, l, _, _ = self.slice(float(x))
                if l > 0:
                    total += w * g * g / l
        return total

    def _cut_1d(self, cut, t):
        u = self.ue[cut]
        x = self.xe[cut, :, 0]
        lam = (t - u[:, 0]) / (u[:, 1] - u[:, 0])
        xt = x[:, 0] + lam * (x[:, 1] - x[:, 0])
        up = u[:, 1] > u[:, 0]
        lo = np.where(up, xt, x[:, 0])
        hi = np.where(up, x[:, 1], xt)
        g = _interval_measure(lo, hi)
        l = self.gnorm[cut] * _density(xt[:, None])
        return g, l

    def _cut_2d(self, cut, t):
        u = self.ue[cut]
        x = self.xe[cut]
        above = u > t
        n_above = above.sum(axis=1)
        # the odd vertex: the single one above (n=1) or the single one below (n=2)
        odd = np.where(n_above == 1, np.argmax(above, axis=1), np.argmin(above, axis=1))
        r = np.arange(len(cut))
        i1 = (odd + 1) % 3
        i2 = (odd + 2) % 3
        uo, u1, u2 = u[r, odd], u[r, i1], u[r, i2]
        xo, x1, x2 = x[r, odd], x[r, i1], x[r, i2]
        l1 = ((uo - t) / (uo - u1))[:, None]
        l2 = ((uo - t) / (uo - u2))[:, None]
        p1 = xo + l1 * (x1 - xo)
        p2 = xo + l2 * (x2 - xo)
        small = _tri_measure(xo, p1, p2)
        g = np.where(n_above == 1, small, self.full[cut] - small)
        l = self.gnorm[cut] * _segment_flux(p1, p2)
        return g, l


# --------------------------------------------------------------------------
# profile
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelProfile:
    """Sampled level-set curves of a reference field.

    ``thresholds`` runs from ``offset`` up to ``t_cap`` and then ``u_max``;
    the last row holds limit values (``gamma = ell = D = 0``).  The panel
    ``[t_cap, u_max]`` is closed by power-law fits, except for ``D`` whose
    cap value ``cap_D`` is integrated on the discrete field directly;
    ``endpoint_error`` collects the uncertainty of the closure.
    """

    thresholds: np.ndarray
    gamma: np.ndarray
    ell: np.ndarray
    D: np.ndarray
    u_max: float
    offset: float = 0.0
    t_cap: float = math.nan
    energy: float = math.nan          # int_K |grad u|^2 dgamma on the mesh
    mass: float = math.nan            # int_K (u - offset)_+ dgamma on the mesh
    domain_measure: float = math.nan  # gamma(K_offset) from the mesh
    endpoint_error: float = 0.0
    cap_D: float = math.nan
    projection_distance: float = 0.0
    warnings: tuple = ()
    mesh: Mesh | None = field(default=None, repr=False)
    field_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def sampled(self) -> slice:
        """Rows that carry actual samples (everything except the ``u_max`` row)."""
        return slice(0, len(self.thresholds) - 1)

    def tail_distances(self) -> np.ndarray:
        return self.u_max - self.thresholds[self.sampled][::-1][:_FIT_POINTS]

    def integrate(self, values: np.ndarray, weight=None) -> tuple[float, float]:
        """``int_{offset}^{u_max} y dt`` for ``y`` sampled on the sampled rows.

        With ``weight`` (a vectorised function of ``t - offset``) the integrand
        is ``y(t) weight(t - offset)``, the weight being evaluated exactly
        inside each panel; layer-cake integrals of ``F(u)`` use ``F'``.
        """
        y = np.asarray(values, float)[self.sampled]
        t = self.thresholds[self.sampled]
        if weight is None:
            body = float(np.sum(panel_integrals(t, y)))
            ye = y
        else:
            body = float(np.sum(weighted_panel_integrals(t, y, t - self.offset, weight)))
            ye = y * weight(t - self.offset)
        tail, err = endpoint_integral(self.tail_distances(), ye[::-1][:_FIT_POINTS])
        return body + tail, err

    def cumulative(self, values: np.ndarray, tail: float | None = None) -> tuple[np.ndarray, float]:
        """``int_{t_i}^{u_max} y dt`` for every row, with the endpoint error.

        A known ``tail`` (the integral over ``[t_cap, u_max]``) replaces the
        power-law closure; the error is then its distance to the fit.
        """
        y = np.asarray(values, float)[self.sampled]
        t = self.thresholds[self.sampled]
        fit, err = endpoint_integral(self.tail_distances(), y[::-1][:_FIT_POINTS])
        if tail is None:
            tail = fit
        else:
            err = abs(fit - tail)
        out = np.zeros(len(self.thresholds))
        out[:-1] = _cumulative_from_top(t, y, tail)
        return out, err

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "gamma", "ell", "D"])
        for row in zip(self.thresholds, self.gamma, self.ell, self.D):
            w.writerow([format(float(v), ".17g") for v in row])
        return buf.getvalue()


def _threshold_grid(mesh: Mesh, u: np.ndarray, m: int, offset: float):
    """Union of equal-measure quantile levels and uniform levels on ``(offset, t_cap]``."""
    imax = int(np.argmax(u))
    u_max = float(u[imax])
    # rings of elements around the maximal node form the unresolved cap
    ring = np.array([imax])
    for _ in range(_CAP_RINGS):
        ring = np.unique(mesh.elements[np.any(np.isin(mesh.elements, ring), axis=1)])
    t_cap = float(u[ring].min())
    if not t_cap > offset:
        t_cap = offset + 0.5 * (u_max - offset)
    n_q = m // 2
    n_u = m - n_q
    order = np.argsort(-u, kind="stable")
    w = _lumped_weights(mesh)[order]
    uo = u[order]
    keep = uo > offset
    cw = np.cumsum(w[keep])
    q_levels = np.interp(cw[-1] * np.arange(1, n_q) / n_q, cw, uo[keep]) if cw.size else np.zeros(0)
    u_levels = offset + (t_cap - offset) * np.arange(1, n_u + 1) / n_u
    t = np.concatenate([[offset], q_levels[(q_levels > offset) & (q_levels < t_cap)], u_levels])
    t = np.unique(t)
    # merge near-duplicates so that no panel is degenerate
    gap = 1e-9 * (u_max - offset)
    t = t[np.concatenate([[True], np.diff(t) > gap])]
    if t[-1] < t_cap:
        t = np.append(t, t_cap)
    return t, u_max, t_cap


def _averaged_flux(slicer, t, raw, e_mid, span, lo, hi):
    """``-(E(b) - E(a)) / (b - a)`` over a window one element-crossing wide around ``t``.

    The exact derivative of ``E`` for a P1 field oscillates with the position
    of the level set inside the elements (first-order error in the slope);
    averaging over one crossing cancels the linear part.  A window that would
    leave ``[lo, hi]`` is replaced by two adjacent inner windows; their ratio
    of mean flux to mean measure is extrapolated linearly back to ``t`` and
    multiplied by the exact ``gamma(t)``.  Near a nondegenerate maximum both
    curves vanish at the same rate, so the ratio is smooth where ``ell`` is not.
    """
    if not span > 0 or not hi - lo > 2.0 * span:
        return raw

    def mean(a, b):
        ea = e_mid if a == t else slicer.energy_above(a)
        eb = e_mid if b == t else slicer.energy_above(b)
        return (ea - eb) / (b - a)

    half = 0.5 * span
    if t - half >= lo and t + half <= hi:
        return mean(t - half, t + half)
    if t - half < lo:
        c1, c2 = lo + half, lo + 3.0 * half
    else:
        c1, c2 = hi - half, hi - 3.0 * half
    r1 = mean(c1 - half, c1 + half) / _mean_measure(slicer, c1 - half, c1 + half)
    r2 = mean(c2 - half, c2 + half) / _mean_measure(slicer, c2 - half, c2 + half)
    return slicer.slice(t)[0] * (r1 + (t - c1) * (r2 - r1) / (c2 - c1))


def _mean_measure(slicer, a, b):
    """Mean of ``gamma(K_t)`` over ``[a, b]`` (3-point Gauss-Legendre)."""
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return float(sum(w * slicer.slice(mid + x * half)[0] for x, w in zip(_GL3_X, _GL3_W)) / 2.0)


def _check_field(mesh: Mesh, u: np.ndarray, tol: float):
    if u.shape != (mesh.n_nodes,):
        raise ValidationError("field size does not match the mesh")
    scale = float(np.abs(u).max()) if u.size else 0.0
    if not scale > 0:
        raise ValidationError("reference field vanishes identically")
    if u.min() < -tol * scale:
        raise ValidationError(f"reference field has negative nodal values (min {u.min():.3e})")
    if np.abs(u[mesh.boundary_nodes]).max(initial=0.0) > tol * scale:
        raise ValidationError("reference field does not vanish on the boundary")


def _level_warnings(slicer: _Slicer, thresholds: np.ndarray, u_max: float) -> list[str]:
    msgs = []
    mesh = slicer.mesh
    flat = (slicer.gnorm <= 1e-9 * u_max / mesh.h) & (slicer.umin > 1e-9 * u_max)
    # one or two flat elements at the very top are a discrete maximum (symmetric meshes), not a plateau
    top = flat & (slicer.umin >= thresholds[-2])
    if top.sum() <= 2:
        flat &= ~top
    if flat.any():
        msgs.append(f"plateau: {int(flat.sum())} elements with vanishing gradient inside the support")
    el = mesh.elements
    k = el.shape[1]
    i = np.repeat(el, k, axis=1).ravel()
    j = np.tile(el, (1, k)).ravel()
    graph = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(mesh.n_nodes,) * 2).tocsr()
    probe = thresholds[1:-1][:: max(1, (len(thresholds) - 2) // 16)]
    for t in probe:
        nodes = np.flatnonzero(slicer.u > t)
        if len(nodes) < 2:
            continue
        n_comp, _ = connected_components(graph[nodes][:, nodes], directed=False)
        if n_comp > 1:
            msgs.append(f"disconnected superlevel set at t={t:.6g} ({n_comp} components)")
            break
    return msgs


def level_profile(mesh: Mesh, u: ScalarField, m: int = DEFAULT_LEVELS, offset: float = 0.0,
                  tol: float = 1e-10) -> LevelProfile:
    """Sample ``gamma(K_t)``, ``ell(t)`` and ``D(t)`` for ``t`` in ``[offset, u_max]``.

    Parameters
    ----------
    mesh, u
        Mesh and a nonnegative P1 field vanishing on the boundary.
    m
        Approximate number of levels; half are placed at equal-measure
        quantiles of ``u`` and half uniformly in ``t``.
    offset
        Profile of ``K_offset`` with respect to ``u - offset``; thresholds
        are still reported in the original ``u`` scale.

    Raises
    ------
    ValidationError
        For negative values below ``-tol * max|u|`` or nonzero boundary values.
    """
    if u.mesh is not mesh:
        raise ValidationError("field is defined on a different mesh")
    if m < 16:
        raise ValidationError("at least 16 levels are required")
    vals = np.asarray(u.values, float)
    _check_field(mesh, vals, tol)
    vals = np.maximum(vals, 0.0)
    if not offset < vals.max():
        raise ValidationError("offset must lie below the maximum of the field")
    slicer = _Slicer(mesh, vals)
    t, u_max, t_cap = _threshold_grid(mesh, vals, m, offset)
    gam = np.empty(len(t))
    ell = np.empty(len(t))
    for i, ti in enumerate(t):
        gam[i], raw, e_mid, span = slicer.slice(ti)
        ell[i] = _averaged_flux(slicer, ti, raw, e_mid, span, offset, t_cap)
    # exact slicing is monotone up to round-off; project anyway and report
    gproj = isotonic_regression(gam, increasing=False).x
    dist = float(np.abs(gproj - gam).max())
    gam = gproj
    msgs = _level_warnings(slicer, np.append(t, u_max), u_max)
    if np.any(ell <= 0):
        msgs.append(f"ell vanishes at {int(np.sum(ell <= 0))} sampled levels")
    for msg in msgs:
        warnings.warn(msg, LevelSetWarning, stacklevel=2)
        logger.warning(msg)
    energy_e = slicer.gnorm ** 2 * slicer.full
    shifted = np.maximum(vals - offset, 0.0)
    prof = LevelProfile(
        thresholds=np.append(t, u_max), gamma=np.append(gam, 0.0), ell=np.append(ell, 0.0),
        D=np.zeros(len(t) + 1), u_max=u_max, offset=float(offset), t_cap=t_cap,
        energy=float(energy_e.sum()),
        mass=_integrate_nodal(mesh, shifted),
        domain_measure=float(gam[0]), cap_D=slicer.cap_integral(t_cap, u_max), projection_distance=dist, warnings=tuple(msgs),
        mesh=mesh, field_values=vals)
    return distribution_D(prof)


def _integrate_nodal(mesh: Mesh, values: np.ndarray) -> float:
    return float(np.sum(mesh.qweights * (values[mesh.elements] @ mesh.shape.T))
                 + np.sum(mesh.point_masses * values[mesh.point_mass_nodes]))


def _ratio(num, den):
    out = np.zeros_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def distribution_D(profile: LevelProfile) -> LevelProfile:
    """Fill ``D(t_i) = int_{t_i}^{u_max} gamma^2 / ell`` by cumulative quadrature from the top.

    ``D`` is projected onto decreasing sequences; the larger of this and the
    earlier ``gamma`` projection distance is kept in the profile.
    """
    integrand = _ratio(profile.gamma ** 2, profile.ell)
    cap = None if math.isnan(profile.cap_D) else profile.cap_D
    D, err = profile.cumulative(integrand, cap)
    Dp = isotonic_regression(D, increasing=False).x
    dist = max(profile.projection_distance, float(np.abs(Dp - D).max()))
    return replace(profile, D=Dp, endpoint_error=err, projection_distance=dist)


def flux_measure_gap(profile: LevelProfile) -> tuple[float, float]:
    """Distance between ``ell`` and ``gamma``, which coincide for a torsion function.

    Returns the largest relative gap over the sampled levels below ``t_cap``
    and the integrated gap ``int |ell - gamma| dt / int gamma dt``.  Levels
    inside the cap around the discrete maximum are left out of the pointwise
    number: there the P1 field is a cone and no flux estimate resolves the
    continuum value.
    """
    sl = profile.sampled
    t = profile.thresholds[sl]
    g = profile.gamma[sl]
    l = profile.ell[sl]
    below = t < profile.t_cap
    point = float(np.max(np.abs(l[below] / g[below] - 1.0)))
    dt = np.diff(t)
    d = np.abs(l - g)
    l1 = float(np.sum(dt * (d[1:] + d[:-1])) / np.sum(dt * (g[1:] + g[:-1])))
    return point, l1


def modified_torsion(profile: LevelProfile) -> float:
    """``T_mod = int gamma(K_t)^2 / ell(t) dt`` over ``[offset, u_max]``."""
    return float(profile.D[0])


def optimal_phi(profile: LevelProfile) -> tuple[np.ndarray, np.ndarray]:
    """Table ``(t, phi0(t))`` of ``phi0(t) = int_offset^t gamma / ell``; nondecreasing, ``phi0(offset) = 0``.

    The value at ``u_max`` includes the last-panel closure.
    """
    integrand = _ratio(profile.gamma, profile.ell)
    tail_from, _ = profile.cumulative(integrand)
    phi = tail_from[0] - tail_from
    return profile.thresholds.copy(), np.maximum.accumulate(np.maximum(phi, 0.0))


def compose(mesh: Mesh, u: ScalarField, table: tuple[np.ndarray, np.ndarray], offset: float = 0.0) -> ScalarField:
    """Nodal interpolant of ``phi(u)`` for a tabulated ``phi`` (linear interpolation; 0 below ``offset``)."""
    t, phi = table
    vals = np.where(u.values > offset, np.interp(u.values, t, phi), 0.0)
    return ScalarField(mesh, vals)


def torsion_functional(mesh: Mesh, v: ScalarField, ops=None) -> float:
    """``2 int v dgamma - int |grad v|^2 dgamma`` evaluated directly on the mesh."""
    return 2.0 * integrate_field(mesh, v) - dirichlet_energy(mesh, v, ops)
