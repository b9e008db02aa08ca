"""Half-space rearrangement ``u_dagger(x) = f(T(x_1))`` of a level profile and the verification pipeline.

Given the profile of ``u`` on ``K`` with ``D(t) = int_t^{u_max} gamma^2 / ell``,
the rearranged function lives on the half-space ``{x_1 >= s_dagger}`` with
``T(s_dagger) = D(0)`` and is determined by

    f'(tau) = -ell(t) / (gamma(K_t) gamma(H_{T^{-1}(tau)})),   t = D^{-1}(tau),   f(D(0)) = 0.

On the image grid ``tau_i = D(t_i)`` we use ``f'(tau) d tau = (gamma(K_t) /
gamma(H_{T^{-1}(D(t))})) dt``: the factor ``(D^{-1})'`` is carried exactly by
the table, only the bounded ratio is integrated (trapezoid rule in ``t``).
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import __version__
from .coarea import (_FIT_POINTS, LevelProfile, endpoint_integral, level_profile, panel_integrals,
                     weighted_panel_integrals)
from .geometry import (ConvexPolygon, Disk, HalfLine, Interval, ValidationError, build_mesh,
                       gaussian_measure)
from .ou_solver import NumericalError, halfspace_frequency, solve_frequency, torsional_rigidity
from .special import (DomainError, HalfSpaceTables, S_MAX, gaussian_density, gaussian_quantile,
                      gaussian_tail, halfspace_torsion, halfspace_torsion_deriv,
                      halfspace_torsion_inverse)

logger = logging.getLogger(__name__)

DEFAULT_H = 0.02
DEFAULT_M = 256
TOL_EQUALITY = 1e-2
TOL_INEQUALITY = 1e-6
DINV_TOLERANCE = 5e-3


class PipelineError(NumericalError):
    """A pipeline stage failed; ``stage`` names it."""


# --------------------------------------------------------------------------
# convex test functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Power:
    """``F(t) = t**p`` for ``p >= 1`` (convex and nondecreasing on ``t >= 0``)."""

    p: float

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("power must be >= 1 for convexity")

    @property
    def name(self) -> str:
        return f"t^{self.p:g}"

    def __call__(self, t):
        return np.power(np.maximum(t, 0.0), self.p)

    def derivative(self, t):
        return self.p * np.power(np.maximum(t, 0.0), self.p - 1.0)


@dataclass(frozen=True)
class Tabulated:
    """Convex nondecreasing ``F`` given by samples; linear interpolation, one-sided slopes."""

    t: tuple
    values: tuple
    name: str = "table"

    def __post_init__(self):
        t = np.asarray(self.t, float)
        v = np.asarray(self.values, float)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("table needs increasing abscissae and matching values")
        slopes = np.diff(v) / np.diff(t)
        if np.any(slopes < -1e-12) or np.any(np.diff(slopes) < -1e-12 * np.abs(slopes[1:]).max(initial=1)):
            raise ValueError("tabulated F must be convex and nondecreasing")

    def __call__(self, x):
        t = np.asarray(self.t, float)
        v = np.asarray(self.values, float)
        slopes = np.diff(v) / np.diff(t)
        x = np.asarray(x, float)
        out = np.interp(x, t, v)
        out = np.where(x > t[-1], v[-1] + slopes[-1] * (x - t[-1]), out)
        return out

    def derivative(self, x):
        t = np.asarray(self.t, float)
        slopes = np.diff(np.asarray(self.values, float)) / np.diff(t)
        i = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(slopes) - 1)
        return slopes[i]


SQUARE = Power(2.0)
QUARTIC = Power(4.0)


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------

@lru_cache(maxsize=1)
def default_tables() -> HalfSpaceTables:
    """Tables on ``s in [-4, 6]`` (step 1/8); frequency from the 1D solver at ``h = 1e-2``."""
    s = np.linspace(-4.0, 6.0, 81)
    return HalfSpaceTables(s, halfspace_torsion(s), np.array([halfspace_frequency(v, 1e-2) for v in s]))


def _inverse_torsion(tau, tables: HalfSpaceTables | None):
    tau = np.atleast_1d(np.asarray(tau, float))
    guess = np.full(tau.shape, np.nan)
    if tables is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            guess = np.asarray(tables.inverse_torsion(tau), float)
    return halfspace_torsion_inverse(tau, guess)


# --------------------------------------------------------------------------
# rearranged profile
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RearrangedProfile:
    """The 1D profile ``f`` of ``u_dagger`` sampled on ``tau_i = D(t_i)``.

    ``tau_grid`` decreases from ``t0`` to the last resolved value
    ``tau_grid[-1] > 0``; ``[0, tau_grid[-1]]`` is the unresolved end panel.
    ``dinv`` holds ``D^{-1}(tau_i) = t_i - offset``.
    """

    t0: float
    s_dagger: float
    tau_grid: np.ndarray
    f_values: np.ndarray
    dinv: np.ndarray
    s_values: np.ndarray
    gamma_K: np.ndarray
    gamma_H: np.ndarray
    ell: np.ndarray
    provenance: LevelProfile = field(repr=False)

    @property
    def f_prime(self) -> np.ndarray:
        return -self.ell / (self.gamma_K * self.gamma_H)

    def integrate_tau(self, values, weight=None) -> tuple[float, float]:
        """``int_0^{t0} y dtau`` for ``y`` sampled on ``tau_grid``: log-mean panels plus end-panel fit.

        ``weight`` multiplies the integrand by ``weight(f(tau))``, evaluated
        inside each panel with ``f`` interpolated linearly in ``log tau``.
        """
        y = np.asarray(values, float)
        tau = self.tau_grid
        if weight is None:
            body = float(np.sum(panel_integrals(tau, y)))
        else:
            body = float(np.sum(weighted_panel_integrals(tau, y, self.f_values, weight, log_x=True)))
            y = y * weight(self.f_values)
        k = min(_FIT_POINTS, len(tau))
        tail, err = endpoint_integral(tau[::-1][:k], y[::-1][:k])
        return body + tail, err

    def rows(self):
        return zip(self.tau_grid, self.f_values, self.dinv)

    def to_csv(self) -> str:
        lines = ["tau,f,Dinv"]
        lines += [",".join(format(float(v), ".17g") for v in r) for r in self.rows()]
        return "\n".join(lines) + "\n"


def build_rearrangement(profile: LevelProfile, tables: HalfSpaceTables | None = None) -> RearrangedProfile:
    """Construct ``f`` with ``f(t0) = 0`` from a level profile.

    Raises
    ------
    DomainError
        ``t0 = D(0)`` outside the invertible range of ``T``.
    ValidationError
        ``D`` not strictly decreasing on the sampled rows (plateaus).
    """
    sl = profile.sampled
    t = profile.thresholds[sl]
    D = profile.D[sl]
    gK = profile.gamma[sl]
    ell = profile.ell[sl]
    if np.any(np.diff(D) >= 0) or np.any(gK <= 0) or np.any(ell <= 0):
        raise ValidationError("distribution function D is not strictly decreasing on the sampled levels")
    s = _inverse_torsion(D, tables)
    gH = gaussian_tail(s)
    ratio = gK / gH
    f = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (ratio[1:] + ratio[:-1]))])
    return RearrangedProfile(t0=float(D[0]), s_dagger=float(s[0]), tau_grid=D.copy(), f_values=f,
                             dinv=t - profile.offset, s_values=s, gamma_K=gK.copy(), gamma_H=gH,
                             ell=ell.copy(), provenance=profile)


def dinv_by_integration(rp: RearrangedProfile) -> np.ndarray:
    """``D^{-1}(tau_i)`` by integrating ``(D^{-1})' = -ell / gamma^2`` down from ``t0``.

    The second route to ``rp.dinv`` (which inverts the ``D`` table).  The
    integral is taken in ``log tau`` because ``tau`` spans dozens of decades
    on half-lines.
    """
    y = rp.ell / rp.gamma_K ** 2 * rp.tau_grid
    return np.concatenate([[0.0], np.cumsum(panel_integrals(np.log(rp.tau_grid), y))])


def dinv_consistency(rp: RearrangedProfile) -> float:
    """Largest gap between the two ``D^{-1}`` routes, relative to ``max D^{-1}``."""
    return float(np.max(np.abs(dinv_by_integration(rp) - rp.dinv)) / rp.dinv[-1])


def _tail_slope_fit(rp: RearrangedProfile):
    k = min(_FIT_POINTS, len(rp.tau_grid))
    tau = rp.tau_grid[-k:]
    g = -rp.f_prime[-k:]
    alpha, logc = np.polyfit(np.log(tau), np.log(g), 1)
    return math.exp(logc), float(alpha)


def evaluate_dagger(rp: RearrangedProfile, x1):
    """``u_dagger(x1) = f(T(x1))``; monotone interpolation of ``f`` in ``log tau``.

    Beyond the resolved grid (``tau < tau_grid[-1]``) ``|f'|`` is continued
    by its power-law fit.  Raises :class:`DomainError` for ``x1 < s_dagger``.
    """
    x = np.atleast_1d(np.asarray(x1, float))
    if np.any(x < rp.s_dagger - 1e-12 * max(1.0, abs(rp.s_dagger))):
        raise DomainError(f"x1 must be >= s_dagger = {rp.s_dagger!r}")
    x = np.clip(x, rp.s_dagger, S_MAX)
    tau = np.minimum(halfspace_torsion(x), rp.t0)
    z = -np.log(rp.tau_grid)
    interp = PchipInterpolator(z, rp.f_values, extrapolate=False)
    zt = -np.log(tau)
    out = np.asarray(interp(np.minimum(zt, z[-1])), float)
    deep = zt > z[-1]
    if np.any(deep):
        c, a = _tail_slope_fit(rp)
        tc = rp.tau_grid[-1]
        td = tau[deep]
        if abs(a + 1.0) < 1e-8:
            ext = c * np.log(tc / td)
        else:
            ext = c * (tc ** (a + 1.0) - td ** (a + 1.0)) / (a + 1.0)
        out[deep] = rp.f_values[-1] + ext
    out[x <= rp.s_dagger] = 0.0
    return out if np.ndim(x1) else float(out[0])


# --------------------------------------------------------------------------
# integral identities
# --------------------------------------------------------------------------

def _gap(left, right):
    return abs(left - right) / max(abs(left), abs(right), 1e-300)


@dataclass(frozen=True)
class Comparison:
    """One left/right comparison with its verdict."""

    name: str
    left: float
    right: float
    kind: str            # "equality" or "le" (left <= right)
    tolerance: float
    error_estimate: float = 0.0

    @property
    def gap(self) -> float:
        return _gap(self.left, self.right)

    @property
    def difference(self) -> float:
        return self.right - self.left

    @property
    def margin(self) -> float:
        """Slack left after the tolerance; the comparison passes iff it is nonnegative."""
        if self.kind == "equality":
            return self.tolerance - self.gap
        return self.right + self.tolerance - self.left

    @property
    def passed(self) -> bool:
        return bool(self.margin >= 0.0)

    def to_dict(self):
        return {"name": self.name, "left": _f(self.left), "right": _f(self.right), "kind": self.kind,
                "difference": _f(self.difference), "gap": _f(self.gap), "margin": _f(self.margin),
                "tolerance": _f(self.tolerance), "error_estimate": _f(self.error_estimate), "pass": self.passed}


def energy_pair(profile: LevelProfile, rp: RearrangedProfile):
    """``int |grad u|^2`` as ``int ell dt`` and ``int f'^2 gamma_H^2 dtau``, with end-panel errors."""
    left, el = profile.integrate(profile.ell)
    right, er = rp.integrate_tau((rp.ell / rp.gamma_K) ** 2)
    return left, right, el + er


def mass_pair(profile: LevelProfile, rp: RearrangedProfile):
    """``int u`` as ``int gamma(K_t) dt`` and ``-int gamma_H f' dtau``."""
    left, el = profile.integrate(profile.gamma)
    right, er = rp.integrate_tau(rp.ell / rp.gamma_K)
    return left, right, el + er


def convex_pair(profile: LevelProfile, rp: RearrangedProfile, F):
    """``int (F(u) - F(0))`` on ``K`` and ``int (F(u_dagger) - F(0))`` on ``K_dagger`` via layer cake."""
    left, el = profile.integrate(profile.gamma, F.derivative)
    right, er = rp.integrate_tau(rp.ell / rp.gamma_K, F.derivative)
    return left, right, el + er


def verify_theorem_4_2(profile: LevelProfile, rp: RearrangedProfile, F=(SQUARE, QUARTIC),
                       tol_equality: float = TOL_EQUALITY, slack: float = TOL_EQUALITY) -> dict:
    """Energy and mass equalities and the convex-functional inequality for each ``F``.

    The equalities pass at relative gap ``<= tol_equality``; the inequality
    passes when ``left <= right + slack * |right|``.
    """
    if not isinstance(F, (tuple, list)):
        F = (F,)
    out = {}
    left, right, err = energy_pair(profile, rp)
    out["energy"] = Comparison("energy", left, right, "equality", tol_equality, err)
    left, right, err = mass_pair(profile, rp)
    out["mass"] = Comparison("mass", left, right, "equality", tol_equality, err)
    for Fi in F:
        left, right, err = convex_pair(profile, rp, Fi)
        out[f"convex[{Fi.name}]"] = Comparison(f"convex[{Fi.name}]", left, right, "le",
                                               slack * abs(right), err)
    return out


def rayleigh_dagger(profile: LevelProfile, rp: RearrangedProfile) -> tuple[float, float]:
    """Rayleigh quotient of ``u_dagger`` on ``K_dagger`` and its end-panel error."""
    num, en = rp.integrate_tau((rp.ell / rp.gamma_K) ** 2)
    den, ed = rp.integrate_tau(rp.ell / rp.gamma_K, SQUARE.derivative)
    q = num / den
    return q, q * (en / num + ed / den)


def profile_rayleigh(profile: LevelProfile) -> float:
    """Rayleigh quotient of ``u`` itself recomputed from the profile (co-area and layer cake)."""
    num, _ = profile.integrate(profile.ell)
    den, _ = profile.integrate(profile.gamma, SQUARE.derivative)
    return num / den


def dagger_rayleigh_direct(rp: RearrangedProfile, panels: int = 800) -> float:
    """Rayleigh quotient of ``u_dagger`` by Gauss-Legendre quadrature in ``x_1``.

    Uses :func:`evaluate_dagger` for values and centred differences of it
    for the slope, on ``[s_dagger, x_end]``; ``x_end`` lies 6 units past the
    last resolved abscissa so the power-law continuation near the maximum is
    included.  An independent route to :func:`rayleigh_dagger`.
    """
    x_end = min(float(rp.s_values[-1]) + 6.0, S_MAX - 1.0)
    gx, gw = np.polynomial.legendre.leggauss(8)
    edges = rp.s_dagger + (x_end - rp.s_dagger) * (np.linspace(0.0, 1.0, panels + 1) ** 1.5)
    a, b = edges[:-1, None], edges[1:, None]
    x = (0.5 * (a + b) + 0.5 * (b - a) * gx).ravel()
    w = (0.5 * (b - a) * gw).ravel() * gaussian_density(x)
    d = 1e-6 * (x_end - rp.s_dagger)
    up = evaluate_dagger(rp, np.minimum(x + d, x_end))
    lo = evaluate_dagger(rp, np.maximum(x - d, rp.s_dagger))
    du = (up - lo) / (np.minimum(x + d, x_end) - np.maximum(x - d, rp.s_dagger))
    u = evaluate_dagger(rp, x)
    return float(np.sum(w * du * du) / np.sum(w * u * u))


def trial_fields(mesh, n: int, seed: int = 0) -> list:
    """``n`` random admissible fields ``v^p exp(<a, clip(x)>)`` built on the torsion function ``v``.

    Positive inside, zero on the boundary; ``p`` in ``[1, 2]`` and ``|a_i| <= 1``
    are drawn from ``numpy.random.default_rng(seed)``.  Coordinates are
    clipped to ``[-3, 3]`` so the factor stays bounded on half-lines, where
    ``exp(a x)`` would push almost all of the level range into the
    negligible tail.
    """
    from .geometry import ScalarField

    rng = np.random.default_rng(seed)
    _, diag = torsional_rigidity(mesh)
    v = np.maximum(diag.field.values, 0.0)
    out = []
    for _ in range(n):
        p = rng.uniform(1.0, 2.0)
        a = rng.uniform(-1.0, 1.0, mesh.dimension)
        out.append(ScalarField(mesh, v ** p * np.exp(np.clip(mesh.nodes, -3.0, 3.0) @ a)))
    return out


def rayleigh_comparison(mesh, u, m: int = DEFAULT_M, tables: HalfSpaceTables | None = None,
                        tolerance: float = TOL_INEQUALITY) -> dict:
    """Rayleigh quotient of an admissible ``u`` on ``K`` against that of its rearrangement."""
    from .ou_solver import rayleigh_quotient

    R_K = rayleigh_quotient(mesh, u)
    prof = level_profile(mesh, u, m)
    rp = build_rearrangement(prof, default_tables() if tables is None else tables)
    R_dag, err = rayleigh_dagger(prof, rp)
    return {"rayleigh_K": R_K, "rayleigh_dagger": R_dag, "error_estimate": err,
            "pass": bool(R_dag <= R_K + tolerance + err)}


# --------------------------------------------------------------------------
# the pipeline
# --------------------------------------------------------------------------

def _f(x):
    """JSON-safe float (NaN and infinities become None)."""
    x = float(x)
    return x if math.isfinite(x) else None


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (NumericalError, DomainError, ValidationError, np.linalg.LinAlgError, RuntimeError) as exc:
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(f"{name}: {exc}", stage=name) from exc


def _interp_D(profile: LevelProfile, t):
    return np.interp(t, profile.thresholds, profile.D, right=0.0)


@dataclass(frozen=True, eq=False)
class KJReport:
    """Result of :func:`kj_pipeline`; ``data`` is the JSON payload."""

    data: dict
    profile: LevelProfile | None = field(default=None, repr=False)
    rearranged: RearrangedProfile | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.data["all_pass"])

    def to_json(self, **kw) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2, allow_nan=False, **kw)


def _frequency_slope(s: float, delta: float = 1e-2) -> float:
    return (halfspace_frequency(s + delta) - halfspace_frequency(s - delta)) / (2.0 * delta)


def kj_pipeline(domain, h: float = DEFAULT_H, m: int = DEFAULT_M, tol_equality: float = TOL_EQUALITY,
                tol_inequality: float = TOL_INEQUALITY, tables: HalfSpaceTables | None = None,
                n_trials: int = 0, seed: int = 0) -> KJReport:
    """Run the comparison ``Lambda(K) >= Rayleigh(u_dagger) >= Lambda(K_dagger) >= Lambda(H)``.

    ``u`` is the first Dirichlet eigenfunction on the mesh of ``domain`` at
    size ``h``; the profile uses ``m`` levels.  Discretisation errors are
    estimated from a second run at ``2h`` and a second profile with ``m/2``
    levels and enter the one-sided tolerances of every inequality.  With
    ``n_trials > 0`` the Rayleigh comparison is repeated for that many random
    admissible fields drawn with ``seed``.

    Raises
    ------
    PipelineError
        With ``stage`` set to the failing step.
    """
    if not h > 0 or m < 16:
        raise ValueError("need h > 0 and m >= 16")
    tables = default_tables() if tables is None else tables
    mesh = _stage("mesh", build_mesh, domain, h)
    mesh2 = _stage("mesh", build_mesh, domain, 2.0 * h)
    gamma_exact = gaussian_measure(domain)

    T_h, tdiag = _stage("torsion", torsional_rigidity, mesh)
    T_2h, _ = _stage("torsion", torsional_rigidity, mesh2)
    T_err = abs(T_h - T_2h) / 3.0
    T_rich = T_h + (T_h - T_2h) / 3.0

    eig = _stage("frequency", solve_frequency, mesh)
    eig2 = _stage("frequency", solve_frequency, mesh2)
    lam_K = eig.eigenvalue

    prof = _stage("profile", level_profile, mesh, eig.eigenfunction, m)
    prof_half = _stage("profile", level_profile, mesh, eig.eigenfunction, max(16, m // 2))
    prof_2h = _stage("profile", level_profile, mesh2, eig2.eigenfunction, m)
    t0 = prof.D[0]
    t0_err = abs(t0 - prof_half.D[0]) + abs(t0 - prof_2h.D[0]) / 3.0 + prof.endpoint_error

    rp = _stage("rearrangement", build_rearrangement, prof, tables)
    rp_half = _stage("rearrangement", build_rearrangement, prof_half, tables)
    s_dag = rp.s_dagger
    R_dag, R_end = rayleigh_dagger(prof, rp)
    R_half, _ = rayleigh_dagger(prof_half, rp_half)
    R_prof = profile_rayleigh(prof)
    R_err = abs(R_dag - R_half) + R_end + abs(R_prof - lam_K)
    R_direct = _stage("rearrangement", dagger_rayleigh_direct, rp)

    s_H = _stage("halfspace", halfspace_torsion_inverse, T_rich)
    lam_dag = _stage("halfspace", halfspace_frequency, s_dag)
    lam_H = _stage("halfspace", halfspace_frequency, s_H)
    slope = abs(_stage("halfspace", _frequency_slope, 0.5 * (s_dag + s_H)))
    ds_dag = t0_err / abs(float(halfspace_torsion_deriv(s_dag)))
    ds_H = T_err / abs(float(halfspace_torsion_deriv(s_H)))
    s_star = float(gaussian_quantile(1.0 - gamma_exact)) if 0 < gamma_exact < 1 else -math.inf
    T_star = float(halfspace_torsion(s_star))
    lam_fk = _stage("halfspace", halfspace_frequency, s_star)

    # pointwise checks on the tau grid
    sl = prof.sampled
    t_rows = prof.thresholds[sl]
    dD = (np.abs(prof.D[sl] - _interp_D(prof_half, t_rows)) + np.abs(prof.D[sl] - _interp_D(prof_2h, t_rows)) / 3.0
          + prof.endpoint_error)
    tp = np.abs(halfspace_torsion_deriv(rp.s_values))
    err_gamma = gaussian_density(rp.s_values) * dD / tp
    meas_margin = rp.gamma_K - rp.gamma_H + tol_inequality + err_gamma
    tol_ratio = err_gamma / rp.gamma_H
    slack = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t_rows) * (tol_ratio[1:] + tol_ratio[:-1]))])
    left_margin = rp.f_values - rp.dinv + slack + tol_inequality

    thm = verify_theorem_4_2(prof, rp, (SQUARE, QUARTIC), tol_equality, tol_equality)
    thm_half = verify_theorem_4_2(prof_half, rp_half, (SQUARE, QUARTIC), tol_equality, tol_equality)

    ti = tol_inequality
    checks = [
        Comparison("saint_venant: T(K) <= T(s*)", T_h, T_star, "le", ti + T_err),
        Comparison("modified <= torsional rigidity", t0, T_rich, "le", ti + t0_err + T_err),
        Comparison("s_H <= s_dagger", s_H, s_dag, "le", ti + ds_dag + ds_H),
        Comparison("Rayleigh(u_dagger) <= Lambda(K)", R_dag, lam_K, "le", ti + R_err, R_err),
        Comparison("Lambda(K_dagger) <= Rayleigh(u_dagger)", lam_dag, R_dag, "le", ti + R_err, R_err),
        Comparison("Lambda(H) <= Lambda(K_dagger)", lam_H, lam_dag, "le", ti + slope * (ds_dag + ds_H)),
        Comparison("Lambda(H) <= Lambda(K)", lam_H, lam_K, "le", ti + slope * ds_H, slope * ds_H),
        Comparison("faber_krahn: Lambda(H_s*) <= Lambda(K)", lam_fk, lam_K, "le", ti),
    ]
    pointwise = {
        "levset_measure": {"min_margin": _f(np.min(rp.gamma_K - rp.gamma_H)),
                           "min_margin_with_tolerance": _f(np.min(meas_margin)),
                           "pass": bool(np.all(meas_margin >= 0))},
        "dinv_le_f": {"min_margin": _f(np.min(rp.f_values - rp.dinv)),
                      "min_margin_with_tolerance": _f(np.min(left_margin)),
                      "pass": bool(np.all(left_margin >= 0))},
    }
    dinv_gap = dinv_consistency(rp)
    consistency = {
        "dinv_two_routes": {"relative_gap": _f(dinv_gap), "tolerance": DINV_TOLERANCE,
                            "pass": bool(dinv_gap <= DINV_TOLERANCE)},
        "rayleigh_two_routes": {"tau_quadrature": _f(R_dag), "x1_quadrature": _f(R_direct),
                                "relative_gap": _f(abs(R_dag - R_direct) / R_dag), "tolerance": _f(R_err / R_dag),
                                "pass": bool(abs(R_dag - R_direct) <= R_err)},
    }
    trials = []
    for k, v in enumerate(trial_fields(mesh, n_trials, seed) if n_trials else []):
        res = _stage("trial", rayleigh_comparison, mesh, v, m, tables, tol_inequality)
        trials.append({"index": k, **{key: (_f(x) if isinstance(x, float) else x) for key, x in res.items()}})

    theorem = {k: dict(c.to_dict(), gap_half_levels=_f(thm_half[k].gap)) for k, c in thm.items()}
    all_pass = (all(c.passed for c in checks) and all(c.passed for c in thm.values())
                and all(v["pass"] for v in pointwise.values()) and all(v["pass"] for v in consistency.values())
                and all(t["pass"] for t in trials))
    verdict = checks[6]
    data = {
        "version": __version__,
        "domain": domain.to_dict(),
        "hypothesis_satisfied": bool(getattr(domain, "convex", True)),
        "resolution": {"h": _f(h), "m": int(m), "levels": int(len(prof.thresholds)), "nodes": int(mesh.n_nodes),
                       "elements": int(len(mesh.elements)), "max_diameter": _f(mesh.max_diameter)},
        "tolerances": {"equality": _f(tol_equality), "inequality": _f(tol_inequality)},
        "measure": {"gamma_K": _f(gamma_exact), "mesh": _f(mesh.total_weight),
                    "geometric_error": _f(mesh.geometric_error)},
        "torsion": {"T_h": _f(T_h), "T_2h": _f(T_2h), "T_extrapolated": _f(T_rich), "error_estimate": _f(T_err),
                    "energy": _f(tdiag.energy), "ratio": _f(tdiag.ratio), "functional": _f(tdiag.functional),
                    "characterisation_gap": _f(tdiag.relative_gap)},
        "frequency": {"Lambda_K": _f(lam_K), "Lambda_K_2h": _f(eig2.eigenvalue), "residual": _f(eig.residual),
                      "iterations": int(eig.iterations), "positive": eig.positive},
        "profile": {"u_max": _f(prof.u_max), "t_cap": _f(prof.t_cap), "T_mod": _f(t0),
                    "T_mod_half_levels": _f(prof_half.D[0]), "T_mod_2h": _f(prof_2h.D[0]),
                    "error_estimate": _f(t0_err), "endpoint_error": _f(prof.endpoint_error),
                    "projection_distance": _f(prof.projection_distance), "warnings": list(prof.warnings),
                    "rayleigh_from_profile": _f(R_prof)},
        "rearrangement": {"t0": _f(rp.t0), "s_dagger": _f(s_dag), "s_dagger_error": _f(ds_dag),
                          "rayleigh_dagger": _f(R_dag), "rayleigh_dagger_half_levels": _f(R_half),
                          "rayleigh_dagger_direct": _f(R_direct), "rayleigh_error_estimate": _f(R_err),
                          "Lambda_dagger": _f(lam_dag)},
        "halfspace": {"s_H": _f(s_H), "s_H_error": _f(ds_H), "Lambda_H": _f(lam_H), "s_star": _f(s_star),
                      "T_star": _f(T_star), "Lambda_star": _f(lam_fk), "dLambda_ds": _f(slope)},
        "theorem_4_2": theorem,
        "pointwise": pointwise,
        "consistency": consistency,
        "trial_fields": {"seed": int(seed), "results": trials},
        "checks": [c.to_dict() for c in checks],
        "verdict": {"Lambda_K": _f(lam_K), "Lambda_H": _f(lam_H), "difference": _f(verdict.difference),
                    "margin": _f(verdict.margin),
                    "tolerance": _f(verdict.tolerance), "pass": verdict.passed},
        "all_pass": bool(all_pass),
    }
    return KJReport(data, prof, rp)


def fixed_point_check(s: float, h: float = 2e-3, m: int = DEFAULT_M, tables: HalfSpaceTables | None = None) -> dict:
    """Rearrange the torsion function of ``HalfLine(s)``; it should reproduce itself.

    Returns the relative sup-norm distance between ``u_dagger`` and the
    exact torsion profile, ``s_dagger - s`` and the integral-identity gaps.
    ``sup_error`` is taken over ``x1 <= X - 1`` with ``X`` the artificial end
    of the mesh: the truncated problem has no levels above ``u(X)``, so near
    ``X`` its ``D`` lacks the whole continuation (relative size up to one,
    absolute size below 1e-30).  ``sup_error_full`` covers every node.
    """
    from .special import halfspace_torsion_function

    domain = HalfLine(float(s))
    mesh = build_mesh(domain, h)
    T_h, diag = torsional_rigidity(mesh)
    prof = level_profile(mesh, diag.field, m)
    rp = build_rearrangement(prof, default_tables() if tables is None else tables)
    x = mesh.nodes[:, 0]
    exact = halfspace_torsion_function(s, x)
    ud = evaluate_dagger(rp, np.maximum(x, rp.s_dagger))
    err = np.abs(ud - exact) / np.max(exact)
    inner = x <= domain.truncation - 1.0
    thm = verify_theorem_4_2(prof, rp, (SQUARE, QUARTIC))
    return {"s": s, "s_dagger": rp.s_dagger, "sup_error": float(err[inner].max()),
            "sup_error_full": float(err.max()), "T_h": T_h, "T_mod": rp.t0,
            "T_exact": float(halfspace_torsion(s)), "gaps": {k: c.gap for k, c in thm.items()},
            "profile": prof, "rearranged": rp}


FIXED_POINT_SUP = 1e-2
FIXED_POINT_OFFSET = 1e-3
FIXED_POINT_CHAIN = 1e-3


def chain_gaps(data: dict) -> dict:
    """How far each link of the comparison chain is from equality (relative; ``s`` values absolute)."""
    out = {}
    for c in data["checks"][1:7]:
        if c["name"].startswith("s_H"):
            out[c["name"]] = abs(c["difference"])
        else:
            out[c["name"]] = c["gap"]
    return out


def verify_domain(domain, h: float = DEFAULT_H, m: int = DEFAULT_M, tol_equality: float = TOL_EQUALITY,
                  tol_inequality: float = TOL_INEQUALITY, tables: HalfSpaceTables | None = None,
                  n_trials: int = 3, seed: int = 0) -> KJReport:
    """:func:`kj_pipeline` plus random trial fields and, on half-lines, the fixed-point test.

    On ``HalfLine(s)`` the rearrangement of the torsion function must give
    back the torsion function (``sup_error <= 1e-2``, ``|s_dagger - s| <= 1e-3``)
    and every link of the chain must be an equality within 1e-3.
    """
    rep = kj_pipeline(domain, h, m, tol_equality, tol_inequality, tables, n_trials, seed)
    if isinstance(domain, HalfLine):
        fp = _stage("fixed_point", fixed_point_check, domain.s, h, m, tables)
        chain = chain_gaps(rep.data)
        ok = {"sup": fp["sup_error"] <= FIXED_POINT_SUP,
              "offset": abs(fp["s_dagger"] - domain.s) <= FIXED_POINT_OFFSET,
              "chain": max(chain.values()) <= FIXED_POINT_CHAIN}
        rep.data["fixed_point"] = {
            "sup_error": _f(fp["sup_error"]), "sup_error_full": _f(fp["sup_error_full"]),
            "s_dagger": _f(fp["s_dagger"]), "s_dagger_error": _f(fp["s_dagger"] - domain.s),
            "T_mod": _f(fp["T_mod"]), "T_exact": _f(fp["T_exact"]),
            "identity_gaps": {k: _f(v) for k, v in fp["gaps"].items()},
            "chain_gaps": {k: _f(v) for k, v in chain.items()},
            "tolerances": {"sup": FIXED_POINT_SUP, "offset": FIXED_POINT_OFFSET, "chain": FIXED_POINT_CHAIN},
            "pass": bool(all(ok.values())),
        }
        rep.data["all_pass"] = bool(rep.data["all_pass"] and all(ok.values()))
    return rep


def generalized_frequency_check(domain, F=SQUARE, h: float = DEFAULT_H, m: int = DEFAULT_M,
                                tables: HalfSpaceTables | None = None, tolerance: float = TOL_INEQUALITY) -> dict:
    """Compare ``int |grad u|^2 / int F(u)`` on ``K`` with the same quotient for ``u_dagger``.

    ``u`` is the first eigenfunction (a convenient admissible trial
    function).  The quotient on ``K`` is evaluated on the mesh directly; the
    one for ``u_dagger`` through the rearranged profile.
    """
    mesh = build_mesh(domain, h)
    eig = solve_frequency(mesh)
    u = eig.eigenfunction
    prof = level_profile(mesh, u, m)
    rp = build_rearrangement(prof, default_tables() if tables is None else tables)
    from .ou_solver import dirichlet_energy
    Fq = F(u.at_quadrature())
    int_F = float(np.sum(mesh.qweights * Fq) + np.sum(mesh.point_masses * F(u.values[mesh.point_mass_nodes])))
    q_K = dirichlet_energy(mesh, u) / int_F
    num, _ = rp.integrate_tau((rp.ell / rp.gamma_K) ** 2)
    layer, err = rp.integrate_tau(rp.ell / rp.gamma_K, F.derivative)
    F0 = float(F(0.0))
    q_dag = num / (F0 * float(gaussian_tail(rp.s_dagger)) + layer)
    return {"F": F.name, "quotient_K": q_K, "quotient_dagger": q_dag, "lambda_K": eig.eigenvalue,
            "endpoint_error": err, "direction_holds": bool(q_K >= q_dag - tolerance - q_dag * err / layer),
            "hypothesis_satisfied": bool(getattr(domain, "convex", True)) and F0 == 0.0}


# --------------------------------------------------------------------------
# suite
# --------------------------------------------------------------------------

def builtin_suite():
    """The built-in convex battery (nine domains)."""
    return [
        HalfLine(-0.5),
        HalfLine(0.7),
        Interval(-1.0, 1.0),
        Interval(-2.5, 0.3),
        ConvexPolygon(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))),
        ConvexPolygon(((1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0))),
        Disk((0.0, 0.0), 1.0),
        Disk((0.8, 0.0), 0.6),
        ConvexPolygon(((0.0, 0.0), (1.5, 0.0), (0.0, 1.0))),
    ]


def _run_one(args):
    domain, h, m, te, ti = args
    return kj_pipeline(domain, h, m, te, ti).data


def run_suite(domains=None, h: float = DEFAULT_H, m: int = DEFAULT_M, workers: int = 1,
              tol_equality: float = TOL_EQUALITY, tol_inequality: float = TOL_INEQUALITY) -> list[dict]:
    """Run :func:`kj_pipeline` on every domain; results keep the input order."""
    domains = builtin_suite() if domains is None else list(domains)
    jobs = [(d, h, m, tol_equality, tol_inequality) for d in domains]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
