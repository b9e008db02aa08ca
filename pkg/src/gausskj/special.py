"""One-dimensional Gaussian special functions.

Everything here is a function of a single real variable: the standard normal
CDF and quantile, the scaled Mills ratio ``V'(t) = e^{t^2/2} int_t^inf e^{-u^2/2} du``,
and the Gaussian torsional rigidity ``T(s)`` of the half-space
``H_s = {x_1 >= s}`` together with its derivative, inverse and torsion function.

All tail-sensitive quantities are evaluated through ``erfcx`` so that
``e^{t^2/2}`` and ``1 - Phi(t)`` are never formed separately.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)
# |T'(0)| = sqrt(2 pi) / 4
_TPRIME_SCALE = SQRT2PI / 4.0

# practical range of the half-space parametrisation
S_MIN = -12.0
S_MAX = 37.0

_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-12, limit=400)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a function."""


def gaussian_cdf(t):
    """Standard normal distribution function ``Phi(t)``."""
    return special.ndtr(t)


def gaussian_tail(t):
    """Gaussian measure of the half-space ``{x_1 >= t}``, i.e. ``1 - Phi(t)``."""
    return special.ndtr(-np.asarray(t, dtype=float))


def gaussian_density(t):
    return np.exp(-0.5 * np.square(t)) / SQRT2PI


def gaussian_quantile(p):
    """Inverse of :func:`gaussian_cdf` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError(f"gaussian_quantile requires 0 < p < 1, got {p!r}")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def torsion_slope(t):
    """Scaled Mills ratio ``V'(t) = sqrt(2 pi) e^{t^2/2} (1 - Phi(t))``.

    Computed as ``sqrt(pi/2) * erfcx(t / sqrt 2)``.  Finite for all ``t`` above
    about -37.6; below that the true value exceeds the double range and
    ``inf`` is returned.
    """
    with np.errstate(over="ignore"):
        return np.sqrt(np.pi / 2.0) * special.erfcx(np.asarray(t, dtype=float) / SQRT2)


def halfspace_torsion_deriv(s):
    """Closed form ``T'(s) = -sqrt(2 pi) e^{s^2/2} gamma(H_s)^2``.

    Rewritten as ``-(sqrt(2 pi)/4) erfcx(s/sqrt 2)^2 e^{-s^2/2}``, which is
    overflow-free wherever the result itself is representable (``s`` above
    about -37.7); further left it returns ``-inf``.
    """
    s = np.asarray(s, dtype=float)
    # in log form: below s ~ -37.7 the value overflows to -inf instead of inf * 0 = nan
    with np.errstate(over="ignore", divide="ignore"):
        return -_TPRIME_SCALE * np.exp(2.0 * np.log(special.erfcx(s / SQRT2)) - 0.5 * s * s)


def _torsion_density(t):
    # equals -T'(t) = V'(t)^2 e^{-t^2/2} / sqrt(2 pi)
    return -float(halfspace_torsion_deriv(t))


def _scaled_tail_integrand(y, s):
    # e^{s^2/2} * (-T'(s + y)), for s >= 0
    return _TPRIME_SCALE * special.erfcx((s + y) / SQRT2) ** 2 * np.exp(-s * y - 0.5 * y * y)


@lru_cache(maxsize=None)
def _torsion_at_zero() -> float:
    val, _ = integrate.quad(_scaled_tail_integrand, 0.0, np.inf, args=(0.0,), **_QUAD_OPTS)
    return val


def _log_halfspace_torsion_scalar(s: float) -> float:
    if s >= 0.0:
        # factor out e^{-s^2/2}; the remaining integrand decays like e^{-s y}
        width = 40.0 / (1.0 + s)
        brk = [width * k / 8.0 for k in range(1, 8)]
        val, _ = integrate.quad(_scaled_tail_integrand, 0.0, width, args=(s,), points=brk, **_QUAD_OPTS)
        return -0.5 * s * s + np.log(val)
    pts = [p for p in np.arange(-1.0, s, -1.0)] if s < -1.0 else None
    val, _ = integrate.quad(_torsion_density, s, 0.0, points=pts, **_QUAD_OPTS)
    return np.log(_torsion_at_zero() + val)


def log_halfspace_torsion(s):
    """Natural logarithm of :func:`halfspace_torsion`; finite for every finite ``s``."""
    if np.ndim(s) == 0:
        return _log_halfspace_torsion_scalar(float(s))
    return np.array([_log_halfspace_torsion_scalar(float(x)) for x in np.ravel(s)]).reshape(np.shape(s))


def halfspace_torsion(s):
    """Gaussian torsional rigidity ``T(s)`` of ``H_s = {x_1 >= s}``.

    ``T(s) = (1/sqrt(2 pi)) int_s^inf V'(t)^2 e^{-t^2/2} dt``, evaluated by
    adaptive Gauss-Kronrod quadrature (QUADPACK) at relative tolerance 1e-12.
    ``T`` decreases strictly from ``+inf`` (``s -> -inf``) to 0.
    """
    return np.exp(log_halfspace_torsion(s))


def halfspace_torsion_inverse(tau, guess=None, rtol=1e-12, maxiter=100):
    """Solve ``T(s) = tau`` for ``s``.

    Safeguarded Newton iteration on ``log T(s) - log tau`` inside the bracket
    ``[S_MIN, S_MAX]``; after three consecutive unproductive Newton steps it
    falls back to bisection for good.

    Raises
    ------
    DomainError
        If ``tau`` is outside ``[T(S_MAX), T(S_MIN)]``.  The message carries the
        valid interval.
    """
    if np.ndim(tau) != 0:
        g = np.broadcast_to(np.nan if guess is None else guess, np.shape(tau))
        return np.array([
            halfspace_torsion_inverse(float(t), None if np.isnan(gi) else float(gi), rtol, maxiter)
            for t, gi in zip(np.ravel(tau), np.ravel(g))
        ]).reshape(np.shape(tau))

    tau = float(tau)
    lo_val, hi_val = _torsion_range()
    if not (tau > 0.0) or not (np.exp(lo_val) <= tau <= np.exp(hi_val)):
        raise DomainError(
            f"halfspace_torsion_inverse: tau={tau!r} outside the valid interval "
            f"[{np.exp(lo_val)!r}, {np.exp(hi_val)!r}] = [T({S_MAX}), T({S_MIN})]"
        )
    target = np.log(tau)
    lo, hi = S_MIN, S_MAX  # g(lo) >= 0 >= g(hi)
    s = 0.5 * (lo + hi) if guess is None else min(max(float(guess), lo), hi)
    gs = _log_halfspace_torsion_scalar(s) - target
    failures = 0
    for _ in range(maxiter):
        if abs(gs) <= rtol:
            return s
        if gs > 0.0:
            lo = s
        else:
            hi = s
        step_ok = False
        if failures < 3:
            dg = float(halfspace_torsion_deriv(s)) / np.exp(gs + target)
            cand = s - gs / dg if dg < 0.0 else np.nan
            if lo < cand < hi:
                gc = _log_halfspace_torsion_scalar(cand) - target
                if abs(gc) < 0.5 * abs(gs):
                    s, gs, step_ok = cand, gc, True
        if not step_ok:
            failures += 1
            s = 0.5 * (lo + hi)
            gs = _log_halfspace_torsion_scalar(s) - target
        if hi - lo < 1e-15 * max(1.0, abs(s)):
            return s
    return s


@lru_cache(maxsize=None)
def _torsion_range():
    return _log_halfspace_torsion_scalar(S_MAX), _log_halfspace_torsion_scalar(S_MIN)


def torsion_ceiling() -> float:
    """Largest ``tau`` accepted by :func:`halfspace_torsion_inverse`, ``T(S_MIN)``."""
    return float(np.exp(_torsion_range()[1]))


# Gauss-Legendre panels for cumulative integrals of V'
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _integrate_slope(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised ``int_a^b V'(t) dt`` on short panels."""
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    return half * (torsion_slope(pts) @ _GL_W)


def halfspace_torsion_function(s, x1):
    """Torsion function of ``H_s``: ``v_s(x) = V(x_1) - V(s) = int_s^{x_1} V'(t) dt``.

    ``x1`` may be a scalar (adaptive quadrature) or an array (composite
    16-point Gauss-Legendre on panels of width at most 0.25 between the
    sorted sample points, accumulated).
    """
    s = float(s)
    if np.ndim(x1) == 0:
        x1 = float(x1)
        if x1 < s:
            raise DomainError(f"torsion function of H_s defined for x1 >= s; got x1={x1} < s={s}")
        if x1 == s:
            return 0.0
        val, _ = integrate.quad(torsion_slope, s, x1, **_QUAD_OPTS)
        return val
    x = np.asarray(x1, dtype=float)
    if np.any(x < s):
        raise DomainError("torsion function of H_s defined for x1 >= s")
    flat = x.ravel()
    order = np.argsort(flat, kind="stable")
    xs = flat[order]
    knots = np.concatenate([[s], xs])
    out_sorted = np.empty_like(xs)
    acc = 0.0
    for i in range(xs.size):
        a, b = knots[i], knots[i + 1]
        if b > a:
            n = int(np.ceil((b - a) / 0.25))
            edges = np.linspace(a, b, n + 1)
            acc += float(_integrate_slope(edges[:-1], edges[1:]).sum())
        out_sorted[i] = acc
    out = np.empty_like(flat)
    out[order] = out_sorted
    return out.reshape(x.shape)


@dataclass(frozen=True)
class HalfSpaceTables:
    """Tabulated ``s -> T(s)`` and ``s -> Lambda(H_s)`` with monotone interpolation.

    Torsion is interpolated as ``log T`` (it spans ~60 decades on the default
    range); both interpolants are PCHIP, so the tabulated monotonicity is
    preserved between samples.
    """

    s_grid: np.ndarray
    torsion_values: np.ndarray
    frequency_values: np.ndarray
    interpolation_kind: str = "pchip"
    _log_t: PchipInterpolator = field(init=False, repr=False, compare=False)
    _lam: PchipInterpolator = field(init=False, repr=False, compare=False)
    _inv: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.s_grid, dtype=float)
        t = np.asarray(self.torsion_values, dtype=float)
        lam = np.asarray(self.frequency_values, dtype=float)
        if not (s.shape == t.shape == lam.shape) or s.ndim != 1 or s.size < 2:
            raise ValueError("HalfSpaceTables columns must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(s) <= 0):
            raise ValueError("s_grid must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(t > 0) and np.all(np.isfinite(lam)) and np.all(lam > 0)):
            raise ValueError("table values must be finite and strictly positive")
        if np.any(np.diff(t) >= 0):
            raise ValueError("torsion_values must be strictly decreasing")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("frequency_values must be strictly increasing")
        for name, arr in (("s_grid", s), ("torsion_values", t), ("frequency_values", lam)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_log_t", PchipInterpolator(s, np.log(t), extrapolate=False))
        object.__setattr__(self, "_lam", PchipInterpolator(s, lam, extrapolate=False))
        object.__setattr__(self, "_inv", PchipInterpolator(-np.log(t), s, extrapolate=False))

    def torsion(self, s):
        return np.exp(self._log_t(s))

    def frequency(self, s):
        return self._lam(s)

    def inverse_torsion(self, tau):
        """Interpolated ``T^{-1}``; NaN outside the tabulated range."""
        return self._inv(-np.log(tau))

    def rows(self):
        """Iterate ``(s, T(s), T'(s), Lambda(H_s), gamma(H_s))`` rows."""
        tprime = halfspace_torsion_deriv(self.s_grid)
        gam = gaussian_tail(self.s_grid)
        return zip(self.s_grid, self.torsion_values, tprime, self.frequency_values, gam)
