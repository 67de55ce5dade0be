"""Closed-form heat kernels on an interval with absorbing endpoints.

Deterministic numerics used everywhere else in the package: the two classical
representations of the periodized Gaussian (spectral cosine series and image
sum), the transition density of Brownian motion killed at 0 and a, its
right-boundary exit flux, the taboo (doubly-conditioned) kernel, the
exponential weight functions w_Z and w_Y, the barrier profile built from the
normalized flux thbar, and the sine-exponential quasi-stationary density.

Series are truncated once the next term bound drops below tol/10; hitting the
term cap raises RuntimeError instead of returning a silently degraded value.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

__all__ = [
    "KernelAccuracy",
    "IntervalParams",
    "DEFAULT_ACCURACY",
    "theta",
    "theta_prime",
    "thbar",
    "error_envelope_E",
    "p_killed",
    "p_killed_scaled",
    "green_killed",
    "exit_density_right",
    "exit_density_right_scaled",
    "I_integral",
    "J_integral",
    "p_taboo",
    "w_Z",
    "w_Y",
    "bbm_density",
    "barrier_f",
    "SineExpDensity",
    "meta_density",
    "sine_exp_density",
    "selfcheck",
]

_PI = math.pi
_PI2 = math.pi * math.pi


@dataclass(frozen=True)
class KernelAccuracy:
    """Truncation policy for the dual-representation series.

    series_truncation_tol
        Stop adding terms once the next term bound is below tol/10.
    representation_switch_t
        Use the image sum below this time, the spectral series at or above
        it.  At 0.3 both sides need under a dozen terms at the default
        tolerance, and the agreement tests straddle the switch.
    max_terms
        Hard cap on either series; exceeding it raises RuntimeError.
    """

    series_truncation_tol: float = 1e-14
    representation_switch_t: float = 0.3
    max_terms: int = 512

    def __post_init__(self) -> None:
        if not (0.0 < self.series_truncation_tol < 1e-2):
            raise ValueError(
                f"series_truncation_tol must be in (0, 1e-2), got {self.series_truncation_tol!r}"
            )
        if not (self.representation_switch_t > 0.0):
            raise ValueError("representation_switch_t must be positive")
        if self.max_terms < 8:
            raise ValueError("max_terms must be at least 8")


DEFAULT_ACCURACY = KernelAccuracy()


@dataclass(frozen=True)
class IntervalParams:
    """Interval (0, a) together with its critical drift mu = sqrt(1 - pi^2/a^2)."""

    a: float

    def __post_init__(self) -> None:
        if not (isinstance(self.a, (int, float)) and math.isfinite(self.a)):
            raise ValueError(f"interval length must be a finite number, got {self.a!r}")
        if self.a < _PI:
            raise ValueError(f"interval length a must be >= pi so mu is real, got {self.a!r}")

    @property
    def mu(self) -> float:
        # recomputed on demand so it can never go stale relative to a
        return math.sqrt(1.0 - _PI2 / (self.a * self.a))


def _interval_length(iv) -> float:
    """Accept IntervalParams or a bare positive length.

    The kernels in this module depend on the interval length only; the
    drift-weighted quantities (w_Z, bbm_density, ...) require a full
    IntervalParams so mu exists.
    """
    a = iv.a if isinstance(iv, IntervalParams) else float(iv)
    if not (a > 0.0 and math.isfinite(a)):
        raise ValueError(f"interval length must be positive and finite, got {a!r}")
    return a


def _require_interval(iv) -> IntervalParams:
    if isinstance(iv, IntervalParams):
        return iv
    return IntervalParams(float(iv))


# ---------------------------------------------------------------------------
# theta and its x-derivative, both representations


def _spectral_sum(x: np.ndarray, t: float, acc: KernelAccuracy, deriv: int) -> np.ndarray:
    tol = acc.series_truncation_tol / 10.0
    out = np.full_like(x, 0.5) if deriv == 0 else np.zeros_like(x)
    for n in range(1, acc.max_terms + 1):
        damp = math.exp(-_PI2 * n * n * t / 2.0)
        coef = damp if deriv == 0 else _PI * n * damp
        if coef < tol:
            return out
        if deriv == 0:
            out += damp * np.cos(_PI * n * x)
        else:
            out -= coef * np.sin(_PI * n * x)
    raise RuntimeError(f"spectral series did not reach tol within {acc.max_terms} terms (t={t})")


def _gauss_shells_needed(t: float, acc: KernelAccuracy, deriv: int) -> int:
    # shell k covers image indices n_center +- k, so |x - 2n| >= 2k - 1 there
    tol = acc.series_truncation_tol / 10.0
    inv = 1.0 / math.sqrt(2.0 * _PI * t)
    for k in range(1, acc.max_terms + 1):
        zmin = 2.0 * k - 1.0
        bound = inv * math.exp(-zmin * zmin / (2.0 * t))
        if deriv == 1:
            bound *= (zmin + 2.0) / t
        # geometric bound on the remaining shells
        ratio = math.exp(-4.0 * k / t) * (2.0 if deriv == 1 else 1.0)
        if ratio < 1.0 and bound / (1.0 - ratio) < tol:
            return k
    raise RuntimeError(f"image sum did not reach tol within {acc.max_terms} shells (t={t})")


def _gauss_sum(x: np.ndarray, t: float, acc: KernelAccuracy, deriv: int) -> np.ndarray:
    inv = 1.0 / math.sqrt(2.0 * _PI * t)
    n_center = np.round(x / 2.0)
    shells = _gauss_shells_needed(t, acc, deriv)
    out = np.zeros_like(x)
    for k in range(0, shells + 1):
        for off in ((0,) if k == 0 else (-k, k)):
            z = x - 2.0 * (n_center + off)
            g = inv * np.exp(-z * z / (2.0 * t))
            out += g if deriv == 0 else (-z / t) * g
    return out


def _theta_eval(x, t, acc: KernelAccuracy, method: str, deriv: int):
    t = float(t)
    if not (t > 0.0 and math.isfinite(t)):
        raise ValueError(f"theta requires finite t > 0, got {t!r}")
    if method == "auto":
        method = "spectral" if t >= acc.representation_switch_t else "gauss"
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    if method == "spectral":
        out = _spectral_sum(x_arr, t, acc, deriv)
    elif method == "gauss":
        out = _gauss_sum(x_arr, t, acc, deriv)
    else:
        raise ValueError(f"method must be 'auto', 'spectral' or 'gauss', got {method!r}")
    return float(out[0]) if scalar else out


def theta(x, t, acc: KernelAccuracy = DEFAULT_ACCURACY, method: str = "auto"):
    """Periodized Gaussian theta(x, t) = sum_n (2 pi t)^(-1/2) exp(-(x-2n)^2/(2t)).

    Equals 1/2 + sum_{n>=1} exp(-pi^2 n^2 t/2) cos(pi n x) by Poisson
    summation; 2-periodic and even in x, solves d/dt theta = (1/2) d2/dx2.
    x may be a scalar or ndarray, t a positive scalar.
    """
    return _theta_eval(x, t, acc, method, deriv=0)


def theta_prime(x, t, acc: KernelAccuracy = DEFAULT_ACCURACY, method: str = "auto"):
    """d/dx of theta.  Vanishes at x = 0 and x = 1, nonnegative on [-1, 0]."""
    return _theta_eval(x, t, acc, method, deriv=1)


# ---------------------------------------------------------------------------
# thbar and the spectral error envelope


def thbar(t, acc: KernelAccuracy = DEFAULT_ACCURACY, method: str = "auto"):
    """Normalized right-exit flux profile (2/pi^2) e^{pi^2 t/2} d/dt theta(1, t).

    Rises strictly from 0 at t = 0 to 1 at infinity.  Spectral form
    sum_{n>=1} (-1)^(n+1) n^2 exp(-pi^2 (n^2-1) t / 2); below the switch the
    image-sum form of d/dt theta(1, t) is used instead.  Negative times give
    0, the same convention the barrier profile uses.
    """
    t = float(t)
    if t <= 0.0:
        return 0.0
    if method == "auto":
        method = "spectral" if t >= acc.representation_switch_t else "gauss"
    tol = acc.series_truncation_tol / 10.0
    if method == "spectral":
        out = 0.0
        for n in range(1, acc.max_terms + 1):
            coef = n * n * math.exp(-_PI2 * (n * n - 1) * t / 2.0)
            if coef < tol:
                return out
            out += coef if n % 2 == 1 else -coef
        raise RuntimeError(f"thbar spectral series did not converge (t={t})")
    if method != "gauss":
        raise ValueError(f"method must be 'auto', 'spectral' or 'gauss', got {method!r}")
    if t < 5e-3:
        # nearest image contributes e^{-1/(2t)} < e^{-100}; also keeps the
        # 1/t^2 factors below from hitting subnormal underflow
        return 0.0
    # d/dt of the image sum at x = 1: images sit at odd z = 2k-1, each twice
    inv = 1.0 / math.sqrt(2.0 * _PI * t)
    pref = (2.0 / _PI2) * math.exp(_PI2 * t / 2.0)
    out = 0.0
    for k in range(1, acc.max_terms + 1):
        z2 = (2.0 * k - 1.0) ** 2
        term = 2.0 * inv * math.exp(-z2 / (2.0 * t)) * (z2 - t) / (2.0 * t * t)
        out += term
        if abs(term) * pref < tol and k >= 2:
            return pref * out
    raise RuntimeError(f"thbar image series did not converge (t={t})")


def error_envelope_E(t, acc: KernelAccuracy = DEFAULT_ACCURACY) -> float:
    """Spectral remainder envelope E_t = pi^2 sum_{n>=2} n^2 e^{-pi^2 (n^2-1) t/2}.

    Strictly decreasing; E_1 is about 1.47e-5.  Returns +inf for t <= 0 so
    expressions like min(x, E_{inf S} * ...) degrade gracefully when the
    window touches zero.
    """
    t = float(t)
    if t <= 0.0:
        return math.inf
    tol = acc.series_truncation_tol / 10.0
    out = 0.0
    for n in range(2, acc.max_terms + 2):
        term = n * n * math.exp(-_PI2 * (n * n - 1) * t / 2.0)
        out += term
        if _PI2 * term < tol:
            return _PI2 * out
    raise RuntimeError(f"error envelope series did not converge (t={t})")


# ---------------------------------------------------------------------------
# killed kernel family


def _broadcast_xy(x, y):
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    scalar = x_arr.ndim == 0 and y_arr.ndim == 0
    return np.atleast_1d(x_arr), np.atleast_1d(y_arr), scalar


def _require_in_interval(a, *arrays):
    for arr in arrays:
        if np.any(arr < 0.0) or np.any(arr > a):
            off = arr[(arr < 0.0) | (arr > a)]
            raise ValueError(f"position {off.flat[0]!r} outside [0, {a}]")


def p_killed(x, y, t, iv, acc: KernelAccuracy = DEFAULT_ACCURACY):
    """Transition density of driftless BM on (0, a) killed at both endpoints.

    p_t^a(x, y) = a^(-1) (theta((x-y)/a, t/a^2) - theta((x+y)/a, t/a^2)).
    Boundary positions give 0; positions outside [0, a] are rejected.
    """
    a = _interval_length(iv)
    t = float(t)
    if not (t > 0.0):
        raise ValueError(f"p_killed requires t > 0, got {t!r}")
    x_arr, y_arr, scalar = _broadcast_xy(x, y)
    _require_in_interval(a, x_arr, y_arr)
    tau = t / (a * a)
    val = (theta((x_arr - y_arr) / a, tau, acc) - theta((x_arr + y_arr) / a, tau, acc)) / a
    inside = (x_arr > 0.0) & (x_arr < a) & (y_arr > 0.0) & (y_arr < a)
    val = np.where(inside, np.maximum(val, 0.0), 0.0)
    return float(val[0]) if scalar else val


def p_killed_scaled(x, y, t, iv, acc: KernelAccuracy = DEFAULT_ACCURACY):
    """exp(pi^2 t / (2 a^2)) * p_killed, stable for t >> a^2.

    Above the representation switch the n = 1 growth is factored into the
    sine series (2/a) sum_n e^{-pi^2 (n^2-1) t/(2a^2)} sin(pi n x/a)
    sin(pi n y/a), so no overflow occurs; below it the plain product is safe.
    """
    a = _interval_length(iv)
    t = float(t)
    if not (t > 0.0):
        raise ValueError(f"p_killed_scaled requires t > 0, got {t!r}")
    tau = t / (a * a)
    x_arr, y_arr, scalar = _broadcast_xy(x, y)
    _require_in_interval(a, x_arr, y_arr)
    if tau < acc.representation_switch_t:
        val = math.exp(_PI2 * tau / 2.0) * np.atleast_1d(
            p_killed(x_arr, y_arr, t, a, acc)
        )
        return float(val[0]) if scalar else val
    tol = acc.series_truncation_tol / 10.0
    out = np.zeros_like(x_arr, dtype=float)
    converged = False
    for n in range(1, acc.max_terms + 1):
        coef = math.exp(-_PI2 * (n * n - 1) * tau / 2.0)
        if coef < tol:
            converged = True
            break
        out += coef * np.sin(_PI * n * x_arr / a) * np.sin(_PI * n * y_arr / a)
    if not converged:
        raise RuntimeError(f"scaled kernel series did not converge (t={t}, a={a})")
    inside = (x_arr > 0.0) & (x_arr < a) & (y_arr > 0.0) & (y_arr < a)
    val = np.where(inside, np.maximum((2.0 / a) * out, 0.0), 0.0)
    return float(val[0]) if scalar else val


def green_killed(x, y, iv):
    """Green function of the killed motion: int_0^inf p_t^a(x, y) dt.

    Closed form 2 (x ^ y) (a - (x v y)) / a; cross-checked against time
    quadrature of p_killed in the self-check suite.
    """
    a = _interval_length(iv)
    x_arr, y_arr, scalar = _broadcast_xy(x, y)
    _require_in_interval(a, x_arr, y_arr)
    val = 2.0 * np.minimum(x_arr, y_arr) * (a - np.maximum(x_arr, y_arr)) / a
    return float(val[0]) if scalar else val


def exit_density_right(x, t, iv, acc: KernelAccuracy = DEFAULT_ACCURACY):
    """Density in t of the first exit through a, started from x in (0, a).

    r_t^a(x) = a^(-2) theta'(x/a - 1, t/a^2).  Integrates to x/a over all t
    (the harmonic exit probability through the right endpoint).
    """
    a = _interval_length(iv)
    t = float(t)
    if not (t > 0.0):
        raise ValueError(f"exit_density_right requires t > 0, got {t!r}")
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim == 0
    val = theta_prime(x_arr / a - 1.0, t / (a * a), acc) / (a * a)
    inside = (x_arr > 0.0) & (x_arr < a)
    val = np.where(inside, np.maximum(val, 0.0), 0.0)
    return float(val[0]) if scalar else val


def exit_density_right_scaled(x, t, iv, acc: KernelAccuracy = DEFAULT_ACCURACY):
    """exp(pi^2 t / (2 a^2)) * exit_density_right, stable for t >> a^2.

    Spectral form (pi/a^2) sum_n (-1)^(n+1) n e^{-pi^2 (n^2-1) t/(2a^2)}
    sin(pi n x / a) above the switch.
    """
    a = _interval_length(iv)
    t = float(t)
    if not (t > 0.0):
        raise ValueError(f"exit_density_right_scaled requires t > 0, got {t!r}")
    tau = t / (a * a)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim == 0
    if tau < acc.representation_switch_t:
        val = math.exp(_PI2 * tau / 2.0) * np.atleast_1d(exit_density_right(x_arr, t, a, acc))
        return float(val[0]) if scalar else val
    tol = acc.series_truncation_tol / 10.0
    out = np.zeros_like(x_arr, dtype=float)
    converged = False
    for n in range(1, acc.max_terms + 1):
        coef = n * math.exp(-_PI2 * (n * n - 1) * tau / 2.0)
        if _PI * coef < tol:
            converged = True
            break
        sign = 1.0 if n % 2 == 1 else -1.0
        out += sign * coef * np.sin(_PI * n * x_arr / a)
    if not converged:
        raise RuntimeError(f"scaled exit series did not converge (t={t}, a={a})")
    inside = (x_arr > 0.0) & (x_arr < a)
    val = np.where(inside, np.maximum((_PI / (a * a)) * out, 0.0), 0.0)
    return float(val[0]) if scalar else val


def _normalize_windows(S):
    """Coerce S into a list of disjoint (s0, s1) windows clipped to s > 0."""
    if isinstance(S, tuple) and len(S) == 2 and np.isscalar(S[0]):
        pieces = [S]
    else:
        pieces = list(S)
    out = []
    for s0, s1 in pieces:
        s0 = max(0.0, float(s0))
        s1 = float(s1)
        if not (math.isfinite(s0) and math.isfinite(s1)):
            raise ValueError(f"time window bounds must be finite, got ({s0!r}, {s1!r})")
        if s1 > s0:
            out.append((s0, s1))
    out.sort()
    for (a0, a1), (b0, b1) in zip(out, out[1:]):
        if b0 < a1:
            raise ValueError("time windows must be disjoint")
    return out


def I_integral(x, S, iv, acc: KernelAccuracy = DEFAULT_ACCURACY) -> float:
    """Growth-weighted exit flux int_S e^{pi^2 s/(2a^2)} r_s^a(x) ds.

    S is a (s0, s1) pair or an iterable of disjoint pairs; the part at s <= 0
    is dropped.  Scales as I^a(x, S) = I^1(x/a, S/a^2).
    """
    a = _interval_length(iv)
    x = float(x)
    total = 0.0
    for s0, s1 in _normalize_windows(S):
        val, _err = integrate.quad(
            lambda s: exit_density_right_scaled(x, s, a, acc),
            s0,
            s1,
            epsabs=1e-13,
            epsrel=1e-12,
            limit=400,
        )
        total += val
    return total


def J_integral(x, y, S, iv, acc: KernelAccuracy = DEFAULT_ACCURACY) -> float:
    """Growth-weighted occupation kernel int_S e^{pi^2 s/(2a^2)} p_s^a(x, y) ds.

    Scales as J^a(x, y, S) = a * J^1(x/a, y/a, S/a^2).  The integrand has an
    integrable 1/sqrt(s) spike at s = 0 when x = y; quadrature handles it but
    windows away from 0 converge much faster.
    """
    a = _interval_length(iv)
    x = float(x)
    y = float(y)
    total = 0.0
    for s0, s1 in _normalize_windows(S):
        val, _err = integrate.quad(
            lambda s: p_killed_scaled(x, y, s, a, acc),
            s0,
            s1,
            epsabs=1e-13,
            epsrel=1e-12,
            limit=400,
        )
        total += val
    return total


def p_taboo(x, y, t, iv, acc: KernelAccuracy = DEFAULT_ACCURACY):
    """Kernel of the motion conditioned to never touch 0 or a.

    (sin(pi y/a) / sin(pi x/a)) e^{pi^2 t/(2a^2)} p_t^a(x, y).  Conservative
    in y for every t, with stationary density (2/a) sin^2(pi x / a).  The
    start x must be strictly interior.
    """
    a = _interval_length(iv)
    x = float(x)
    sx = math.sin(_PI * x / a)
    if not (0.0 < x < a) or sx <= 0.0:
        raise ValueError(f"taboo start must be strictly inside (0, {a}), got {x!r}")
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    scalar = np.asarray(y).ndim == 0
    val = np.sin(_PI * y_arr / a) / sx * np.atleast_1d(p_killed_scaled(x, y_arr, t, a, acc))
    val = np.maximum(val, 0.0)
    return float(val[0]) if scalar else val


# ---------------------------------------------------------------------------
# drift-weighted quantities (need mu, hence a full IntervalParams)


def w_Z(x, iv):
    """Additive martingale weight a e^{mu (x-a)} sin(pi x / a) on [0, a], else 0."""
    iv = _require_interval(iv)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim == 0
    # open-interval support: endpoints are exact zeros, not sin(pi) dust
    inside = (x_arr > 0.0) & (x_arr < iv.a)
    xc = np.clip(x_arr, 0.0, iv.a)
    val = np.where(inside, iv.a * np.exp(iv.mu * (xc - iv.a)) * np.sin(_PI * xc / iv.a), 0.0)
    val = np.maximum(val, 0.0)
    return float(val[0]) if scalar else val


def w_Y(x, iv):
    """Companion weight e^{mu (x-a)}; no interval indicator."""
    iv = _require_interval(iv)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim == 0
    val = np.exp(iv.mu * (x_arr - iv.a))
    return float(val[0]) if scalar else val


def bbm_density(x, y, t, iv, acc: KernelAccuracy = DEFAULT_ACCURACY):
    """First-moment density of branching BM with drift -mu killed at 0 and a.

    e^{mu(x-y)} e^{pi^2 t/(2a^2)} p_t^a(x, y): branching at rate 1/(2m) with
    mean offspring increment m exactly offsets the drift and killing at the
    n = 1 eigenvalue, which is what makes w_Z a martingale weight.
    """
    iv = _require_interval(iv)
    x_arr, y_arr, scalar = _broadcast_xy(x, y)
    val = np.exp(iv.mu * (x_arr - y_arr)) * np.atleast_1d(
        p_killed_scaled(x_arr, y_arr, t, iv.a, acc)
    )
    return float(val[0]) if scalar else val


def barrier_f(shift, t, acc: KernelAccuracy = DEFAULT_ACCURACY) -> float:
    """Barrier profile f_shift(t) = log(1 + (e^shift - 1) thbar(t)), 0 for t <= 0.

    Interpolates from 0 at t = 0 to shift at infinity, monotonically in t.
    shift <= -1 is rejected: the family below -1 loses the uniform
    f(t) - f(s) >= -1 property the barrier construction relies on.
    """
    shift = float(shift)
    if shift <= -1.0:
        raise ValueError(f"barrier shift must be > -1, got {shift!r}")
    t = float(t)
    if t <= 0.0:
        return 0.0
    return math.log1p(math.expm1(shift) * thbar(t, acc))


# ---------------------------------------------------------------------------
# sine-exponential density


class SineExpDensity:
    """Density proportional to sin(pi x / a) e^{-decay x} on (0, a).

    The normalization is computed once by quadrature and cached on the
    instance; the exact antiderivative gives the CDF, and sampling inverts a
    tabulated CDF on a fixed grid (inversion bias is O((a/grid)^2), far below
    Monte Carlo noise at the default resolution).
    """

    def __init__(self, a: float, decay: float, grid_points: int = 8193):
        a = float(a)
        decay = float(decay)
        if not (a > 0.0 and math.isfinite(a)):
            raise ValueError(f"interval length must be positive, got {a!r}")
        if not math.isfinite(decay):
            raise ValueError(f"decay must be finite, got {decay!r}")
        self.a = a
        self.decay = decay
        self._norm, _err = integrate.quad(
            lambda u: math.sin(_PI * u / a) * math.exp(-decay * u), 0.0, a,
            epsabs=1e-14, epsrel=1e-13, limit=200,
        )
        if not (self._norm > 0.0):
            raise RuntimeError("normalization quadrature collapsed")
        self._x_grid = np.linspace(0.0, a, grid_points)
        cdf = self._raw_cdf(self._x_grid)
        self._cdf_grid = cdf / cdf[-1]

    def _raw_cdf(self, x):
        # int_0^x sin(pi u/a) e^{-decay u} du via the exact antiderivative
        a, lam = self.a, self.decay
        k = _PI / a
        denom = lam * lam + k * k
        x_arr = np.clip(np.asarray(x, dtype=float), 0.0, a)
        num = np.exp(-lam * x_arr) * (-lam * np.sin(k * x_arr) - k * np.cos(k * x_arr)) + k
        return num / denom

    @property
    def norm(self) -> float:
        return self._norm

    @property
    def mode(self) -> float:
        """Peak location (a/pi) atan(pi / (a decay)) for decay > 0, a/2 at 0."""
        if self.decay == 0.0:
            return self.a / 2.0
        if self.decay < 0.0:
            return self.a - (self.a / _PI) * math.atan(_PI / (-self.a * self.decay))
        return (self.a / _PI) * math.atan(_PI / (self.a * self.decay))

    def pdf(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        scalar = np.asarray(x).ndim == 0
        inside = (x_arr > 0.0) & (x_arr < self.a)
        xc = np.clip(x_arr, 0.0, self.a)
        val = np.where(
            inside, np.sin(_PI * xc / self.a) * np.exp(-self.decay * xc) / self._norm, 0.0
        )
        return float(val[0]) if scalar else val

    def cdf(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        scalar = np.asarray(x).ndim == 0
        total = self._raw_cdf(self.a)
        val = np.where(
            x_arr <= 0.0, 0.0, np.where(x_arr >= self.a, 1.0, self._raw_cdf(x_arr) / total)
        )
        return float(val[0]) if scalar else val

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(int(n))
        return np.interp(u, self._cdf_grid, self._x_grid)


@lru_cache(maxsize=64)
def sine_exp_density(a: float, decay: float) -> SineExpDensity:
    """Cached SineExpDensity instances keyed by (a, decay)."""
    return SineExpDensity(a, decay)


def meta_density(x, iv):
    """Quasi-stationary profile: sin(pi x / a) e^{-mu x} on (0, a), normalized."""
    iv = _require_interval(iv)
    return sine_exp_density(iv.a, iv.mu).pdf(x)


# ---------------------------------------------------------------------------
# self-check suite (fast, deterministic; wired to the CLI)


def _check(name: str, max_abs_err: float, tol: float) -> dict:
    return {
        "name": name,
        "max_abs_err": float(max_abs_err),
        "tol": float(tol),
        "pass": bool(max_abs_err <= tol),
    }


def selfcheck(acc: KernelAccuracy = DEFAULT_ACCURACY) -> dict:
    """Cross-validate the kernels against independent numerics.

    Covers: dual-representation agreement for theta and theta', the heat
    equation by finite differences, symmetry and periodicity, the Green
    function by time quadrature, thbar cross-representation, taboo
    conservation, and total right-exit mass.  Returns a JSON-ready report.
    """
    t0 = time.perf_counter()
    checks = []

    xs = np.arange(-2.0, 2.0 + 1e-9, 0.05)
    ts = np.geomspace(0.05, 5.0, 25)
    worst = 0.0
    worst_prime = 0.0
    for t in ts:
        worst = max(worst, float(np.max(np.abs(
            theta(xs, t, acc, method="spectral") - theta(xs, t, acc, method="gauss")))))
        worst_prime = max(worst_prime, float(np.max(np.abs(
            theta_prime(xs, t, acc, method="spectral") - theta_prime(xs, t, acc, method="gauss")))))
    checks.append(_check("theta_dual_representation", worst, 1e-12))
    checks.append(_check("theta_prime_dual_representation", worst_prime, 1e-11))

    worst = 0.0
    for t in ts:
        th = theta(xs, t, acc)
        worst = max(worst, float(np.max(np.abs(th - theta(-xs, t, acc)))))
        worst = max(worst, float(np.max(np.abs(th - theta(xs + 2.0, t, acc)))))
    checks.append(_check("theta_even_and_periodic", worst, 1e-12))

    ht, hx = 3e-5, 5e-3
    xs_h = np.arange(-0.9, 0.9 + 1e-9, 0.1)
    worst = 0.0
    for t in (0.1, 0.15, 0.25, 0.4, 0.7, 1.2, 2.0):
        th_t = (theta(xs_h, t + ht, acc) - theta(xs_h, t - ht, acc)) / (2.0 * ht)
        th_xx = (
            -theta(xs_h - 2 * hx, t, acc)
            + 16.0 * theta(xs_h - hx, t, acc)
            - 30.0 * theta(xs_h, t, acc)
            + 16.0 * theta(xs_h + hx, t, acc)
            - theta(xs_h + 2 * hx, t, acc)
        ) / (12.0 * hx * hx)
        worst = max(worst, float(np.max(np.abs(th_t - 0.5 * th_xx))))
    checks.append(_check("theta_heat_equation_fd", worst, 1e-6))

    worst = 0.0
    for t in (0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0):
        worst = max(worst, abs(thbar(t, acc, method="spectral") - thbar(t, acc, method="gauss")))
    checks.append(_check("thbar_dual_representation", worst, 1e-12))

    # Green function: quadrature of the kernel vs the closed form, a = 1
    val01, _ = integrate.quad(lambda s: p_killed(0.3, 0.6, s, 1.0, acc), 0.0, 1.0,
                              epsabs=1e-11, epsrel=1e-11, limit=200)
    val16, _ = integrate.quad(lambda s: p_killed(0.3, 0.6, s, 1.0, acc), 1.0, 6.0,
                              epsabs=1e-11, epsrel=1e-11, limit=200)
    # truncation beyond t = 6 is below 1e-12
    checks.append(_check("green_time_quadrature", abs(val01 + val16 - green_killed(0.3, 0.6, 1.0)), 1e-6))
    checks.append(_check("green_reference_value", abs(green_killed(0.3, 0.6, 1.0) - 0.24), 1e-12))

    # taboo kernel is conservative
    a_tab = 4.0
    mass, _ = integrate.quad(lambda y: p_taboo(1.3, y, 0.8 * a_tab * a_tab, a_tab, acc),
                             0.0, a_tab, epsabs=1e-11, epsrel=1e-11, limit=200)
    checks.append(_check("taboo_conservation", abs(mass - 1.0), 1e-9))

    # total right-exit probability equals x/a
    a_ex = 2.0
    x_ex = 1.3
    mass, _ = integrate.quad(lambda s: exit_density_right(x_ex, s, a_ex, acc),
                             0.0, 12.0 * a_ex * a_ex, epsabs=1e-11, epsrel=1e-11, limit=400)
    checks.append(_check("right_exit_mass", abs(mass - x_ex / a_ex), 1e-8))

    worst = 0.0
    for t in (0.05, 0.3, 1.0, 5.0):
        worst = max(worst, abs(theta_prime(0.0, t, acc)), abs(theta_prime(1.0, t, acc)))
    checks.append(_check("theta_prime_reflection_zeros", worst, 1e-12))

    return {
        "passed": all(c["pass"] for c in checks),
        "elapsed_s": time.perf_counter() - t0,
        "checks": checks,
    }
