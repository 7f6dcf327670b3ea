"""
Stable evaluation of ln(erfc(x)) and its first two derivatives.

``scipy.special.erfc`` underflows to exactly zero for x >~ 27, so the log
goes to -inf and breaks any optimizer that wanders there. Below
``SWITCH_POINT`` we evaluate through ``erf``/``erfcx``; at and above it we
use the asymptotic series

    erfc(x) ~ exp(-x^2) / (sqrt(pi) x) * (1 + sum_n (-1)^n (2n-1)!! / (2x^2)^n)

truncated after ``ASYMPTOTIC_TERMS`` correction terms. Derivatives on the
asymptotic branch are the exact derivatives of the truncated series.

All functions accept scalars or arrays and return the same shape.
"""
import numpy as np
from scipy import special as sps

from .errors import DomainError

SWITCH_POINT = 25.0
ASYMPTOTIC_TERMS = 3

_SQRT_PI = np.sqrt(np.pi)
_LOG_SQRT_PI = 0.5 * np.log(np.pi)
_TWO_OVER_SQRT_PI = 2.0 / _SQRT_PI


def _as_input(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("ln_erfc requires finite input")
    return arr


def _wrap(arr, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


def _series(x, terms=ASYMPTOTIC_TERMS):
    """Return S, S', S'' of the bracketed correction series at x (x > 0)."""
    s = np.ones_like(x)
    ds = np.zeros_like(x)
    d2s = np.zeros_like(x)
    coef = 1.0
    for n in range(1, terms + 1):
        coef *= -(2 * n - 1) / 2.0  # (-1)^n (2n-1)!! / 2^n
        s += coef * x ** (-2 * n)
        ds += coef * (-2 * n) * x ** (-2 * n - 1)
        d2s += coef * (2 * n) * (2 * n + 1) * x ** (-2 * n - 2)
    return s, ds, d2s


def _asym(x, terms=ASYMPTOTIC_TERMS):
    s, _, _ = _series(x, terms)
    return -x * x - np.log(_SQRT_PI * x) + np.log(s)


def ln_erfc_two_term(x):
    """Two-term asymptotic approximation -x^2 + ln(1 - 1/(2x^2)) - ln(sqrt(pi) x).

    Only meaningful for x > 1/sqrt(2); kept as the reference form of the
    large-x approximation.
    """
    arr = _as_input(x)
    return _wrap(_asym(arr, terms=1), x)


def ln_erfc(x):
    """Natural log of the complementary error function, finite for all finite x."""
    arr = _as_input(x)
    out = np.empty_like(arr)
    big = arr >= SWITCH_POINT
    small = arr < 0.5
    mid = ~big & ~small
    out[small] = np.log1p(-sps.erf(arr[small]))
    xm = arr[mid]
    out[mid] = np.log(sps.erfcx(xm)) - xm * xm
    if big.any():
        out[big] = _asym(arr[big])
    return _wrap(out, x)


def _d1_direct(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = -_TWO_OVER_SQRT_PI / sps.erfcx(x[pos])
    xn = x[~pos]
    out[~pos] = -_TWO_OVER_SQRT_PI * np.exp(-xn * xn) / sps.erfc(xn)
    return out


def ln_erfc_d1(x):
    """First derivative erfc'(x)/erfc(x); strictly negative."""
    arr = _as_input(x)
    out = np.empty_like(arr)
    big = arr >= SWITCH_POINT
    out[~big] = _d1_direct(arr[~big])
    if not big.any():
        return _wrap(out, x)
    xb = arr[big]
    s, ds, _ = _series(xb)
    out[big] = -2.0 * xb - 1.0 / xb + ds / s
    return _wrap(out, x)


def ln_erfc_d2(x):
    """Second derivative of ln(erfc(x)); non-positive everywhere."""
    arr = _as_input(x)
    out = np.empty_like(arr)
    big = arr >= SWITCH_POINT
    xs = arr[~big]
    d1 = _d1_direct(xs)
    # erfc'' = -2x erfc', hence h'' = -2x h' - h'^2
    out[~big] = -2.0 * xs * d1 - d1 * d1
    if not big.any():
        return _wrap(out, x)
    xb = arr[big]
    s, ds, d2s = _series(xb)
    out[big] = -2.0 + 1.0 / (xb * xb) + (d2s * s - ds * ds) / (s * s)
    return _wrap(out, x)
