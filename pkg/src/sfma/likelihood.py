"""
Marginal negative log-likelihood of the frontier meta-analysis model

    y_i = <x_i, beta> + u_i - v_i + eps_i,
    eps_i ~ N(0, sigma_i^2) (known), u_i ~ N(0, gamma), v_i ~ HN(0, eta),

with u and v integrated out. Per point, with r = y - <x, beta>,
tau = sigma^2 + gamma, V = tau + eta and z = sqrt(eta / (2 tau V)):

    l_i = r^2 / (2V) + ln(V) / 2 - ln erfc(z r)

up to an additive constant (ln(2 pi) / 2 per point). The weighted objective
is sum_i w_i l_i.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BoundaryError, DataError, IllPosedError
from .special import ln_erfc, ln_erfc_d1, ln_erfc_d2

VARIANCE_FLOOR = 1e-12
ZR_CLAMP = 1e8


@dataclass(frozen=True)
class Dataset:
    """Observed outputs, a single exposure and reported standard errors."""

    y: np.ndarray
    x: np.ndarray
    se: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        se = np.zeros_like(y) if self.se is None else np.asarray(self.se, dtype=float).ravel()
        if y.size < 1:
            raise DataError("dataset is empty")
        if x.size != y.size or se.size != y.size:
            raise DataError("y, x and se must have the same length")
        for name, arr in (("y", y), ("x", x), ("se", se)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if np.any(se < 0):
            raise DataError("standard errors must be non-negative")
        for arr in (y, x, se):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "se", se)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def var(self) -> np.ndarray:
        return self.se ** 2

    def subset(self, mask) -> "Dataset":
        return Dataset(self.y[mask], self.x[mask], self.se[mask])


@dataclass(frozen=True)
class Params:
    """Frontier coefficients and the two variance components."""

    beta: np.ndarray
    gamma: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not (self.gamma >= 0 and self.eta >= 0):
            raise ValueError("gamma and eta must be non-negative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "eta", float(self.eta))

    def replace(self, **kwargs) -> "Params":
        values = dict(beta=self.beta, gamma=self.gamma, eta=self.eta)
        values.update(kwargs)
        return Params(**values)


@dataclass(frozen=True)
class LikelihoodContext:
    """Design matrix and trimming weights for a dataset."""

    design: np.ndarray
    weights: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        n = design.shape[0]
        weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if weights.size != n:
            raise DataError("weights must match the number of design rows")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "weights", weights)

    def with_weights(self, weights) -> "LikelihoodContext":
        return LikelihoodContext(self.design, weights)


class _Terms:
    """Per-point derived quantities shared by the value and derivative code."""

    def __init__(self, ctx: LikelihoodContext, data: Dataset, params: Params):
        sig2 = data.var
        raw_v = sig2 + params.gamma + params.eta
        if np.any(raw_v < VARIANCE_FLOOR):
            raise IllPosedError(
                "variance collapse: sigma^2 + gamma + eta below floor "
                f"{VARIANCE_FLOOR:g} for {int(np.sum(raw_v < VARIANCE_FLOOR))} point(s)"
            )
        self.r = data.y - ctx.design @ params.beta
        self.tau = np.maximum(sig2 + params.gamma, VARIANCE_FLOOR)
        self.v = np.maximum(raw_v, VARIANCE_FLOOR)
        self.z = np.sqrt(params.eta / (2.0 * self.tau * self.v))
        self.zr = np.clip(self.z * self.r, -ZR_CLAMP, ZR_CLAMP)
        self.w = ctx.weights
        self.eta = params.eta


def residual_objective(r, sig2, weights, gamma: float, eta: float) -> float:
    """Weighted objective from precomputed residuals (fast path for scalar searches)."""
    raw_v = sig2 + gamma + eta
    if raw_v.min() < VARIANCE_FLOOR:
        raise IllPosedError("variance collapse: sigma^2 + gamma + eta below floor")
    tau = np.maximum(sig2 + gamma, VARIANCE_FLOOR)
    v = np.maximum(raw_v, VARIANCE_FLOOR)
    zr = np.clip(np.sqrt(eta / (2.0 * tau * v)) * r, -ZR_CLAMP, ZR_CLAMP)
    return float(weights @ (r * r / (2.0 * v) + 0.5 * np.log(v) - ln_erfc(zr)))


def nll_terms(ctx: LikelihoodContext, data: Dataset, params: Params) -> np.ndarray:
    """Unweighted per-point negative log-likelihood contributions."""
    t = _Terms(ctx, data, params)
    return t.r ** 2 / (2.0 * t.v) + 0.5 * np.log(t.v) - ln_erfc(t.zr)


def objective(ctx: LikelihoodContext, data: Dataset, params: Params) -> float:
    """Weighted total sum_i w_i l_i."""
    return float(ctx.weights @ nll_terms(ctx, data, params))


def grad_beta(ctx: LikelihoodContext, data: Dataset, params: Params) -> np.ndarray:
    t = _Terms(ctx, data, params)
    coef = -t.r / t.v + ln_erfc_d1(t.zr) * t.z
    return ctx.design.T @ (t.w * coef)


def hess_beta(ctx: LikelihoodContext, data: Dataset, params: Params) -> np.ndarray:
    t = _Terms(ctx, data, params)
    coef = 1.0 / t.v - ln_erfc_d2(t.zr) * t.z ** 2
    x = ctx.design
    hess = x.T @ ((t.w * coef)[:, None] * x)
    return 0.5 * (hess + hess.T)


def value_grad_hess_beta(ctx: LikelihoodContext, data: Dataset, params: Params):
    """Objective, gradient and Hessian in beta from a single pass."""
    t = _Terms(ctx, data, params)
    h = ln_erfc(t.zr)
    value = float(t.w @ (t.r ** 2 / (2.0 * t.v) + 0.5 * np.log(t.v) - h))
    x = ctx.design
    g = x.T @ (t.w * (-t.r / t.v + ln_erfc_d1(t.zr) * t.z))
    hcoef = t.w * (1.0 / t.v - ln_erfc_d2(t.zr) * t.z ** 2)
    hess = x.T @ (hcoef[:, None] * x)
    return value, g, 0.5 * (hess + hess.T)


def partials_gamma_eta(ctx: LikelihoodContext, data: Dataset, params: Params):
    """First and second partials of the weighted objective in gamma and eta.

    Returns
    -------
    tuple of float
        (d/dgamma, d/deta, d2/dgamma2, d2/deta2)

    Raises
    ------
    BoundaryError
        If gamma or eta is zero; the z-derivatives are singular there.
    """
    if params.gamma <= 0 or params.eta <= 0:
        raise BoundaryError("gamma/eta partials need gamma > 0 and eta > 0")
    t = _Terms(ctx, data, params)
    r, v, tau, z, eta = t.r, t.v, t.tau, t.z, params.eta
    h1 = ln_erfc_d1(t.zr)
    h2 = ln_erfc_d2(t.zr)

    a_eta = 1.0 / eta - 1.0 / v
    a_gam = -1.0 / tau - 1.0 / v
    dz_eta = 0.5 * z * a_eta
    dz_gam = 0.5 * z * a_gam
    d2z_eta = 0.25 * z * a_eta ** 2 + 0.5 * z * (-1.0 / eta ** 2 + 1.0 / v ** 2)
    d2z_gam = 0.25 * z * a_gam ** 2 + 0.5 * z * (1.0 / tau ** 2 + 1.0 / v ** 2)

    base1 = -r ** 2 / (2.0 * v ** 2) + 0.5 / v
    base2 = r ** 2 / v ** 3 - 0.5 / v ** 2
    g_eta = base1 - h1 * r * dz_eta
    g_gam = base1 - h1 * r * dz_gam
    h_eta = base2 - h2 * r ** 2 * dz_eta ** 2 - h1 * r * d2z_eta
    h_gam = base2 - h2 * r ** 2 * dz_gam ** 2 - h1 * r * d2z_gam
    w = t.w
    return float(w @ g_gam), float(w @ g_eta), float(w @ h_gam), float(w @ h_eta)
