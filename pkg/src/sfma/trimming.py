"""
Likelihood trimming: jointly estimate the frontier and inlier weights.

The weights live on the capped simplex {w : 0 <= w_i <= 1, sum w = h}. For
fixed w the inner problem is an ordinary weighted fit, and the gradient of
the value function v(w) = min_theta sum_i w_i l_i(theta) is the vector of
per-point losses at the inner minimizer, so the outer loop is projected
gradient descent on w with a halving line search.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, SolverError
from .likelihood import Dataset, LikelihoodContext, Params, nll_terms
from .solvers import BcdResult, FitOptions, bcd_fit
from .splines import ConstraintSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrimConfig:
    """Trimming settings.

    ``inlier_count`` is either an absolute count in (1, n] or, when it is in
    (0, 1], a proportion of n (rounded to the nearest integer). A value of
    exactly 1 is read as the proportion 100%.
    """

    inlier_count: float = 1.0
    max_outer_iters: int = 50
    w_tol: float = 1e-6
    step_init: Optional[float] = None
    max_halvings: int = 30

    def resolve(self, n: int) -> int:
        h = self.inlier_count
        if h <= 0:
            raise ConfigError("inlier count must be positive")
        h = int(round(h * n)) if h <= 1.0 else int(round(h))
        if not 0 < h <= n:
            raise ConfigError(f"inlier count {h} outside (0, {n}]")
        return h


@dataclass
class TrimResult:
    params: Params
    weights: np.ndarray
    trace: list = field(default_factory=list)
    iterations: int = 0
    inner: Optional[BcdResult] = None

    @property
    def excluded(self) -> np.ndarray:
        return np.flatnonzero(self.weights <= 0)


def project_capped_simplex(v, h: float, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Euclidean projection of ``v`` onto {w : 0 <= w <= 1, sum(w) = h}.

    Bisection on the shift ``mu`` with sum(clip(v - mu, 0, 1)) = h.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if not 0 < h <= n:
        raise ConfigError(f"capped simplex size h={h} outside (0, {n}]")
    if h == n:
        return np.ones(n)
    lo = v.min() - 1.0  # sum = n > h
    hi = v.max()        # sum = 0 < h
    w = np.clip(v - 0.5 * (lo + hi), 0.0, 1.0)
    for _ in range(max_iter):
        mu = 0.5 * (lo + hi)
        w = np.clip(v - mu, 0.0, 1.0)
        total = w.sum()
        if abs(total - h) <= tol:
            break
        if total > h:
            lo = mu
        else:
            hi = mu
    # the free coordinates absorb the remaining bisection error exactly
    free = (w > 0) & (w < 1)
    gap = h - w.sum()
    if np.any(free) and gap != 0.0:
        w[free] = np.clip(w[free] + gap / free.sum(), 0.0, 1.0)
    return w


def _inner(data, ctx, constraints, opts, w, init):
    res = bcd_fit(data, ctx.with_weights(w), constraints, opts, init=init)
    losses = nll_terms(ctx, data, res.params)
    return res, float(w @ losses), losses


def _binarize(w: np.ndarray, h: int) -> np.ndarray:
    order = np.argsort(-w, kind="stable")
    out = np.zeros_like(w)
    out[order[:h]] = 1.0
    return out


def trimmed_fit(data: Dataset, ctx: LikelihoodContext, constraints: ConstraintSet,
                opts: FitOptions = FitOptions(), trim: TrimConfig = TrimConfig()) -> TrimResult:
    """Projected-gradient trimming around ``bcd_fit``.

    Starts from uniform weights h/n, iterates
    ``w+ = proj(w - alpha * l(theta(w)))`` with alpha halved until v(w+) <= v(w),
    stops when the weights move less than ``w_tol``, then keeps the h largest
    weights as inliers and refits on those binary weights.
    """
    n = data.n
    h = trim.resolve(n)
    if h == n:
        res = bcd_fit(data, ctx.with_weights(np.ones(n)), constraints, opts)
        return TrimResult(res.params, np.ones(n), [res.trace[-1]], 0, res)

    w = np.full(n, h / n)
    try:
        res, val, losses = _inner(data, ctx, constraints, opts, w, None)
    except SolverError as exc:
        exc.iteration = 0
        raise
    trace = [val]
    step = trim.step_init
    if step is None:
        step = n / max(np.max(np.abs(losses)), 1e-12)

    it = 0
    for it in range(1, trim.max_outer_iters + 1):
        alpha = step
        accepted = False
        for _ in range(trim.max_halvings):
            w_new = project_capped_simplex(w - alpha * losses, h)
            if np.max(np.abs(w_new - w)) < trim.w_tol:
                break
            try:
                res_new, val_new, losses_new = _inner(data, ctx, constraints, opts, w_new, res.params)
            except SolverError as exc:
                exc.iteration = it
                raise
            if val_new <= val:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        moved = np.max(np.abs(w_new - w))
        w, res, val, losses = w_new, res_new, val_new, losses_new
        trace.append(val)
        if moved < trim.w_tol:
            break

    w_bin = _binarize(w, h)
    try:
        final = bcd_fit(data, ctx.with_weights(w_bin), constraints, opts, init=res.params)
    except SolverError as exc:
        exc.iteration = it + 1
        raise
    return TrimResult(final.params, w_bin, trace, it, final)
