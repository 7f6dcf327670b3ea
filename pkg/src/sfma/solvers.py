"""
Numerical solvers behind the frontier fit.

* ``ipm_solve``: primal-dual interior point method for a smooth convex
  objective under ``C x <= c``, using slacks, damped Newton steps on the
  perturbed KKT system and the homotopy mu+ = 0.1 <s, lambda> / m.
* ``scalar_minimize``: bounded 1-d minimization (grid bracket, golden
  section, optional Newton polish) for the variance blocks.
* ``bcd_fit``: block-coordinate descent over (beta, gamma, eta).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg, sparse

from .errors import (
    BoundaryError,
    ConditioningError,
    ConfigError,
    ConvergenceError,
    IllPosedError,
    SolverError,
)
from .likelihood import (
    Dataset,
    LikelihoodContext,
    Params,
    objective,
    partials_gamma_eta,
    residual_objective,
    value_grad_hess_beta,
)
from .splines import ConstraintSet

logger = logging.getLogger(__name__)

DESCENT_FRACTION = 0.01
MU_FRACTION = 0.1
REGULARIZATION = 1e-10
_MAX_HALVINGS = 60
REFINEMENT_STEPS = 2
STALL_WINDOW = 10


@dataclass(frozen=True)
class FitOptions:
    """Tolerances, iteration caps and variance bounds for ``bcd_fit``.

    An upper bound of ``None`` resolves to 10 x var(y) at fit time. Equal
    lower and upper bounds pin the component (e.g. ``gamma_bounds=(0, 0)``).
    """

    beta_tol: float = 1e-8
    var_tol: float = 1e-8
    obj_tol: float = 1e-8
    max_bcd_iters: int = 200
    max_ipm_iters: int = 100
    gamma_bounds: Tuple[float, Optional[float]] = (0.0, None)
    eta_bounds: Tuple[float, Optional[float]] = (0.0, None)

    def __post_init__(self):
        for name in ("beta_tol", "var_tol", "obj_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_bcd_iters < 1 or self.max_ipm_iters < 1:
            raise ConfigError("iteration caps must be at least 1")
        for name in ("gamma_bounds", "eta_bounds"):
            lo, hi = getattr(self, name)
            if lo < 0 or (hi is not None and (not np.isfinite(hi) or hi < lo)):
                raise ConfigError(f"{name} must satisfy 0 <= lower <= upper < inf")


@dataclass
class IpmState:
    x: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    mu: float
    iterations: int = 0
    residual: float = np.inf


@dataclass
class BcdResult:
    params: Params
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


# ---------------------------------------------------------------------------
# interior point method


def _kkt(grad, C, c, x, s, lam, mu):
    f1 = C @ x + s - c
    f2 = lam * s - mu
    f3 = grad + C.T @ lam
    return f1, f2, f3


def _norm_inf(*parts):
    return max((np.max(np.abs(p)) if p.size else 0.0) for p in parts)


def _normal_matrix(hess, C, d):
    if sparse.issparse(C):
        extra = (C.T @ sparse.diags(d) @ C).toarray()
    else:
        extra = C.T @ (d[:, None] * C)
    return hess + extra


def _factorize(mat):
    """Return a solver for the symmetric Newton matrix, regularizing if needed."""
    mat = 0.5 * (mat + mat.T)
    try:
        factor = linalg.cho_factor(mat, check_finite=True)
        return lambda rhs: linalg.cho_solve(factor, rhs)
    except (linalg.LinAlgError, ValueError):
        pass
    reg = mat + REGULARIZATION * np.eye(mat.shape[0])
    try:
        factor = linalg.cho_factor(reg)
        return lambda rhs: linalg.cho_solve(factor, rhs)
    except (linalg.LinAlgError, ValueError):
        pass
    try:
        lu = linalg.lu_factor(reg)
    except (linalg.LinAlgError, ValueError) as exc:
        raise ConditioningError("Newton system is singular after regularization") from exc

    def solve(rhs):
        sol = linalg.lu_solve(lu, rhs)
        if not np.all(np.isfinite(sol)):
            raise ConditioningError("Newton system is singular after regularization")
        return sol
    return solve


def _newton_solve(mat, rhs):
    return _factorize(mat)(rhs)


def ipm_solve(oracle: Callable, C, c, x0, tol: float = 1e-8, max_iter: int = 100,
              return_state: bool = False, accept_tol: Optional[float] = None):
    """Minimize a smooth convex function subject to ``C x <= c``.

    Parameters
    ----------
    oracle : callable
        ``oracle(x) -> (value, gradient, hessian)``.
    C : (m, k) array or scipy sparse matrix
        Constraint matrix; ``m`` may be zero.
    c : (m,) array
        Constraint bounds.
    x0 : (k,) array
        Starting point; need not be feasible (the slacks absorb it).
    tol : float
        Stopping threshold on the infinity norm of the unperturbed KKT
        residual ``[Cx + s - c, lambda * s, grad + C^T lambda]``.
    accept_tol : float, optional
        Looser threshold used when progress stalls: if the residual has not
        halved over ``STALL_WINDOW`` iterations (or ``max_iter`` is reached)
        the best iterate is returned provided its residual is at most
        ``accept_tol``. Default: no fallback.

    Returns
    -------
    x : ndarray, or ``IpmState`` when ``return_state`` is set.

    Raises
    ------
    ConditioningError
        The Newton system could not be factorized even after adding
        a small ridge.
    ConvergenceError
        ``max_iter`` reached; ``exc.best`` carries the iterate with the
        smallest residual.
    """
    x = np.asarray(x0, dtype=float).copy()
    c = np.asarray(c, dtype=float).ravel()
    if not sparse.issparse(C):
        C = np.asarray(C, dtype=float).reshape(c.size, x.size)
    m = c.size

    if m == 0:
        return _newton_unconstrained(oracle, x, tol, max_iter, return_state)

    s = np.maximum(c - C @ x, 1.0)
    lam = np.ones(m)
    mu = MU_FRACTION * float(s @ lam) / m
    _, grad, hess = oracle(x)
    best = IpmState(x.copy(), s.copy(), lam.copy(), mu)
    accept = -np.inf if accept_tol is None else accept_tol
    last_halving, halving_ref = 0, np.inf

    def finish():
        return best if return_state else best.x

    for it in range(max_iter + 1):
        f1, f2, f3 = _kkt(grad, C, c, x, s, lam, 0.0)
        res = _norm_inf(f1, f2, f3)
        if res < best.residual:
            best = IpmState(x.copy(), s.copy(), lam.copy(), mu, it, res)
        if res <= tol:
            return finish()
        if res <= 0.5 * halving_ref:
            last_halving, halving_ref = it, res
        if best.residual <= accept and it - last_halving >= STALL_WINDOW:
            logger.debug("IPM stalled at residual %.3g; accepting", best.residual)
            return finish()
        if it == max_iter:
            break

        f2 = f2 - mu
        merit = _norm_inf(f1, f2, f3)
        ratio = lam / s
        mat = _normal_matrix(hess, C, ratio)
        rhs = -f3 + C.T @ ((f2 - lam * f1) / s)
        solve = _factorize(mat)
        dx = solve(rhs)
        for _ in range(REFINEMENT_STEPS):
            ds = -f1 - C @ dx
            dlam = -(f2 + lam * ds) / s
            # the reduced system loses accuracy when lambda / s is badly scaled
            defect = hess @ dx + C.T @ dlam + f3
            dx = dx - solve(defect)
        ds = -f1 - C @ dx
        dlam = -(f2 + lam * ds) / s

        alpha = 1.0
        neg = np.concatenate([ds < 0, dlam < 0])
        if np.any(neg):
            steps = -np.concatenate([s, lam])[neg] / np.concatenate([ds, dlam])[neg]
            if steps.min() <= 1.0:
                alpha = 0.99 * steps.min()
        for _ in range(_MAX_HALVINGS):
            s_new = s + alpha * ds
            lam_new = lam + alpha * dlam
            if np.all(s_new > 0) and np.all(lam_new > 0):
                x_new = x + alpha * dx
                _, g_new, h_new = oracle(x_new)
                if np.all(np.isfinite(g_new)):
                    new_merit = _norm_inf(*_kkt(g_new, C, c, x_new, s_new, lam_new, mu))
                    if new_merit <= (1.0 - DESCENT_FRACTION * alpha) * merit:
                        break
            alpha *= 0.5
        else:
            if best.residual <= accept:
                return finish()
            raise ConvergenceError(
                "interior point line search failed", best=best.x, residual=best.residual,
                iteration=it,
            )
        x, s, lam, grad, hess = x_new, s_new, lam_new, g_new, h_new
        mu = MU_FRACTION * float(s @ lam) / m

    if best.residual <= accept:
        return finish()
    raise ConvergenceError(
        f"interior point method did not converge in {max_iter} iterations "
        f"(residual {best.residual:.3g})", best=best.x, residual=best.residual,
        iteration=max_iter,
    )


def _newton_unconstrained(oracle, x, tol, max_iter, return_state):
    _, grad, hess = oracle(x)
    best = IpmState(x.copy(), np.zeros(0), np.zeros(0), 0.0)
    for it in range(max_iter + 1):
        res = _norm_inf(grad)
        if res < best.residual:
            best = IpmState(x.copy(), np.zeros(0), np.zeros(0), 0.0, it, res)
        if res <= tol:
            return best if return_state else x
        if it == max_iter:
            break
        dx = _newton_solve(hess, -grad)
        alpha = 1.0
        for _ in range(_MAX_HALVINGS):
            x_new = x + alpha * dx
            _, g_new, h_new = oracle(x_new)
            if np.all(np.isfinite(g_new)) and _norm_inf(g_new) <= (1 - DESCENT_FRACTION * alpha) * res:
                break
            alpha *= 0.5
        else:
            raise ConvergenceError("Newton line search failed", best=best.x,
                                   residual=best.residual, iteration=it)
        x, grad, hess = x_new, g_new, h_new
    raise ConvergenceError(
        f"Newton method did not converge in {max_iter} iterations", best=best.x,
        residual=best.residual, iteration=max_iter,
    )


# ---------------------------------------------------------------------------
# scalar minimization

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _scan_points(lower, upper, num=24):
    span = upper - lower
    frac = np.unique(np.concatenate([
        [0.0], np.geomspace(1e-8, 1.0, num), np.linspace(0.0, 1.0, num // 2)[1:],
    ]))
    return lower + span * frac


def scalar_minimize(f: Callable[[float], float], lower: float, upper: float,
                    tol: float = 1e-8, x0: Optional[float] = None,
                    derivs: Optional[Callable[[float], Tuple[float, float]]] = None) -> float:
    """Minimize ``f`` on ``[lower, upper]``; both endpoints are admissible.

    A coarse scan (uniform plus geometric refinement at ``lower``) brackets
    the best local minimum, golden-section search shrinks the bracket to
    ``tol`` and, when ``derivs(x) -> (f', f'')`` is given, a few safeguarded
    Newton steps polish the result. The returned point is never worse than
    ``x0`` or any scanned point.
    """
    if lower > upper:
        raise ConfigError(f"empty interval [{lower}, {upper}]")
    if lower == upper:
        return float(lower)

    def safe(t):
        try:
            val = float(f(t))
        except IllPosedError:
            return np.inf
        return val if np.isfinite(val) else np.inf

    pts = _scan_points(lower, upper)
    vals = np.array([safe(t) for t in pts])
    cands = list(zip(pts, vals))
    if x0 is not None:
        x0 = float(np.clip(x0, lower, upper))
        cands.append((x0, safe(x0)))
    i = int(np.argmin(vals))
    a = pts[max(i - 1, 0)]
    b = pts[min(i + 1, pts.size - 1)]

    # golden section on [a, b]
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = safe(x1), safe(x2)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = safe(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = safe(x2)
    xm = 0.5 * (a + b)
    cands += [(x1, f1), (x2, f2), (xm, safe(xm))]

    if derivs is not None:
        x = min(cands, key=lambda p: p[1])[0]
        fx = safe(x)
        for _ in range(5):
            if not lower < x < upper:
                break
            try:
                g, h = derivs(x)
            except (BoundaryError, IllPosedError):
                break
            if not (np.isfinite(g) and np.isfinite(h)) or h <= 0:
                break
            step = -g / h
            x_new = float(np.clip(x + step, lower, upper))
            f_new = safe(x_new)
            if not f_new <= fx:
                break
            cands.append((x_new, f_new))
            if abs(x_new - x) <= tol * max(1.0, abs(x)):
                break
            x, fx = x_new, f_new

    best = min(cands, key=lambda p: p[1])
    return float(best[0])


# ---------------------------------------------------------------------------
# block coordinate descent


def _resolve_bounds(bounds, data, ctx):
    lo, hi = bounds
    if hi is None:
        active = ctx.weights > 0
        yv = float(np.var(data.y[active])) if np.sum(active) > 1 else 0.0
        hi = 10.0 * yv if yv > 0 else 1.0
    return float(lo), float(max(hi, lo))


def _beta_oracle(ctx, data, gamma, eta):
    def oracle(beta):
        return value_grad_hess_beta(ctx, data, Params(beta, gamma, eta))
    return oracle


def initial_params(data: Dataset, ctx: LikelihoodContext, constraints: ConstraintSet,
                   opts: FitOptions) -> Params:
    """Constrained weighted least squares start with gamma = eta = var(r) / 2."""
    x = ctx.design
    wt = ctx.weights / (data.var + 1.0)

    def oracle(beta):
        r = data.y - x @ beta
        return (0.5 * float(wt @ r ** 2), -x.T @ (wt * r), x.T @ (wt[:, None] * x))

    beta = ipm_solve(oracle, constraints.matrix, constraints.bound, np.zeros(x.shape[1]),
                     tol=opts.beta_tol, max_iter=opts.max_ipm_iters)
    r = data.y - x @ beta
    active = ctx.weights > 0
    half_var = 0.5 * float(np.var(r[active])) if np.sum(active) > 1 else 0.5
    glo, ghi = _resolve_bounds(opts.gamma_bounds, data, ctx)
    elo, ehi = _resolve_bounds(opts.eta_bounds, data, ctx)
    return Params(beta, float(np.clip(half_var, glo, ghi)), float(np.clip(half_var, elo, ehi)))


def bcd_fit(data: Dataset, ctx: LikelihoodContext, constraints: ConstraintSet,
            opts: FitOptions = FitOptions(), init: Optional[Params] = None) -> BcdResult:
    """Alternate exact solves over beta (IPM), gamma and eta (scalar).

    The objective is recorded after every block update; each update keeps
    the incumbent when the new candidate is not at least as good, so the
    trace is non-increasing.
    """
    try:
        params = init if init is not None else initial_params(data, ctx, constraints, opts)
    except SolverError as exc:
        exc.block = "init"
        raise
    glo, ghi = _resolve_bounds(opts.gamma_bounds, data, ctx)
    elo, ehi = _resolve_bounds(opts.eta_bounds, data, ctx)
    params = params.replace(gamma=float(np.clip(params.gamma, glo, ghi)),
                            eta=float(np.clip(params.eta, elo, ehi)))

    obj = objective(ctx, data, params)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, opts.max_bcd_iters + 1):
        start = obj

        try:
            beta = ipm_solve(_beta_oracle(ctx, data, params.gamma, params.eta),
                             constraints.matrix, constraints.bound, params.beta,
                             tol=opts.beta_tol, max_iter=opts.max_ipm_iters)
        except SolverError as exc:
            exc.block, exc.iteration = "beta", it
            raise
        cand = params.replace(beta=beta)
        cand_obj = objective(ctx, data, cand)
        if cand_obj <= obj:
            params, obj = cand, cand_obj
        trace.append(obj)

        for name, lo, hi in (("gamma", glo, ghi), ("eta", elo, ehi)):
            if lo == hi:
                trace.append(obj)
                continue
            current = params
            resid = data.y - ctx.design @ params.beta

            def f(val, name=name):
                var = {"gamma": current.gamma, "eta": current.eta, name: val}
                return residual_objective(resid, data.var, ctx.weights, var["gamma"], var["eta"])

            def derivs(val, name=name):
                dg, de, hg, he = partials_gamma_eta(ctx, data, current.replace(**{name: val}))
                return (dg, hg) if name == "gamma" else (de, he)

            try:
                val = scalar_minimize(f, lo, hi, tol=opts.var_tol,
                                      x0=getattr(params, name), derivs=derivs)
            except SolverError as exc:
                exc.block, exc.iteration = name, it
                raise
            cand = params.replace(**{name: val})
            try:
                cand_obj = objective(ctx, data, cand)
            except IllPosedError:
                cand_obj = np.inf
            if cand_obj <= obj:
                params, obj = cand, cand_obj
            trace.append(obj)

        if abs(start - obj) <= opts.obj_tol * max(1.0, abs(obj)):
            converged = True
            break

    if not converged:
        logger.warning("block coordinate descent stopped at max_bcd_iters=%d", opts.max_bcd_iters)
    return BcdResult(params, trace, it, converged)
