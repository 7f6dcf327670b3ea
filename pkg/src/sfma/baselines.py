"""
Reference frontier estimators used in the benchmark.

* DEA (output oriented, variable returns to scale, one input): the smallest
  nondecreasing concave function majorizing the data.
* StoNED: a CNLS fit (concave nondecreasing least squares through Afriat
  inequalities), followed by a split of the residual variance into
  inefficiency and noise by method of moments or pseudo-likelihood, and a
  vertical shift of the CNLS curve by the mean inefficiency.
* Classic SFA: the package's own likelihood with a linear frontier, no
  reported standard errors, and free gamma and eta.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import log_ndtr

from .errors import ConfigError, DataError
from .likelihood import Dataset, LikelihoodContext
from .solvers import FitOptions, bcd_fit, ipm_solve, scalar_minimize
from .splines import ConstraintSet, SplineSpec, design_matrix

logger = logging.getLogger(__name__)

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
MOM_DENOMINATOR = SQRT_2_OVER_PI * (1.0 - 4.0 / np.pi)
CNLS_MAX_N = 250


# ---------------------------------------------------------------------------
# DEA


class DeaFrontier:
    """Piecewise-linear DEA envelope of single-input, single-output data.

    Calling the object evaluates
    ``max{sum l_i y_i : sum l_i x_i <= x, sum l_i = 1, l >= 0}``. Queries left
    of the smallest input are outside the production set; they return the
    envelope value at the leftmost efficient point.
    """

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        order = np.lexsort((-y, x))
        xs, ys = x[order], y[order]
        # keep the highest output at each distinct input
        keep = np.r_[True, np.diff(xs) > 0]
        xs, ys = xs[keep], ys[keep]
        hull = []
        for px, py in zip(xs, ys):
            while len(hull) >= 2:
                (ax, ay), (bx, by) = hull[-2], hull[-1]
                # drop b when it lies on or below the chord a -> p
                if (by - ay) * (px - ax) <= (py - ay) * (bx - ax):
                    hull.pop()
                else:
                    break
            hull.append((px, py))
        hx = np.array([p[0] for p in hull])
        hy = np.array([p[1] for p in hull])
        peak = int(np.argmax(hy))
        self.x_vertices = hx[: peak + 1]
        self.y_vertices = hy[: peak + 1]

    @property
    def x_min(self) -> float:
        return float(self.x_vertices[0])

    def __call__(self, query):
        q = np.asarray(query, dtype=float)
        return np.interp(q, self.x_vertices, self.y_vertices)


def dea_frontier(data: Dataset) -> DeaFrontier:
    if data.n < 1:
        raise DataError("DEA needs at least one observation")
    return DeaFrontier(data.x, data.y)


# ---------------------------------------------------------------------------
# CNLS / StoNED


@dataclass
class CnlsFit:
    """Per-observation hyperplanes ``alpha_i + slope_i * x`` and residuals."""

    alpha: np.ndarray
    slope: np.ndarray
    residuals: np.ndarray

    def __call__(self, query):
        q = np.atleast_1d(np.asarray(query, dtype=float))
        return np.min(self.alpha[None, :] + self.slope[None, :] * q[:, None], axis=1)


def cnls_constraints(x) -> tuple:
    """Afriat rows a_i + b_i x_i - a_h - b_h x_i <= 0 (i != h) and -b_i <= 0.

    Variables are ordered ``[alpha_1..alpha_n, slope_1..slope_n]``. The
    matrix is returned in scipy sparse format with a zero bound vector.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    ii, hh = np.nonzero(~np.eye(n, dtype=bool))
    m = ii.size
    rows = np.repeat(np.arange(m), 4)
    cols = np.column_stack([ii, n + ii, hh, n + hh]).ravel()
    vals = np.column_stack([np.ones(m), x[ii], -np.ones(m), -x[ii]]).ravel()
    afriat = sparse.csr_matrix((vals, (rows, cols)), shape=(m, 2 * n))
    sign = sparse.hstack([sparse.csr_matrix((n, n)), -sparse.eye(n)]).tocsr()
    return sparse.vstack([afriat, sign]).tocsr(), np.zeros(m + n)


def cnls_fit(data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> CnlsFit:
    """Concave nondecreasing least-squares fit via the interior point solver.

    The solver minimizes the mean squared residual. It aims for a KKT
    residual of ``tol / n`` (``tol`` on the sum-of-squares scale) and, when
    round-off stalls it first, accepts ``tol`` on the mean scale.

    Raises
    ------
    ConvergenceError
        When the interior point method fails; not masked.
    """
    n = data.n
    if n < 2:
        raise DataError("CNLS needs at least two observations")
    if n > CNLS_MAX_N:
        raise ConfigError(f"CNLS is O(n^2) in constraints; n={n} exceeds {CNLS_MAX_N} (subsample)")
    x, y = data.x, data.y
    design = sparse.hstack([sparse.eye(n), sparse.diags(x)]).tocsr()
    gram = (2.0 / n * (design.T @ design)).toarray()
    C, c = cnls_constraints(x)

    def oracle(theta):
        r = y - design @ theta
        return float(r @ r) / n, -2.0 / n * (design.T @ r), gram

    start = np.concatenate([np.full(n, np.mean(y)), np.zeros(n)])
    theta = ipm_solve(oracle, C, c, start, tol=tol / n, max_iter=max_iter, accept_tol=tol)
    alpha, slope = theta[:n], theta[n:]
    return CnlsFit(alpha, slope, y - design @ theta)


@dataclass
class VarianceSplit:
    sigma_u: float
    sigma_v: float
    method: str


def _central_moments(residuals):
    e = np.asarray(residuals, dtype=float)
    d = e - e.mean()
    return float(np.mean(d ** 2)), float(np.mean(d ** 3))


def stoned_mom(residuals) -> VarianceSplit:
    """Method-of-moments split from the 2nd and 3rd central residual moments."""
    m2, m3 = _central_moments(residuals)
    if m3 >= 0:
        if m3 > 0:
            warnings.warn("residuals have positive skew; setting sigma_u = 0", RuntimeWarning)
        return VarianceSplit(0.0, float(np.sqrt(m2)), "MoM")
    sigma_u = float(np.cbrt(m3 / MOM_DENOMINATOR))
    noise = m2 - (np.pi - 2.0) / np.pi * sigma_u ** 2
    if noise < 0:
        raise ArithmeticError(
            "degenerate noise: second moment smaller than the inefficiency share"
        )
    return VarianceSplit(sigma_u, float(np.sqrt(noise)), "MoM")


def psl_log_likelihood(residuals, lam: float) -> float:
    """Concentrated pseudo log-likelihood of the signal-to-noise ratio ``lam``."""
    e = np.asarray(residuals, dtype=float)
    n = e.size
    m2 = float(np.mean(e ** 2))
    sigma = np.sqrt(m2 / (1.0 - 2.0 * lam ** 2 / (np.pi * (1.0 + lam ** 2))))
    eps = e - np.sqrt(2.0) * lam * sigma / np.sqrt(np.pi * (1.0 + lam ** 2))
    return float(-n * np.log(sigma) + np.sum(log_ndtr(-eps * lam / sigma))
                 - np.sum(eps ** 2) / (2.0 * sigma ** 2))


def stoned_psl(residuals, lam_max: float = 50.0) -> VarianceSplit:
    """Pseudo-likelihood split: maximize over lam, then recover (sigma_u, sigma_v)."""
    e = np.asarray(residuals, dtype=float)
    if e.size < 3:
        raise DataError("pseudo-likelihood needs at least three residuals")
    e = e - e.mean()
    lam = scalar_minimize(lambda t: -psl_log_likelihood(e, t), 0.0, lam_max, tol=1e-10)
    m2 = float(np.mean(e ** 2))
    sigma = np.sqrt(m2 / (1.0 - 2.0 * lam ** 2 / (np.pi * (1.0 + lam ** 2))))
    root = np.sqrt(1.0 + lam ** 2)
    return VarianceSplit(float(sigma * lam / root), float(sigma / root), "PSL")


def stoned_expected_inefficiency(residuals, split: VarianceSplit) -> np.ndarray:
    """Conditional mean E[u | eps] for normal noise and half-normal inefficiency.

    ``eps = residual - sigma_u sqrt(2/pi)`` is the composite error measured
    from the shifted frontier.
    """
    e = np.asarray(residuals, dtype=float)
    su, sv = split.sigma_u, split.sigma_v
    if su <= 0:
        return np.zeros_like(e)
    if sv <= 0:
        raise ValueError("conditional inefficiency needs sigma_v > 0")
    eps = e - su * SQRT_2_OVER_PI
    s2 = su ** 2 + sv ** 2
    mu_star = -eps * su ** 2 / s2
    sig_star = su * sv / np.sqrt(s2)
    a = mu_star / sig_star
    # phi(a) / Phi(a) in the log domain
    mills = np.exp(-0.5 * a ** 2 - 0.5 * np.log(2.0 * np.pi) - log_ndtr(a))
    return mu_star + sig_star * mills


@dataclass
class StonedFit:
    cnls: CnlsFit
    split: VarianceSplit

    @property
    def shift(self) -> float:
        return self.split.sigma_u * SQRT_2_OVER_PI

    def __call__(self, query):
        return self.cnls(query) + self.shift

    def inefficiency(self) -> np.ndarray:
        return stoned_expected_inefficiency(self.cnls.residuals, self.split)


def stoned_fit(data: Dataset, method: str = "MoM", cnls: CnlsFit = None) -> StonedFit:
    cnls = cnls_fit(data) if cnls is None else cnls
    if method.upper() == "MOM":
        split = stoned_mom(cnls.residuals)
    elif method.upper() in ("PSL", "QLE"):
        split = stoned_psl(cnls.residuals)
    else:
        raise ConfigError(f"unknown StoNED method {method!r}")
    return StonedFit(cnls, split)


# ---------------------------------------------------------------------------
# classic SFA


@dataclass
class SfaFit:
    spec: SplineSpec
    result: object

    def __call__(self, query):
        return design_matrix(self.spec, np.atleast_1d(query)) @ self.result.params.beta


def sfa_fit(data: Dataset, opts: FitOptions = FitOptions()) -> SfaFit:
    """Linear-frontier SFA (no reported errors, gamma and eta free)."""
    spec = SplineSpec((float(data.x.min()), float(data.x.max())), 1)
    plain = Dataset(data.y, data.x, np.zeros(data.n))
    ctx = LikelihoodContext(design_matrix(spec, plain.x))
    res = bcd_fit(plain, ctx, ConstraintSet.empty(spec.dim), opts)
    return SfaFit(spec, res)
