"""
B-spline bases built by the order-raising recursion

    s_j^0 = indicator of [t_{j-1}, t_j)
    s_j^i = s_{j-1}^{i-1} l(t; c_{j-1}^{i-1}) + s_j^{i-1} r(t; c_j^{i-1})

where c_j^i is the support of s_j^i, ``l`` rises from 0 to 1 across a support
and ``r`` falls from 1 to 0. With knots t_0..t_k and degree p this gives p + k
elements forming a partition of unity (the usual clamped basis).

Optional linear head/tail pieces replace the first and/or last knot interval
by the tangent line of the inner basis, and evaluation outside [t_0, t_k] is
always a linear extension from the nearest boundary.
"""
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import SpecError, UnsupportedOrderError

SHAPES = ("increasing", "decreasing", "convex", "concave")


@dataclass(frozen=True)
class SplineSpec:
    """Knots, degree and linear-tail flags of a univariate spline.

    Attributes
    ----------
    knots : tuple of float
        Strictly increasing t_0 < ... < t_k, at least two entries.
    degree : int
        Polynomial degree p >= 0.
    left_linear, right_linear : bool
        Make the first / last knot interval a linear piece. Each tail
        removes one interior knot from the underlying basis, so the basis
        dimension is ``p + k - left_linear - right_linear``.
    """

    knots: tuple
    degree: int
    left_linear: bool = False
    right_linear: bool = False

    def __post_init__(self):
        knots = tuple(float(t) for t in self.knots)
        object.__setattr__(self, "knots", knots)
        if len(knots) < 2:
            raise SpecError("a spline needs at least two knots")
        if not np.all(np.isfinite(knots)) or np.any(np.diff(knots) <= 0):
            raise SpecError("knots must be finite and strictly increasing")
        if int(self.degree) != self.degree or self.degree < 0:
            raise SpecError("degree must be a non-negative integer")
        object.__setattr__(self, "degree", int(self.degree))
        if self.left_linear or self.right_linear:
            if self.num_intervals < 3:
                raise SpecError("linear tails require at least 3 knot intervals")
            if self.degree < 1:
                raise SpecError("linear tails require degree >= 1")

    @property
    def num_intervals(self) -> int:
        return len(self.knots) - 1

    @property
    def inner_knots(self) -> tuple:
        """Knots of the basis that is extended by the linear tails."""
        lo = 1 if self.left_linear else 0
        hi = self.num_intervals - 1 if self.right_linear else self.num_intervals
        return self.knots[lo:hi + 1]

    @property
    def dim(self) -> int:
        return self.degree + len(self.inner_knots) - 1

    @property
    def domain(self):
        return self.knots[0], self.knots[-1]


@dataclass(frozen=True)
class ConstraintSet:
    """Linear inequalities ``matrix @ theta <= bound``."""

    matrix: np.ndarray
    bound: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        bound = np.asarray(self.bound, dtype=float).ravel()
        if mat.shape[0] != bound.size:
            raise SpecError("constraint matrix and bound have different row counts")
        mat.setflags(write=False)
        bound.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "bound", bound)

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def empty(cls, num_cols: int) -> "ConstraintSet":
        return cls(np.zeros((0, num_cols)), np.zeros(0))

    def stack(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(
            np.vstack([self.matrix, other.matrix]),
            np.concatenate([self.bound, other.bound]),
            self.labels + other.labels,
        )

    def pad(self, extra_cols: int) -> "ConstraintSet":
        """Append zero columns for covariates that are not constrained."""
        if extra_cols == 0:
            return self
        mat = np.hstack([self.matrix, np.zeros((self.num_rows, extra_cols))])
        return ConstraintSet(mat, self.bound, self.labels)


def make_knots(x: Sequence[float], num_knots: int, rule: str = "quantile") -> tuple:
    """Place ``num_knots`` knots (boundaries included) over the range of ``x``.

    ``rule`` is ``"quantile"`` (empirical quantiles) or ``"uniform"``.
    Coincident quantiles fall back to uniform spacing.
    """
    x = np.asarray(x, dtype=float)
    if num_knots < 2:
        raise SpecError("need at least two knots")
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise SpecError("cannot place knots on a degenerate x range")
    if rule == "uniform":
        knots = np.linspace(lo, hi, num_knots)
    elif rule == "quantile":
        knots = np.quantile(x, np.linspace(0.0, 1.0, num_knots))
        knots[0], knots[-1] = lo, hi
        if np.any(np.diff(knots) <= 1e-12 * (hi - lo)):
            knots = np.linspace(lo, hi, num_knots)
    else:
        raise SpecError(f"unknown knot rule {rule!r}")
    return tuple(float(t) for t in knots)


def _raw_basis(knots: np.ndarray, degree: int, t: np.ndarray, order: int) -> np.ndarray:
    """Recursive basis (and derivative) on [t_0, t_k] for points already inside."""
    k = knots.size - 1
    n = t.size
    # vals[d][:, j] holds D^d s_j^i for j = 0..i+k+1 (0 and i+k+1 are the empty ends)
    idx = np.searchsorted(knots, t, side="right") - 1
    idx = np.clip(idx, 0, k - 1)  # right-closed last interval
    base = np.zeros((n, k + 2))
    base[np.arange(n), idx + 1] = 1.0
    vals = [base] + [np.zeros_like(base) for _ in range(order)]

    for i in range(1, degree + 1):
        width = i + k + 2
        new = [np.zeros((n, width)) for _ in range(order + 1)]
        for j in range(1, i + k + 1):
            # support of s_{j-1}^{i-1} (left parent) and s_j^{i-1} (right parent)
            for parent, is_left in ((j - 1, True), (j, False)):
                if parent < 1 or parent > i - 1 + k:
                    continue
                lo = knots[max(parent - i, 0)]
                hi = knots[min(parent, k)]
                span = hi - lo
                if is_left:
                    ramp = (t - lo) / span
                    slope = 1.0 / span
                else:
                    ramp = (t - hi) / (lo - hi)
                    slope = 1.0 / (lo - hi)
                for d in range(order + 1):
                    term = vals[d][:, parent] * ramp
                    if d > 0:
                        term = term + d * vals[d - 1][:, parent] * slope
                    new[d][:, j] += term
        vals = new
    return vals[order][:, 1:-1]


def _inner_eval(spec: SplineSpec, t: np.ndarray, order: int) -> np.ndarray:
    """Basis on the inner knots with linear extension outside their range."""
    knots = np.asarray(spec.inner_knots)
    p = spec.degree
    lo, hi = knots[0], knots[-1]
    out = np.zeros((t.size, spec.dim))
    inside = (t >= lo) & (t <= hi)
    if np.any(inside):
        out[inside] = _raw_basis(knots, p, t[inside], order)
    for mask, edge in ((t < lo, lo), (t > hi, hi)):
        if not np.any(mask) or order >= 2:
            continue
        edge_pt = np.array([edge])
        val = _raw_basis(knots, p, edge_pt, 0)
        slope = _raw_basis(knots, p, edge_pt, 1) if p >= 1 else np.zeros((1, spec.dim))
        if order == 0:
            out[mask] = val + (t[mask] - edge)[:, None] * slope
        else:
            out[mask] = slope
    return out


def eval_basis(spec: SplineSpec, t, deriv_order: int = 0) -> np.ndarray:
    """Value of every basis element (or its derivative) at a single point ``t``."""
    return design_matrix(spec, [t], deriv_order)[0]


def design_matrix(spec: SplineSpec, xs: Iterable[float], deriv_order: int = 0) -> np.ndarray:
    """Matrix whose row i is the basis (derivative of ``deriv_order``) at ``xs[i]``.

    Points outside [t_0, t_k] use the tangent line at the nearest boundary,
    so derivatives of order >= 2 vanish there.
    """
    if not isinstance(spec, SplineSpec):
        raise SpecError("expected a SplineSpec")
    if int(deriv_order) != deriv_order or deriv_order < 0:
        raise UnsupportedOrderError("derivative order must be a non-negative integer")
    if deriv_order > spec.degree:
        raise UnsupportedOrderError(
            f"derivative order {deriv_order} exceeds spline degree {spec.degree}"
        )
    t = np.asarray(xs, dtype=float).ravel()
    if not np.all(np.isfinite(t)):
        raise SpecError("evaluation points must be finite")
    # tail intervals lie outside the inner knots, so the tangent extension covers them
    return _inner_eval(spec, t, deriv_order)


def shape_constraints(spec: SplineSpec, shapes: Iterable[str], grid_size: int = 20,
                      extra_cols: int = 0) -> ConstraintSet:
    """Derivative-sign constraints on a uniform grid over [t_0, t_k].

    increasing: -f' <= 0, decreasing: f' <= 0, concave: f'' <= 0,
    convex: -f'' <= 0. ``extra_cols`` zero columns are appended for
    additional, unconstrained covariates.
    """
    shapes = list(dict.fromkeys(shapes))
    unknown = set(shapes) - set(SHAPES)
    if unknown:
        raise SpecError(f"unknown shape constraint(s): {sorted(unknown)}")
    if grid_size < 2:
        raise SpecError("grid_size must be at least 2")
    grid = np.linspace(spec.knots[0], spec.knots[-1], grid_size)
    result = ConstraintSet.empty(spec.dim + extra_cols)
    for shape in SHAPES:
        if shape not in shapes:
            continue
        order = 1 if shape in ("increasing", "decreasing") else 2
        if spec.degree < order:
            raise SpecError(f"{shape} constraint needs degree >= {order}")
        rows = design_matrix(spec, grid, order)
        sign = -1.0 if shape in ("increasing", "convex") else 1.0
        block = ConstraintSet(sign * rows, np.zeros(grid_size), (shape,) * grid_size)
        result = result.stack(block.pad(extra_cols))
    return result
