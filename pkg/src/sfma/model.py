"""High-level frontier fitting: spline setup, constraints, fit, per-point estimates."""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .inefficiency import FitResult, estimate_inefficiencies
from .likelihood import Dataset, LikelihoodContext, objective
from .solvers import FitOptions, bcd_fit
from .splines import SplineSpec, design_matrix, make_knots, shape_constraints
from .trimming import TrimConfig, trimmed_fit


@dataclass(frozen=True)
class FrontierModel:
    """Spline and constraint settings of an SFMA frontier.

    Defaults follow the simulation settings: 7 knots at quantiles of x,
    cubic, increasing and concave, constraints checked on 20 grid points.
    """

    num_knots: int = 7
    knot_rule: str = "quantile"
    degree: int = 3
    left_linear: bool = False
    right_linear: bool = False
    shapes: Tuple[str, ...] = ("increasing", "concave")
    grid_size: int = 20
    trim_proportion: float = 0.0
    options: FitOptions = field(default_factory=FitOptions)

    def spline_spec(self, x) -> SplineSpec:
        knots = make_knots(x, self.num_knots, self.knot_rule)
        return SplineSpec(knots, self.degree, self.left_linear, self.right_linear)

    def fit(self, data: Dataset, knots: Optional[Sequence[float]] = None) -> FitResult:
        spec = (SplineSpec(knots, self.degree, self.left_linear, self.right_linear)
                if knots is not None else self.spline_spec(data.x))
        ctx = LikelihoodContext(design_matrix(spec, data.x))
        cons = shape_constraints(spec, self.shapes, self.grid_size)
        if self.trim_proportion > 0:
            trim = TrimConfig(inlier_count=1.0 - self.trim_proportion)
            out = trimmed_fit(data, ctx, cons, self.options, trim)
            params, weights, trace, iters = out.params, out.weights, out.trace, out.iterations
        else:
            res = bcd_fit(data, ctx, cons, self.options)
            params, weights, trace, iters = res.params, ctx.weights, res.trace, res.iterations
        wctx = ctx.with_weights(weights)
        u_hat, v_hat = estimate_inefficiencies(data, wctx, params)
        return FitResult(
            params=params,
            weights=np.asarray(weights, dtype=float),
            u_hat=u_hat,
            v_hat=v_hat,
            residuals=data.y - ctx.design @ params.beta,
            objective=objective(wctx, data, params),
            trace=trace,
            iterations=iters,
            spec=spec,
        )
