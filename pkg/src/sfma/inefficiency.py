"""Posterior-mode recovery of per-firm random effects and inefficiencies."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .likelihood import VARIANCE_FLOOR, Dataset, LikelihoodContext, Params
from .splines import SplineSpec, design_matrix


@dataclass
class FitResult:
    """Fitted parameters together with per-point estimates.

    ``v_hat`` is the inefficiency (distance below the frontier explained by
    the one-sided term), ``u_hat`` the symmetric random effect and
    ``frontier_gap`` the raw distance f(x_i) - y_i.
    """

    params: Params
    weights: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray
    residuals: np.ndarray
    objective: float
    trace: Optional[list] = None
    iterations: int = 0
    spec: Optional[SplineSpec] = None

    @property
    def frontier_gap(self) -> np.ndarray:
        return -self.residuals

    @property
    def outliers(self) -> np.ndarray:
        return self.weights <= 0.0

    def frontier(self, grid) -> np.ndarray:
        if self.spec is None:
            raise ValueError("fit result carries no spline spec")
        return predict_frontier(self.spec, self.params.beta[: self.spec.dim], grid)


def estimate_inefficiencies(data: Dataset, ctx: LikelihoodContext, params: Params):
    """Return ``(u_hat, v_hat)``.

    v_hat = max(0, -eta r / (sigma^2 + gamma + eta)) and
    u_hat = gamma (r + v_hat) / (sigma^2 + gamma), with exact zero branches
    for eta = 0 and gamma = 0. Points with weight 0 get estimates too.
    """
    r = data.y - ctx.design @ params.beta
    sig2 = data.var
    gamma, eta = params.gamma, params.eta
    if eta > 0:
        v_hat = np.maximum(0.0, -eta * r / np.maximum(sig2 + gamma + eta, VARIANCE_FLOOR))
    else:
        v_hat = np.zeros_like(r)
    if gamma > 0:
        u_hat = gamma * (r + v_hat) / np.maximum(sig2 + gamma, VARIANCE_FLOOR)
    else:
        u_hat = np.zeros_like(r)
    return u_hat, v_hat


def predict_frontier(spec: SplineSpec, beta, grid) -> np.ndarray:
    """Spline frontier sum_j beta_j s_j(t) evaluated on ``grid``."""
    return design_matrix(spec, grid, 0) @ np.asarray(beta, dtype=float)
