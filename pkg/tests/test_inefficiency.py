import numpy as np
import pytest
from scipy.optimize import minimize

from sfma.inefficiency import estimate_inefficiencies, predict_frontier
from sfma.likelihood import Dataset, LikelihoodContext, Params
from sfma.splines import SplineSpec

from conftest import active_set_qp


def point(r, sig2, gamma, eta):
    ctx = LikelihoodContext(np.ones((1, 1)))
    data = Dataset([r], [0.0], [np.sqrt(sig2)])
    u, v = estimate_inefficiencies(data, ctx, Params([0.0], gamma, eta))
    return u[0], v[0]


def joint_objective(uv, r, sig2, gamma, eta):
    u, v = uv
    return (r - u + v) ** 2 / (2 * sig2) + u ** 2 / (2 * gamma) + v ** 2 / (2 * eta)


class TestClosedForms:
    def test_examples(self):
        assert point(1.0, 0.0, 0.0, 1.0)[1] == 0.0
        assert point(-1.0, 0.0, 0.0, 1.0)[1] == pytest.approx(1.0)
        u, v = point(-2.0, 2.0, 1.0, 1.0)
        assert v == pytest.approx(0.5)
        assert u == pytest.approx(-0.5)

    def test_zero_branches(self):
        assert point(-3.0, 1.0, 0.5, 0.0) == (pytest.approx(-1.0), 0.0)
        assert point(-3.0, 1.0, 0.0, 0.5)[0] == 0.0

    def test_numeric_minimization(self, rng):
        for _ in range(100):
            r = rng.uniform(-4, 4)
            sig2, gamma, eta = rng.uniform(0.1, 3.0, 3)
            u, v = point(r, sig2, gamma, eta)
            H = np.array([[1 / sig2 + 1 / gamma, -1 / sig2], [-1 / sig2, 1 / sig2 + 1 / eta]])
            g = np.array([-r / sig2, r / sig2])
            qp = active_set_qp(H, g, np.array([[0.0, -1.0]]), np.zeros(1))
            np.testing.assert_allclose([u, v], qp, atol=1e-8)
            # generic minimizer as a second, looser check (argmin accuracy ~ sqrt(eps))
            res = minimize(joint_objective, x0=[0.0, 1.0], args=(r, sig2, gamma, eta),
                           method="L-BFGS-B", bounds=[(None, None), (0.0, None)],
                           options=dict(ftol=1e-15, gtol=1e-12, maxiter=1000))
            np.testing.assert_allclose([u, v], res.x, atol=1e-6)

    def test_reduced_objective_perturbation(self, rng):
        for _ in range(50):
            r = rng.uniform(-4, 4)
            sig2, gamma, eta = rng.uniform(0.1, 3.0, 3)
            _, v = point(r, sig2, gamma, eta)
            g = lambda t: (r + t) ** 2 / (2 * (sig2 + gamma)) + t ** 2 / (2 * eta)
            for dv in (-1e-4, 1e-4):
                if v + dv >= 0:
                    assert g(v + dv) >= g(v)

    def test_stationary(self, rng):
        r, sig2, gamma, eta = -1.3, 0.4, 0.7, 1.1
        u, v = point(r, sig2, gamma, eta)
        h = 1e-6
        grad = [(joint_objective(np.add([u, v], e), r, sig2, gamma, eta)
                 - joint_objective(np.subtract([u, v], e), r, sig2, gamma, eta)) / (2 * h)
                for e in (np.array([h, 0]), np.array([0, h]))]
        assert np.linalg.norm(grad) <= 1e-6

    def test_monotone_in_residual(self):
        rs = np.linspace(-5, 5, 101)
        vs = [point(r, 0.5, 0.3, 0.8)[1] for r in rs]
        assert np.all(np.diff(vs) <= 0)
        assert min(vs) >= 0


class TestPredictFrontier:
    def test_zero_and_ones(self):
        spec = SplineSpec((0.0, 0.3, 1.0), 3)
        grid = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(predict_frontier(spec, np.zeros(spec.dim), grid), 0.0)
        np.testing.assert_allclose(predict_frontier(spec, np.ones(spec.dim), grid), 1.0, atol=1e-14)

    def test_linear_interpolant(self):
        spec = SplineSpec((0.0, 1.0), 1)
        # coefficients of a hat basis equal the endpoint values
        np.testing.assert_allclose(predict_frontier(spec, [2.0, 5.0], [0.0, 0.25, 1.0]),
                                   [2.0, 2.75, 5.0])
