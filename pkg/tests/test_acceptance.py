"""Acceptance criteria, each at its stated tolerance.

Every test appends one ``AC<k> PASS|FAIL ...`` line to ``REPORT``; the
conftest terminal-summary hook prints them at the end of the run. Run alone
with ``pytest tests/test_acceptance.py -v``.
"""
import os

import cvxpy as cp
import mpmath
import numpy as np
import pytest

from sfma.baselines import cnls_fit, dea_frontier, stoned_mom, stoned_psl
from sfma.cli_io import RunConfig, load_dataset, run_fit, write_dataset
from sfma.inefficiency import estimate_inefficiencies
from sfma.likelihood import (
    Dataset,
    LikelihoodContext,
    Params,
    grad_beta,
    hess_beta,
    nll_terms,
    objective,
    partials_gamma_eta,
)
from sfma.model import FrontierModel
from sfma.simbench import METHODS, SimSpec, generate_sim, run_monte_carlo
from sfma.solvers import bcd_fit, ipm_solve
from sfma.special import ln_erfc
from sfma.splines import design_matrix, shape_constraints
from sfma.trimming import TrimConfig, project_capped_simplex, trimmed_fit

from conftest import active_set_qp, capped_simplex_oracle, central_diff, quadrature_nll, random_instance

REPORT = []
MC_REPLICATIONS = 20
MC_SEED = 0


def record(label, checks, info=()):
    """Store one verdict line for ``label``; ``checks`` is [(ok, text), ...]."""
    ok = all(c for c, _ in checks)
    parts = "; ".join(f"{'ok' if c else 'FAILED'}: {t}" for c, t in checks)
    REPORT.append(f"{label} {'PASS' if ok else 'FAIL'}  {parts}")
    for line in info:
        REPORT.append(f"{label}   info: {line}")
    return ok, parts


def verdict(label, checks, info=()):
    ok, parts = record(label, checks, info)
    assert ok, parts


def model_setup(data):
    model = FrontierModel()
    spec = model.spline_spec(data.x)
    ctx = LikelihoodContext(design_matrix(spec, data.x))
    return ctx, shape_constraints(spec, model.shapes, model.grid_size)


def fd_first(f, x, h=1e-3):
    """Fourth-order central first difference."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def fd_second(f, x, h=1e-3):
    """Fourth-order central second difference (a 3-point stencil at h=1e-5 is
    dominated by round-off near the 1e-4 tolerance)."""
    return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)


# ---------------------------------------------------------------------------
# 1. Monte-Carlo reproduction


@pytest.fixture(scope="module")
def monte_carlo():
    return {sim: run_monte_carlo(SimSpec(sim, seed=MC_SEED), METHODS, MC_REPLICATIONS)
            for sim in (1, 2, 3, 4)}


@pytest.mark.slow
def test_ac1_monte_carlo(monte_carlo):
    med = {sim: {m: res.median(m) for m in METHODS} for sim, res in monte_carlo.items()}
    checks = [
        (med[1]["SFMA"] < 0.01, f"sim1 SFMA median RMSE {med[1]['SFMA']:.4g} < 0.01"),
        (monte_carlo[1].elapsed < 300, f"sim1 runtime {monte_carlo[1].elapsed:.0f}s < 300s"),
        (med[2]["SFMA"] < 0.02, f"sim2 SFMA {med[2]['SFMA']:.4g} < 0.02"),
        (med[2]["SFMA"] < med[2]["StoNED-QLE"],
         f"sim2 SFMA {med[2]['SFMA']:.4g} < StoNED-QLE {med[2]['StoNED-QLE']:.4g}"),
        (med[3]["SFMA"] < 0.01, f"sim3 SFMA {med[3]['SFMA']:.4g} < 0.01"),
        (med[3]["SFMA"] < med[3]["SFA"], f"sim3 SFMA {med[3]['SFMA']:.4g} < SFA {med[3]['SFA']:.4g}"),
        (med[4]["R-SFMA"] < 0.01, f"sim4 R-SFMA {med[4]['R-SFMA']:.4g} < 0.01"),
        (med[4]["R-SFMA"] < 0.1 * med[4]["SFMA"],
         f"sim4 R-SFMA {med[4]['R-SFMA']:.4g} < 0.1 x SFMA {med[4]['SFMA']:.4g}"),
        (med[4]["DEA"] > 1, f"sim4 DEA {med[4]['DEA']:.4g} > 1"),
    ]
    info = []
    for sim, res in monte_carlo.items():
        cells = ", ".join(
            f"{m} {res.median(m):.4g}/{res.median(m) ** 2:.4g}"
            + (f" ({res.failures(m)} failed)" if res.failures(m) else "")
            for m in METHODS)
        info.append(f"sim{sim} median RMSE/MSE over {MC_REPLICATIONS} reps: {cells}")
    # same thresholds read as mean squared error (diagnostic only, not the verdict)
    sq = {sim: {m: v ** 2 for m, v in row.items()} for sim, row in med.items()}
    as_mse = [sq[1]["SFMA"] < 0.01, sq[2]["SFMA"] < 0.02, sq[3]["SFMA"] < 0.01, sq[4]["R-SFMA"] < 0.01,
              sq[4]["R-SFMA"] < 0.1 * sq[4]["SFMA"], sq[4]["DEA"] > 1]
    info.append(f"threshold checks evaluated on MSE instead of RMSE: {sum(as_mse)}/{len(as_mse)} hold")
    verdict("AC1", checks, info)


# ---------------------------------------------------------------------------
# 2-3. Likelihood and derivatives


def test_ac2_likelihood_quadrature():
    rng = np.random.default_rng(2)
    offsets = []
    for _ in range(100):
        n = 2
        r = rng.uniform(-3, 3, n)
        se = rng.uniform(0.3, 1.5, n)
        gamma, eta = rng.uniform(0.2, 2.0, 2)
        ctx = LikelihoodContext(np.eye(n))
        data = Dataset(r, np.zeros(n), se)
        ours = nll_terms(ctx, data, Params(np.zeros(n), gamma, eta)).sum()
        quad = sum(quadrature_nll(ri, si ** 2, gamma, eta) for ri, si in zip(r, se))
        offsets.append(quad - ours)
    offsets = np.array(offsets)
    spread = offsets.max() - offsets.min()
    const = 2 * 0.5 * np.log(2 * np.pi)
    verdict("AC2", [
        (spread <= 1e-6, f"constant offset spread {spread:.2e} <= 1e-6 over 100 instances"),
        (abs(offsets.mean() - const) <= 1e-6, f"offset {offsets.mean():.10f} = n ln(2 pi)/2"),
    ])


def test_ac3_derivatives():
    rng = np.random.default_rng(3)
    worst = dict(grad=0.0, hess=0.0, partial=0.0)
    for _ in range(100):
        ctx, data, params = random_instance(rng)
        f = lambda b: objective(ctx, data, params.replace(beta=b))
        g = grad_beta(ctx, data, params)
        fd = central_diff(f, params.beta)
        worst["grad"] = max(worst["grad"], np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-2)))
        H = hess_beta(ctx, data, params)
        fdH = np.array([central_diff(lambda b: grad_beta(ctx, data, params.replace(beta=b))[j], params.beta)
                        for j in range(params.beta.size)])
        worst["hess"] = max(worst["hess"], np.max(np.abs(H - fdH)) / np.max(np.abs(fdH)))
        dg, de, hg, he = partials_gamma_eta(ctx, data, params)
        fg = lambda t: objective(ctx, data, params.replace(gamma=t))
        fe = lambda t: objective(ctx, data, params.replace(eta=t))
        pairs = [
            (dg, fd_first(fg, params.gamma)),
            (de, fd_first(fe, params.eta)),
            (hg, fd_second(fg, params.gamma)),
            (he, fd_second(fe, params.eta)),
        ]
        for exact, approx in pairs:
            worst["partial"] = max(worst["partial"], abs(exact - approx) / max(abs(approx), 1e-1))
    verdict("AC3", [
        (worst["grad"] <= 1e-5, f"grad_beta rel err {worst['grad']:.1e} <= 1e-5"),
        (worst["hess"] <= 1e-4, f"hess_beta rel err {worst['hess']:.1e} <= 1e-4"),
        (worst["partial"] <= 1e-4, f"gamma/eta partials rel err {worst['partial']:.1e} <= 1e-4"),
    ])


# ---------------------------------------------------------------------------
# 4. ln erfc


def test_ac4_ln_erfc():
    mpmath.mp.dps = 50
    oracle = lambda x: float(mpmath.log(mpmath.erfc(mpmath.mpf(x))))
    lo = np.linspace(-10, 25, 701)
    rel = max(abs(ln_erfc(x) - oracle(x)) / max(abs(oracle(x)), 1e-300) for x in lo if oracle(x) != 0)
    hi = np.linspace(25, 1000, 400)
    absolute = max(abs(ln_erfc(x) - oracle(x)) for x in hi)
    grid = np.linspace(-20, 1000, 40001)
    vals = ln_erfc(grid)
    steps = np.diff(vals)
    strict = grid[:-1] >= -5
    second = np.diff(vals, 2)
    verdict("AC4", [
        (rel <= 1e-12, f"rel err {rel:.1e} <= 1e-12 on [-10, 25]"),
        (absolute <= 1e-6, f"abs err {absolute:.1e} <= 1e-6 on [25, 1000]"),
        (bool(np.all(np.isfinite(vals))), "finite on [-20, 1000]"),
        (bool(np.all(steps <= 0) and np.all(steps[strict] < 0)),
         "non-increasing on [-20, 1000], strictly decreasing on [-5, 1000]"),
        (second.max() <= 1e-8, f"max second difference {second.max():.1e} <= 1e-8"),
    ])


# ---------------------------------------------------------------------------
# 5-6. Solvers


def test_ac5_ipm():
    rng = np.random.default_rng(5)
    worst_x, worst_kkt = 0.0, 0.0
    for _ in range(50):
        k, m = rng.integers(1, 11), rng.integers(1, 16)
        A = rng.normal(size=(k, k))
        H = A @ A.T + 0.5 * np.eye(k)
        g = rng.normal(size=k) * 3
        C = rng.normal(size=(m, k))
        c = rng.uniform(0.1, 1.0, m)
        state = ipm_solve(lambda x: (0.5 * x @ H @ x + g @ x, H @ x + g, H), C, c, np.zeros(k),
                          return_state=True)
        worst_x = max(worst_x, np.max(np.abs(state.x - active_set_qp(H, g, C, c))))
        worst_kkt = max(worst_kkt, state.residual)
    verdict("AC5", [
        (worst_x <= 1e-6, f"max |x - oracle| {worst_x:.1e} <= 1e-6 on 50 QPs"),
        (worst_kkt <= 1e-8, f"max KKT residual {worst_kkt:.1e} <= 1e-8"),
    ])


def test_ac6_bcd_monotone():
    checks = []
    for sim in (1, 2, 3, 4):
        data = generate_sim(SimSpec(sim, seed=6)).dataset
        ctx, cons = model_setup(data)
        rise = np.max(np.diff(bcd_fit(data, ctx, cons).trace), initial=-np.inf)
        checks.append((rise <= 1e-10, f"sim{sim} max trace increase {rise:.1e} <= 1e-10"))
    verdict("AC6", checks)


# ---------------------------------------------------------------------------
# 7-8. Trimming


def test_ac7_projection():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        v = rng.normal(scale=rng.uniform(0.1, 5), size=n)
        h = rng.uniform(0.1, n)
        worst = max(worst, np.max(np.abs(project_capped_simplex(v, h) - capped_simplex_oracle(v, h))))
    ones = all(np.array_equal(project_capped_simplex(rng.normal(size=n), n), np.ones(n)) for n in (1, 5, 40))
    verdict("AC7", [
        (worst <= 1e-8, f"max deviation from oracle {worst:.1e} <= 1e-8 on 1000 instances"),
        (ones, "h = n returns all ones"),
    ])


def test_ac8_trimming():
    data = generate_sim(SimSpec(1, seed=8)).dataset
    ctx, cons = model_setup(data)
    plain = bcd_fit(data, ctx, cons)
    full = trimmed_fit(data, ctx, cons, trim=TrimConfig(data.n))
    gap = max(np.max(np.abs(full.params.beta - plain.params.beta)),
              abs(full.params.gamma - plain.params.gamma), abs(full.params.eta - plain.params.eta))
    caught = total = 0
    for seed in range(20):
        draw = generate_sim(SimSpec(4, seed=seed))
        ctx4, cons4 = model_setup(draw.dataset)
        res = trimmed_fit(draw.dataset, ctx4, cons4, trim=TrimConfig(0.875))
        caught += int(np.sum(res.weights[draw.outlier_mask] == 0))
        total += int(draw.outlier_mask.sum())
    verdict("AC8", [
        (gap <= 1e-10, f"h = n vs plain fit max param gap {gap:.1e}"),
        (caught >= 0.9 * total, f"sim4 outliers with weight 0: {caught}/{total} over 20 seeds (>= 90%)"),
    ])


# ---------------------------------------------------------------------------
# 9. Inefficiency


def test_ac9_inefficiency():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        r = rng.uniform(-4, 4)
        sig2, gamma, eta = rng.uniform(0.1, 3.0, 3)
        ctx = LikelihoodContext(np.ones((1, 1)))
        u, v = estimate_inefficiencies(Dataset([r], [0.0], [np.sqrt(sig2)]), ctx, Params([0.0], gamma, eta))
        # (r - u + v)^2/2s + u^2/2g + v^2/2e as a QP in z = (u, v) with v >= 0
        H = np.array([[1 / sig2 + 1 / gamma, -1 / sig2], [-1 / sig2, 1 / sig2 + 1 / eta]])
        g = np.array([-r / sig2, r / sig2])
        num = active_set_qp(H, g, np.array([[0.0, -1.0]]), np.zeros(1))
        worst = max(worst, abs(u[0] - num[0]), abs(v[0] - num[1]))
    verdict("AC9", [(worst <= 1e-8, f"max deviation from numeric QP minimizer {worst:.1e} <= 1e-8")])


# ---------------------------------------------------------------------------
# 10. Baselines


def test_ac10_baselines():
    checks = []
    for sim in (1, 2, 3, 4):
        data = generate_sim(SimSpec(sim, seed=10)).dataset
        f = dea_frontier(data)
        vals = f(np.linspace(data.x.min(), data.x.max(), 500))
        ok = (np.all(f(data.x) >= data.y - 1e-9) and np.all(np.diff(vals) >= -1e-9)
              and np.all(np.diff(vals, 2) <= 1e-9))
        checks.append((bool(ok), f"DEA invariants sim{sim}"))

    rng = np.random.default_rng(10)
    x = np.sort(rng.uniform(0, 1, 30))
    y = np.log(x + 0.2) + rng.normal(0, 0.2, 30)
    fit = cnls_fit(Dataset(y, x))
    a, b = cp.Variable(30), cp.Variable(30)
    cons = [b >= 0] + [a[i] + b[i] * x[i] <= a + b * x[i] for i in range(30)]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(y - a - cp.multiply(b, x))), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    gap = abs(fit.residuals @ fit.residuals - prob.value)
    checks.append((gap <= 1e-5, f"CNLS n=30 objective gap {gap:.1e} <= 1e-5"))

    e = rng.normal(0, 0.5, 100_000) - np.abs(rng.normal(0, 1.0, 100_000))
    for name, split in (("MoM", stoned_mom(e)), ("PSL", stoned_psl(e))):
        err = max(abs(split.sigma_u - 1.0), abs(split.sigma_v - 0.5) / 0.5)
        checks.append((err <= 0.1, f"{name} (su, sv) = ({split.sigma_u:.3f}, {split.sigma_v:.3f}) vs (1, 0.5)"))
    verdict("AC10", checks)


# ---------------------------------------------------------------------------
# 11. CLI determinism


def test_ac11_cli(tmp_path):
    draw = generate_sim(SimSpec(3, seed=11))
    path = str(tmp_path / "sim3.csv")
    write_dataset(path, draw.dataset)
    back = load_dataset(path)
    rt = max(np.max(np.abs(getattr(back, k) - getattr(draw.dataset, k))) for k in ("y", "x", "se"))
    outputs = []
    for k in range(2):
        out = str(tmp_path / f"run{k}")
        run_fit(RunConfig(input_path=path, output_dir=out, seed=11))
        outputs.append({n: open(os.path.join(out, n), "rb").read()
                        for n in ("frontier.csv", "points.csv", "params.json")})
    verdict("AC11", [
        (outputs[0] == outputs[1], "identical config + seed gives byte-identical outputs"),
        (rt <= 1e-12, f"write/read round trip max deviation {rt:.1e} <= 1e-12"),
    ])
