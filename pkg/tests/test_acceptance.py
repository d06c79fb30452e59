"""End-to-end acceptance criteria; each test records one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import random_tiny_problem, record_acceptance, tiny_problem
from coupled_nls.cli import main as cli_main
from coupled_nls.functionals import FunctionalContext
from coupled_nls.grid import GridMode, GridSpec, build_grid
from coupled_nls.model import (PotentialSet, PowerSum, ProblemSpec, QuarticCoupled, benchmark_problem,
                               check_hypotheses, eval_calW, quadratic_nonlinearity)
from coupled_nls.pencil import minmax_oracle, solve_pencil
from coupled_nls.solver import SolverConfig, find_critical_point
from coupled_nls.verify import brute_force_solution_check, fd_gradient_check, monotonicity_suite

pytestmark = pytest.mark.acceptance


def _bench(R=12.0, n=400):
    return build_grid(GridSpec(3, R, n, GridMode.RADIAL))


@pytest.fixture(scope="module")
def mu():
    return solve_pencil(FunctionalContext.from_problem(benchmark_problem(_bench())), 10).mus


@pytest.fixture(scope="module")
def runs(mu):
    """Accepted benchmark runs keyed by (R, n, label), each with its wall time."""
    cache = {}

    def get(label, R=12.0, n=400):
        key = (R, n, label)
        if key not in cache:
            lam = {"zero": 0.0, "half_mu1": 0.5 * mu[0], "mid_mu12": 0.5 * (mu[0] + mu[1])}[label]
            t0 = time.perf_counter()
            cp = find_critical_point(benchmark_problem(_bench(R, n), lam=lam), SolverConfig())
            cache[key] = (cp, time.perf_counter() - t0)
        return cache[key]

    return get


def test_criterion_01_gradient_consistency():
    ctx = FunctionalContext.from_problem(benchmark_problem(_bench(n=200)))
    t0 = time.perf_counter()
    err = fd_gradient_check(ctx, 1000)
    dt = time.perf_counter() - t0
    ok = err <= 1e-6 and dt < 30
    record_acceptance(1, ok, f"max rel err {err:.2e} (<= 1e-6), {dt:.1f}s (< 30s)")
    assert ok


def test_criterion_02_pencil_oracles():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_oracle = worst_dense = 0.0
    instances = 0
    while instances < 20:
        ctx = FunctionalContext.from_problem(random_tiny_problem(rng))
        seq = solve_pencil(ctx, 3)
        if seq.mus.size < 3:
            continue
        instances += 1
        nus = sla.eigh(ctx.B.toarray(), ctx.A.toarray(), eigvals_only=True)
        ref = np.sort(1.0 / nus[nus > 1e-10 * np.abs(nus).max()])[:3]
        worst_dense = max(worst_dense, float(np.max(np.abs(seq.mus - ref) / ref)))
        for k in range(3):
            val = minmax_oracle(ctx, k + 1, n_starts=4, seed=instances)
            worst_oracle = max(worst_oracle, abs(val - seq.mus[k]) / seq.mus[k])
    dt = time.perf_counter() - t0
    ok = worst_oracle <= 1e-6 and worst_dense <= 1e-10 and dt < 60
    record_acceptance(2, ok, f"{instances} instances: min-max gap {worst_oracle:.1e}, dense gap {worst_dense:.1e}, "
                             f"{dt:.1f}s")
    assert ok


def test_criterion_03_monotonicity_inequality():
    ctx = FunctionalContext.from_problem(benchmark_problem(_bench(n=200)))
    slack = monotonicity_suite(ctx, 1000)
    ok = slack >= -1e-10
    record_acceptance(3, ok, f"min slack {slack:.2e} over 1000 pairs (>= -1e-10)")
    assert ok


def test_criterion_04_calW_floor():
    rng = np.random.default_rng(4)
    grid = _bench(n=200)
    families = {
        "quartic_coupled": QuarticCoupled(theta=1.0),
        "power_sum": PowerSum(rng.uniform(0.5, 2.0, grid.size), rng.uniform(0.5, 2.0, grid.size), 3.0, 5.0, 1.0),
    }
    worst = np.inf
    for nl in families.values():
        idx = rng.integers(0, grid.size, 10_000)
        rad = 10 ** rng.uniform(-6, 3, 10_000)
        ang = rng.uniform(0, 2 * np.pi, 10_000)
        for i, r, a in zip(idx, rad, ang):
            worst = min(worst, eval_calW(nl, int(i), (r * np.cos(a), r * np.sin(a))))
    ok = worst >= -1e-12
    record_acceptance(4, ok, f"min calW {worst:.2e} over 2x10^4 samples (>= -1e-12)")
    assert ok


@pytest.mark.parametrize("label", ["zero", "half_mu1"])
def test_criterion_05_mountain_pass(runs, label):
    cp, dt = runs(label)
    ok = cp.residual <= 1e-8 and cp.level > 0 and dt < 120 and cp.m == 0
    if label != "zero":
        ok = ok and min(cp.component_norms) > 1e-6
    record_acceptance(5, ok, f"lambda={cp.lam:.6g}: residual {cp.residual:.1e}, level {cp.level:.8g}, "
                             f"norms ({cp.component_norms[0]:.4g}, {cp.component_norms[1]:.4g}), {dt:.1f}s")
    assert ok


def test_criterion_06_linking(runs):
    cp, dt = runs("mid_mu12")
    frozen = cp.diagnostics.get("frozen_max", np.inf)
    ok = cp.m == 1 and cp.residual <= 1e-8 and cp.level >= cp.alpha * (1 - 1e-2) and frozen <= 1e-10
    record_acceptance(6, ok, f"lambda={cp.lam:.6g} m={cp.m} via {cp.method}: residual {cp.residual:.1e}, "
                             f"level {cp.level:.6g} >= alpha {cp.alpha:.6g}, frozen max {frozen:.1e}, {dt:.1f}s")
    assert ok


def test_criterion_07_linking_sandwich(runs):
    details, ok = [], True
    for label in ("zero", "half_mu1", "mid_mu12"):
        cp, _ = runs(label)
        sw = cp.diagnostics["sandwich"]
        good = sw["holds"] and sw["n_boundary"] >= 200 and sw["n_sphere"] >= 200 and sw["inf_sphere"] <= cp.level
        ok = ok and good
        details.append(f"{sw['sup_boundary']:.3g} < {sw['inf_sphere']:.4g} <= {cp.level:.4g}")
    record_acceptance(7, ok, "; ".join(details))
    assert ok


def test_criterion_08_mesh_stability(runs):
    details, ok = [], True
    for label in ("zero", "half_mu1"):
        base = runs(label)[0].level
        coarse = runs(label, n=200)[0].level
        wide = runs(label, R=16.0)[0].level
        gaps = abs(coarse - base) / base, abs(wide - base) / base
        ok = ok and max(gaps) <= 0.02
        details.append(f"{label}: n200 vs n400 {gaps[0]:.2%}, R16 vs R12 {gaps[1]:.2%}")
    record_acceptance(8, ok, "; ".join(details))
    assert ok


def test_criterion_09_brute_force():
    prob = tiny_problem(lam=0.4)
    ctx = FunctionalContext.from_problem(prob)
    cp = find_critical_point(prob, SolverConfig(probe_count=64))
    res = brute_force_solution_check(ctx, 0.4, cp.state)
    ok = 2 * ctx.n <= 12 and res.matched and res.level_gap <= 1e-8
    record_acceptance(9, ok, f"{2 * ctx.n} unknowns, {len(res.points)} critical points enumerated, "
                             f"distance {res.distance:.1e}, level gap {res.level_gap:.1e}")
    assert ok


def test_criterion_10_negative_controls(tmp_path):
    grid = _bench(n=100)
    pots = benchmark_problem(grid).potentials
    quad = check_hypotheses(ProblemSpec(grid, pots, quadratic_nonlinearity()))
    negV = check_hypotheses(ProblemSpec(grid, PotentialSet.sample(grid, 1.0, 1.0, -1.0, -1.0, 0.0), QuarticCoupled()))
    cfg = tmp_path / "neg.json"
    cfg.write_text(json.dumps({"problem": {"preset": "quartic_coupled", "grid": {"n_nodes": 100},
                                           "potentials": {"V1": -1, "V2": -1, "gamma": 0}}}))
    rc = cli_main(["spectrum", "--config", str(cfg), "--out", str(tmp_path)])
    flag = json.loads((tmp_path / "spectrum.json").read_text())["flags"]["positive_V_fails"]
    ok = not quad["W2"].passed and not negV["positive_V"].passed and rc == 0 and flag is True
    record_acceptance(10, ok, f"W=|z|^2 fails W2: {not quad['W2'].passed}; V<=0 fails positive-V: "
                              f"{not negV['positive_V'].passed}; spectrum flag: {flag}")
    assert ok


def test_criterion_11_sign_normalization():
    rng = np.random.default_rng(11)
    grid = _bench(n=200)
    prob = benchmark_problem(grid)
    a = FunctionalContext.from_problem(prob)
    b = FunctionalContext.from_problem(ProblemSpec(grid, prob.potentials.negated(), prob.nonlinearity))
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal(2 * a.n) * rng.lognormal()
        lam = rng.uniform(-5, 5)
        pa, pb = a.psi(x, lam), b.psi(x, -lam)
        worst = max(worst, abs(pa - pb) / max(1.0, abs(pa)))
    ok = worst <= 1e-12
    record_acceptance(11, ok, f"max relative Psi gap {worst:.1e} over 100 states (<= 1e-12)")
    assert ok
