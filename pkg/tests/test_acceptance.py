"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL (...)`` line, repeated in
the terminal summary.
"""

from __future__ import annotations

import subprocess
import time

import numpy as np
import pytest
from scipy import stats

import oracles
from conftest import record
from calibound.concentration import bernstein_bound
from calibound.core import ScoredDataset
from calibound.crossfit import CrossfitConfig, _fold_indices, certify_crossfit
from calibound.nw import envelope_R
from calibound.perturbation import (
    PerturbSpec,
    derivative_bounds,
    perturb_scores,
    perturbed_eta_discrete,
    sech_cdf,
    sech_normalizer,
)
from calibound.synth import default_method_params, make_eta, rate_sweep, sample_synthetic, true_ce
from calibound.tv import ptb, tv_denoise, tv_kkt_residual, tv_lambda, tv_objective, tvb

N_GRID = [10**4, 3 * 10**4, 10**5, 3 * 10**5, 10**6]
PERTURB_H = 2.0**-6


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size))


def test_criterion_1_formula_oracles():
    rng = np.random.default_rng(2024)
    m = 50
    n = [int(v) for v in np.round(_log_uniform(rng, 2, 1e7, m))]
    d = _log_uniform(rng, 1e-6, 0.5, (m, 2)).tolist()
    var = rng.uniform(0, 0.25, m).tolist()
    V = rng.uniform(0, 10, (m, 2)).tolist()
    s0 = rng.uniform(0, 1, m).tolist()
    h = _log_uniform(rng, 2.0**-6, 4.0, m).tolist()
    b = _log_uniform(rng, 1e-2, 1e4, (m, 2)).tolist()
    hs = _log_uniform(rng, 1e-4, 0.25, m).tolist()

    start = time.perf_counter()
    got = {
        "bernstein_bound": [bernstein_bound(n[i], d[i][0], var[i]) for i in range(m)],
        "tv_lambda": [tv_lambda(n[i], d[i][0]) for i in range(m)],
        "tvb": [tvb(n[i], d[i][0], V[i][0]) for i in range(m)],
        "ptb": [ptb(V[i][0], V[i][1], n[i], d[i][0], d[i][1]) for i in range(m)],
        "sech_normalizer": [sech_normalizer(s0[i], h[i]) for i in range(m)],
        "derivative_bounds": [(db.b1, db.b2) for db in (derivative_bounds(x) for x in h)],
        "envelope_R": [envelope_R(b[i][0], b[i][1], hs[i]) for i in range(m)],
    }
    elapsed = time.perf_counter() - start
    want = {
        "bernstein_bound": [oracles.bernstein(n[i], d[i][0], var[i]) for i in range(m)],
        "tv_lambda": [oracles.tv_lambda(n[i], d[i][0]) for i in range(m)],
        "tvb": [oracles.tvb(n[i], d[i][0], V[i][0]) for i in range(m)],
        "ptb": [oracles.ptb(V[i][0], V[i][1], n[i], d[i][0], d[i][1]) for i in range(m)],
        "sech_normalizer": [oracles.sech_mass(s0[i], h[i]) for i in range(m)],
        "derivative_bounds": [oracles.derivative_bounds(h[i]) for i in range(m)],
        "envelope_R": [oracles.envelope(b[i][0], b[i][1], hs[i]) for i in range(m)],
    }
    worst = 0.0
    for name in got:
        g = np.asarray(got[name], dtype=float)
        w = np.asarray(want[name], dtype=float)
        worst = max(worst, float(np.max(np.abs(g - w) / np.abs(w))))
    ok = worst <= 1e-10 and elapsed < 1.0
    record(1, ok, f"max rel err {worst:.2e} over 7 formulas x {m} points, {elapsed:.3f} s")
    assert ok


def test_criterion_2_tv_solver_exactness():
    rng = np.random.default_rng(7)
    worst_gap = worst_kkt = 0.0
    solve_time = 0.0
    start = time.perf_counter()
    for k in range(500):
        n = int(rng.integers(1, 13))
        y = rng.integers(0, 2, n).astype(float) if k % 2 else rng.random(n)
        lam = float(_log_uniform(rng, 1e-3, 1.0, 1)[0])
        t = time.perf_counter()
        fit = tv_denoise(y, lam)
        solve_time += time.perf_counter() - t
        _, best = oracles.tv_bruteforce(y, lam)
        worst_gap = max(worst_gap, abs(tv_objective(y, fit.values, lam) - best))
        worst_kkt = max(worst_kkt, tv_kkt_residual(y, fit.values, lam))
    total = time.perf_counter() - start
    ok = worst_gap <= 1e-8 and worst_kkt < 1e-8 and total < 30.0
    record(2, ok, f"500 instances, max objective gap {worst_gap:.1e}, max KKT {worst_kkt:.1e}, "
                  f"solver {solve_time:.3f} s, total with brute force {total:.1f} s")
    assert ok


def test_criterion_3_sampler_ks():
    grid = [(s0, h) for s0 in (0.0, 0.25, 0.5, 1.0) for h in (2.0**-6, 2.0**-3, 1.0)]
    start = time.perf_counter()
    worst = 0.0
    for k, (s0, h) in enumerate(grid):
        x = perturb_scores(np.full(10**5, s0), PerturbSpec(h, seed=500 + k))
        worst = max(worst, stats.kstest(x, lambda s: sech_cdf(s, s0, h)).statistic)
    elapsed = time.perf_counter() - start
    ok = worst < 0.01 and elapsed < 10.0
    record(3, ok, f"max KS distance {worst:.4f} over {len(grid)} (s_orig, h) cells, {elapsed:.2f} s")
    assert ok


def test_criterion_4_perturbed_derivative_bounds():
    rng = np.random.default_rng(11)
    x = np.linspace(0.0, 1.0, 1000)
    dx = x[1] - x[0]
    start = time.perf_counter()
    worst1 = worst2 = 0.0
    for _ in range(10):
        k = int(rng.integers(1, 9))
        support = np.sort(rng.random(k))
        mass = rng.dirichlet(np.ones(k))
        eta0 = rng.random(k)
        h = float(rng.choice([1 / 64, 1 / 16, 1 / 4, 1.0]))
        e = perturbed_eta_discrete(x, support, mass, eta0, h)
        db = derivative_bounds(h)
        worst1 = max(worst1, np.abs(np.gradient(e, dx)).max() / db.b1)
        worst2 = max(worst2, np.abs(np.diff(e, 2) / dx**2).max() / db.b2)
    elapsed = time.perf_counter() - start
    ok = worst1 <= 1 + 1e-3 and worst2 <= 1 + 1e-3 and elapsed < 60.0
    record(4, ok, f"max |eta'|/b1 = {worst1:.3f}, max |eta''|/b2 = {worst2:.3f}, {elapsed:.2f} s")
    assert ok


COVERAGE_PLAN = {
    "tv": ["identity", "offset", "smooth-wiggle", "step", "high-frequency",
           "perturbed-step", "perturbed-offset"],
    "nw": ["identity", "smooth-wiggle", "high-frequency", "perturbed-step", "perturbed-offset"],
    "lipschitz": ["identity", "offset", "smooth-wiggle", "high-frequency",
                  "perturbed-step", "perturbed-offset"],
}


def _family(tag):
    if tag.startswith("perturbed-"):
        return make_eta(tag.removeprefix("perturbed-"), perturb_h=PERTURB_H)
    return make_eta(tag)


@pytest.mark.slow
def test_criterion_5_coverage():
    start = time.perf_counter()
    families = {tag: _family(tag) for tags in COVERAGE_PLAN.values() for tag in tags}
    oracle_ce = {tag: true_ce(f) for tag, f in families.items()}
    params = {tag: default_method_params(f) for tag, f in families.items()}
    rates = {}
    for method, tags in COVERAGE_PLAN.items():
        for tag in tags:
            hits = 0
            for trial in range(200):
                data = sample_synthetic(families[tag], "uniform", 10**4, seed=trial)
                cfg = CrossfitConfig(method, delta=0.1, seed=trial, params=params[tag][method])
                hits += certify_crossfit(data, cfg).bound >= oracle_ce[tag]
            rates[(method, tag)] = hits / 200
    elapsed = time.perf_counter() - start
    worst = min(rates, key=rates.get)
    ok = rates[worst] >= 0.88 and elapsed < 600.0
    record(5, ok, f"{len(rates)} cells, lowest coverage {rates[worst]:.3f} ({worst[0]} on {worst[1]}), "
                  f"{elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_6_rates():
    start = time.perf_counter()
    table = rate_sweep(make_eta("smooth-wiggle"), ["nw", "tv", "lipschitz"], N_GRID, repeats=16)
    elapsed = time.perf_counter() - start
    windows = {"nw": (-0.55, -0.10), "tv": (-0.57, -0.05), "lipschitz": (-0.72, -0.20)}
    in_window = all(lo <= table.slopes[m] <= hi for m, (lo, hi) in windows.items())
    final = {m: table.gap(m, N_GRID[-1]) for m in windows}
    nw_best = final["nw"] == min(final.values())
    ok = in_window and nw_best and elapsed < 600.0
    slopes = ", ".join(f"{m} {table.slopes[m]:.3f}" for m in windows)
    gaps = ", ".join(f"{m} {final[m]:.4f}" for m in windows)
    record(6, ok, f"slopes {slopes}; gaps at 1e6 {gaps}; {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_7_ece_failure():
    table = rate_sweep(make_eta("high-frequency"), ["nw", "ece"], N_GRID, repeats=16)
    ece_gaps = [r.mean_gap for r in table.rows["ece"]]
    non_monotone = any(b > a for a, b in zip(ece_gaps, ece_gaps[1:]))
    ratio = table.gap("ece", N_GRID[-1]) / table.gap("nw", N_GRID[-1])
    ok = non_monotone and ratio >= 3.0
    record(7, ok, f"ECE gaps {[round(g, 4) for g in ece_gaps]}, ECE/NW gap ratio at 1e6 {ratio:.2f}")
    assert ok


def _pipeline(tmp, method, extra):
    data, pert = tmp / "data.csv", tmp / "pert.csv"
    subprocess.run(["calibound", "synth", "--family", "smooth-wiggle", "--n", "6000", "--seed", "13",
                    "--out", str(data)], check=True)
    subprocess.run(["calibound", "perturb", "--input", str(data), "--h", "0.0625", "--seed", "5",
                    "--out", str(pert)], check=True)
    res = subprocess.run(["calibound", "certify", "--input", str(pert), "--method", method,
                          "--seed", "3"] + extra, check=True, capture_output=True)
    return data.read_bytes() + pert.read_bytes() + res.stdout


def test_criterion_8_no_leakage_and_determinism(tmp_path):
    rng = np.random.default_rng(8)
    disjoint = 0
    for _ in range(100):
        n = int(rng.integers(20, 50_000))
        K = int(rng.integers(2, 11))
        cfg = CrossfitConfig("tv", K=K, seed=int(rng.integers(2**63)), subsample=bool(rng.integers(2)))
        data = ScoredDataset(np.zeros(n), np.zeros(n, dtype=int))
        seen = []
        good = True
        for _, tr, va in _fold_indices(data, cfg):
            good &= np.intersect1d(tr, va).size == 0 and np.unique(va).size == va.size
            seen.append(va)
        allv = np.concatenate(seen)
        good &= np.unique(allv).size == allv.size
        disjoint += bool(good)
    identical = 0
    methods = [("tv", []), ("nw", ["--h", "0.0625"]), ("lipschitz", ["--h", "0.0625"])]
    for method, extra in methods:
        identical += _pipeline(tmp_path, method, extra) == _pipeline(tmp_path, method, extra)
    ok = disjoint == 100 and identical == len(methods)
    record(8, ok, f"disjoint folds in {disjoint}/100 configs, byte-identical pipeline JSON for "
                  f"{identical}/{len(methods)} methods")
    assert ok
