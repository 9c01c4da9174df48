"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The pipeline criteria (planted effect, holdout, coverage, determinism) share a
300-firm synthetic fixture that is run twice through the command line at the
default sampler settings.
"""
import filecmp
import os
import time
import warnings

import numpy as np
import pandas as pd
import pytest

from cfpanel.bsts import ModelSpec, PriorConfig, ffbs_states, fit_series, forecast_distribution
from cfpanel.cli import main
from cfpanel.diagnostics import adjust_pvalues, jarque_bera, reject
from cfpanel.effects import average_effect_pvalue, effect_estimates
from cfpanel.heterogeneity import heterogeneity_regression
from cfpanel.synth import (DgpSpec, export_fixture, generate_cross_section, generate_panel, kalman_oracle,
                           simulate_local_level, stepup_oracle)
from conftest import record_acceptance

FLEET_ITERATIONS = 2000


def _local_level_fleet(seed, n_firms=500, n_pre=20, horizon=2, trend_ratio=0.01):
    """Fit every firm of a null local-level fleet; return observed tails and forecasts."""
    spec = ModelSpec(horizon=horizon, n_iterations=FLEET_ITERATIONS, n_burn=500, n_predictive_draws=1000)
    out = []
    for child in np.random.SeedSequence(seed).spawn(n_firms):
        rng = np.random.default_rng(child)
        y, _, _ = simulate_local_level(n_pre + horizon, 1.0, trend_ratio, rng, level0=5.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            draws = fit_series(y[:n_pre], spec, PriorConfig(), rng=rng, keep_states=False)
        out.append((y[n_pre:], draws))
    return out


# ------------------------------------------------------------------ sampler

def test_ac01_ffbs_matches_exact_smoother():
    rng = np.random.default_rng(101)
    n_draws, worst, t0 = 2000, 0.0, time.perf_counter()
    ok = True
    for _ in range(50):
        T = int(rng.integers(2, 21))
        obs_var, trend_var = rng.uniform(0.05, 2.0, 2)
        y = np.cumsum(rng.normal(0, np.sqrt(trend_var), T)) + rng.normal(0, np.sqrt(obs_var), T)
        init_sd = float(rng.uniform(0.5, 3.0))
        pri = PriorConfig(init_trend_sd=init_sd)
        paths = np.array([ffbs_states(y, (obs_var, trend_var), ModelSpec(), pri, rng)[:, 0]
                          for _ in range(n_draws)])
        mean, var = kalman_oracle(y, obs_var, trend_var, a1=y[0], P1=init_sd ** 2)
        z = np.abs(paths.mean(0) - mean) / np.sqrt(var / n_draws)
        worst = max(worst, float(z.max()))
        ok &= bool(np.all(z < 4))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    record_acceptance(1, ok, f"max |mean gap| = {worst:.2f} MC SE over 50 instances (limit 4), {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def null_fleet():
    t0 = time.perf_counter()
    fleet = _local_level_fleet(seed=2024)
    return fleet, time.perf_counter() - t0


def test_ac02_one_step_band_coverage(null_fleet):
    fleet, elapsed = null_fleet
    inside = []
    for tail, draws in fleet:
        lo, hi = forecast_distribution(draws).intervals[0.95]
        inside.append(lo[0] <= tail[0] <= hi[0])
    cov = float(np.mean(inside))
    ok = abs(cov - 0.95) <= 0.03 and elapsed < 600
    record_acceptance(2, ok, f"h=1 95% band covers {cov:.3f} of 500 firms (target 0.95 +/- 0.03), "
                             f"fleet fit {elapsed:.1f}s")
    assert ok


def test_ac03_null_fleet_false_positives(null_fleet):
    fleet, _ = null_fleet
    sig, pvals = [], []
    for tail, draws in fleet:
        sig.append([e.significant for e in effect_estimates(tail, forecast_distribution(draws))])
        pvals.append(average_effect_pvalue(tail, draws.paths)[1])
    rate = np.mean(sig, axis=0)
    bh = float(np.mean(reject(pvals, 0.05)))
    ok = bool(np.all(np.abs(rate - 0.05) <= 0.03)) and bh <= 0.02
    record_acceptance(3, ok, f"per-firm significance {np.round(rate, 3).tolist()} by period "
                             f"(target 0.05 +/- 0.03); BH rejects {bh:.3f} (limit 0.02)")
    assert ok


# ---------------------------------------------------------------- pipeline

def _tree(root):
    return sorted(os.path.relpath(os.path.join(b, f), root) for b, _, fs in os.walk(root) for f in fs)


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    synth = generate_panel(DgpSpec(n_firms=300, effect=-0.05, seed=2024))
    paths = export_fixture(synth, str(base / "fixture"))
    runs, t0 = [], time.perf_counter()
    for name in ("run_a", "run_b"):
        d = base / name
        d.mkdir()
        cfg = d / "run.ini"
        cfg.write_text(f"[data]\npanel = {paths['panel']}\nelasticities = {paths['elasticities']}\n"
                       f"deflator = {paths['deflator']}\nfrequency = yearly\n\n"
                       f"[run]\noutdir = out\nseed = 11\n")
        code = main(["run", "--config", str(cfg)])
        runs.append((code, str(d / "out")))
    return runs, time.perf_counter() - t0, synth


def test_ac04_planted_markup_effect(pipeline_runs):
    code, out = pipeline_runs[0][0]
    summ = pd.read_csv(os.path.join(out, "effects", "summary.csv"))
    rows = summ[summ["fit_set"] == "markup__bsts"]
    pct = rows["effect_pct_of_counterfactual"].to_numpy()
    fan = pd.read_csv(os.path.join(out, "effects", "markup__bsts_fan_mean.csv"))
    exits = bool(np.all((fan["observed"] < fan["lo95"]) | (fan["observed"] > fan["hi95"])))
    ok = code == 0 and bool(np.all(np.abs(pct + 5.0) <= 1.5)) and exits
    record_acceptance(4, ok, f"sales-weighted effect {np.round(pct, 2).tolist()}% (target -5 +/- 1.5); "
                             f"observed outside 95% fan band in every treated year: {exits}")
    assert ok


def test_ac05_holdout_protocol(pipeline_runs):
    code, out = pipeline_runs[0][0]
    q = pd.read_csv(os.path.join(out, "diagnostics", "holdout_quality.csv"))
    me_ok = bool(np.all(np.abs(q["ME"]) <= 0.05))
    piv = q.pivot_table(index=["outcome", "year"], columns="estimator", values="RMSE")
    order_ok = bool(np.all(piv["llp_panel"] <= piv["llp_firm"]))
    ok = code == 0 and me_ok and order_ok and len(q) > 0
    record_acceptance(5, ok, f"max |ME| = {q['ME'].abs().max():.4f} (limit 0.05); panel LLP RMSE <= firm LLP "
                             f"RMSE in {int((piv['llp_panel'] <= piv['llp_firm']).sum())}/{len(piv)} "
                             f"outcome-years")
    assert ok


def test_ac06_fleet_coverage_fraction(pipeline_runs):
    code, out = pipeline_runs[0][0]
    cov = pd.read_csv(os.path.join(out, "diagnostics", "coverage.csv"))
    avg = cov["average"].to_numpy()
    ok = code == 0 and bool(np.all((avg >= 0.01) & (avg <= 0.09)))
    record_acceptance(6, ok, f"average coverage fraction {np.round(avg, 4).tolist()} "
                             f"for {cov['outcome'].tolist()} (band [0.01, 0.09])")
    assert ok


def test_ac10_reproducible_runs(pipeline_runs):
    runs, elapsed, _ = pipeline_runs
    (ca, a), (cb, b) = runs
    ta, tb = _tree(a), _tree(b)
    same = ta == tb and all(filecmp.cmp(os.path.join(a, f), os.path.join(b, f), shallow=False) for f in ta)
    ok = ca == cb == 0 and same and elapsed < 900
    record_acceptance(10, ok, f"two runs of {len(ta)} files byte-identical: {same}; "
                              f"total {elapsed:.0f}s (limit 900)")
    assert ok


# ------------------------------------------------------------ diagnostics

def _pvector(rng, m, q, kind):
    if kind == 0:
        return rng.uniform(size=m)
    if kind == 1:  # a block of signals among nulls
        return np.r_[rng.uniform(0, 1e-3, m // 4), rng.uniform(size=m - m // 4)]
    if kind == 2:  # coarse grid: ties
        return rng.integers(0, 41, m) / 40.0
    return rng.integers(1, m + 1, m) * q / m  # values exactly on the critical lines


def test_ac07_bh_matches_stepup_oracle():
    rng = np.random.default_rng(7)
    adj_bad = rej_bad = edge_bad = 0
    for i in range(1000):
        m, q = int(rng.integers(1, 201)), float(rng.choice([0.01, 0.05, 0.1, 0.2]))
        p = _pvector(rng, m, q, i % 3)
        want = stepup_oracle(p, q)
        adj_bad += frozenset(np.flatnonzero(adjust_pvalues(p) <= q).tolist()) != want
        rej_bad += frozenset(np.flatnonzero(reject(p, q)).tolist()) != want
    for _ in range(250):
        m, q = int(rng.integers(1, 201)), float(rng.choice([0.01, 0.05, 0.1, 0.2]))
        p = _pvector(rng, m, q, 3)
        edge_bad += frozenset(np.flatnonzero(reject(p, q)).tolist()) != stepup_oracle(p, q)
    ok = adj_bad == rej_bad == edge_bad == 0
    record_acceptance(7, ok, f"mismatches against the step-up oracle: adjusted p <= q {adj_bad}/1000, "
                             f"reject() {rej_bad}/1000, reject() on critical-line values {edge_bad}/250")
    assert ok


def test_ac08_jarque_bera_size():
    rng = np.random.default_rng(8)
    rate = float(np.mean([jarque_bera(rng.standard_normal(100)).p_value < 0.05 for _ in range(1000)]))
    ok = abs(rate - 0.05) <= 0.02
    record_acceptance(8, ok, f"rejection rate {rate:.3f} at n=100 (target 0.05 +/- 0.02)")
    assert ok


def test_ac09_tenure_coefficient():
    rep = heterogeneity_regression(generate_cross_section(2000, seed=9))
    b, se = rep.coef["stock_tenure"], rep.se["stock_tenure"]
    ok = abs(b - 0.003) <= 2 * se
    record_acceptance(9, ok, f"tenure coefficient {b:.5f} (robust SE {se:.5f}), target 0.003 within 2 SE")
    assert ok
