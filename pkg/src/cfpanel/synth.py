"""Synthetic panels with known ground truth, plus exact reference solutions
(Kalman smoother, dense GLS, brute-force step-up) used to check the estimators."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from .panel_store import PanelDataset
from .periods import check_frequency, format_period, year_start

INDUSTRIES = ("21", "23", "31", "42", "44", "48", "51", "52", "53", "54", "56", "72")


@dataclass
class DgpSpec:
    """Settings for :func:`generate_panel`.

    Variances are in outcome units. ``effect`` is either a constant or a
    callable ``f(firm_index, horizon) -> float`` evaluated on treated periods;
    it is relative (``y1 = y0 * (1 + effect)``) when ``effect_mode`` is
    ``"multiplicative"`` and added otherwise. ``industry_effects`` adds a
    further shift to every treated period of firms in the named industries.
    """
    n_firms: int = 100
    n_pre: int = 20
    n_post: int = 2
    frequency: str = "yearly"
    outcome: str = "markup"
    level_mean: float = 1.5
    level_sd: float = 0.2
    obs_var: float = 0.05 ** 2
    trend_var: float = 0.005 ** 2
    seasonal_var: float = 0.0
    seasonal: bool = False
    seasonal_sd: float = 0.05
    effect: Union[float, Callable] = 0.0
    effect_mode: str = "multiplicative"
    industry_effects: Mapping = field(default_factory=dict)
    n_industries: int = 6
    treatment_start: int = 2020
    entry_spread: int = 0
    sales_sd: float = 1.5  # cross-firm sd of log sales, sets how uneven sales weights are
    seed: int = 0

    def __post_init__(self):
        check_frequency(self.frequency)
        if min(self.obs_var, self.trend_var, self.seasonal_var) < 0:
            raise ValueError("variances must be nonnegative")
        if self.outcome not in ("markup", "profit_rate"):
            raise ValueError("outcome must be 'markup' or 'profit_rate'")
        if self.effect_mode not in ("multiplicative", "additive"):
            raise ValueError("effect_mode must be 'multiplicative' or 'additive'")
        if self.seasonal and self.frequency != "quarterly":
            raise ValueError("seasonal DGPs need quarterly frequency")
        if not 1 <= self.n_industries <= len(INDUSTRIES):
            raise ValueError(f"n_industries must be in [1, {len(INDUSTRIES)}]")


@dataclass
class SyntheticPanel:
    data: PanelDataset
    truth: pd.DataFrame  # firm_id, period, treated, trend, y0, y1, effect
    spec: DgpSpec

    def outcome_wide(self, column: str = "y1") -> pd.DataFrame:
        return self.truth.pivot(index="period", columns="firm_id", values=column)


def firm_id(i: int) -> str:
    return f"F{i:05d}"


def simulate_local_level(n: int, obs_var: float, trend_var: float, rng, level0: float = 0.0,
                         seasonal_var: float = 0.0, seasonal_init=None):
    """One draw of (y, trend, seasonal) from the structural model."""
    trend = level0 + np.concatenate([[0.0], np.cumsum(rng.normal(0, np.sqrt(trend_var), n - 1))])
    seas = np.zeros(n)
    if seasonal_init is not None:
        g = list(seasonal_init)  # gamma_{0}, gamma_{-1}, gamma_{-2}
        for t in range(n):
            new = -sum(g[:3]) + (rng.normal(0, np.sqrt(seasonal_var)) if seasonal_var > 0 else 0.0)
            seas[t] = new
            g = [new] + g[:2]
    y = trend + seas + rng.normal(0, np.sqrt(obs_var), n)
    return y, trend, seas


def _effect_value(spec: DgpSpec, i: int, h: int) -> float:
    return float(spec.effect(i, h)) if callable(spec.effect) else float(spec.effect)


def generate_panel(spec: DgpSpec) -> SyntheticPanel:
    """Simulate a panel whose chosen outcome follows the structural model.

    Raw columns are built so that the outcome is recovered exactly with unit
    elasticity: for markups ``cogs = sales / mu``; for profit rates
    ``cogs + xsga = sales * (1 - pi)``, split 3:1.
    """
    rng = np.random.default_rng(spec.seed)
    t0 = year_start(spec.treatment_start, spec.frequency)
    n_total = spec.n_pre + spec.n_post
    codes = np.arange(t0 - spec.n_pre, t0 + spec.n_post)
    inds = INDUSTRIES[: spec.n_industries]
    rows, truth = [], []
    for i in range(spec.n_firms):
        fid = firm_id(i)
        naics = inds[rng.integers(len(inds))]
        start = int(rng.integers(0, spec.entry_spread + 1)) if spec.entry_spread else 0
        level0 = spec.level_mean + spec.level_sd * rng.standard_normal()
        s_init = rng.normal(0, spec.seasonal_sd, 3) if spec.seasonal else None
        y0, trend, _ = simulate_local_level(n_total, spec.obs_var, spec.trend_var, rng, level0,
                                            spec.seasonal_var, s_init)
        log_sales = np.log(1000.0) + rng.normal(0, spec.sales_sd) + np.cumsum(rng.normal(0.01, 0.05, n_total))
        sales = np.exp(log_sales)
        ppe_ratio = np.exp(rng.normal(-0.7, 0.3))
        emp_ratio = np.exp(rng.normal(np.log(0.005), 0.3))
        y1 = y0.copy()
        for k in range(spec.n_pre, n_total):
            h = k - spec.n_pre + 1
            e = _effect_value(spec, i, h)
            y1[k] = y0[k] * (1.0 + e) if spec.effect_mode == "multiplicative" else y0[k] + e
            y1[k] += float(spec.industry_effects.get(naics, 0.0))
        for k in range(start, n_total):
            s = sales[k]
            if spec.outcome == "markup":
                cogs = s / y1[k]
                xsga = 0.5 * max(s - cogs, 0.0)
            else:
                cogs = 0.75 * s * (1.0 - y1[k])
                xsga = 0.25 * s * (1.0 - y1[k])
            rows.append((fid, int(codes[k]), s, cogs, xsga,
                         s * ppe_ratio, s * emp_ratio, naics))
            truth.append((fid, int(codes[k]), k >= spec.n_pre, trend[k], y0[k], y1[k], y1[k] - y0[k]))
    frame = pd.DataFrame(rows, columns=["firm_id", "period", "sales", "cogs", "xsga", "ppegt", "emp", "naics2"])
    truth_df = pd.DataFrame(truth, columns=["firm_id", "period", "treated", "trend", "y0", "y1", "effect"])
    return SyntheticPanel(PanelDataset(frame, spec.frequency), truth_df, spec)


def generate_cross_section(n_firms: int = 2000, coef: Optional[Mapping] = None, intercept: float = 0.0,
                           noise_sd: float = 0.05, n_industries: int = 6, industry_sd: float = 0.0,
                           heteroskedastic: bool = True, seed: int = 0) -> pd.DataFrame:
    """Firm covariates and an average effect linear in them.

    Default slopes are zero except stock tenure, 0.003 per year. Noise sd
    scales with log sales when ``heteroskedastic`` is set.
    """
    rng = np.random.default_rng(seed)
    b = {"log_cogs": 0.0, "log_sales": 0.0, "log_emp": 0.0, "stock_tenure": 0.003, "market_share": 0.0}
    if coef:
        b.update(coef)
    inds = np.array(INDUSTRIES[:n_industries])
    naics = inds[rng.integers(n_industries, size=n_firms)]
    log_sales = rng.normal(6.0, 2.0, n_firms)
    log_cogs = log_sales - np.abs(rng.normal(0.4, 0.2, n_firms))
    log_emp = log_sales - 5.0 + rng.normal(0, 0.5, n_firms)
    tenure = rng.integers(1, 60, n_firms).astype(float)
    share = rng.beta(0.5, 10.0, n_firms)
    df = pd.DataFrame({"firm_id": [firm_id(i) for i in range(n_firms)], "naics2": naics,
                       "log_cogs": log_cogs, "log_sales": log_sales, "log_emp": log_emp,
                       "stock_tenure": tenure, "market_share": share})
    fe = dict(zip(inds, rng.normal(0, industry_sd, n_industries))) if industry_sd > 0 else {}
    sd = noise_sd * (0.5 + np.abs(log_sales - 6.0) / 2.0) if heteroskedastic else np.full(n_firms, noise_sd)
    eff = intercept + sum(df[k].to_numpy() * v for k, v in b.items())
    eff = eff + np.array([fe.get(g, 0.0) for g in naics]) + rng.normal(0, 1, n_firms) * sd
    df["effect"] = eff
    df["missing"] = False
    return df


def kalman_oracle(y, obs_var: float, trend_var: float, a1: Optional[float] = None,
                  P1: Optional[float] = None):
    """Exact Kalman filter and RTS smoother for the local-level model.

    With ``a1``/``P1`` omitted the initial state is diffuse. Returns
    (smoothed means, smoothed variances).
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    a_f = np.empty(n)
    P_f = np.empty(n)
    a_p = np.empty(n)
    P_p = np.empty(n)
    for t in range(n):
        if t == 0:
            if P1 is None:
                a_p[0], P_p[0] = np.nan, np.inf
                a_f[0], P_f[0] = y[0], obs_var
                continue
            a_p[0], P_p[0] = a1, P1
        else:
            a_p[t] = a_f[t - 1]
            P_p[t] = P_f[t - 1] + trend_var
        F = P_p[t] + obs_var
        if F > 0:
            K = P_p[t] / F
            a_f[t] = a_p[t] + K * (y[t] - a_p[t])
            P_f[t] = P_p[t] * (1 - K)
        else:
            a_f[t], P_f[t] = a_p[t], P_p[t]
    a_s = a_f.copy()
    P_s = P_f.copy()
    for t in range(n - 2, -1, -1):
        if P_p[t + 1] > 0:
            J = P_f[t] / P_p[t + 1]
            a_s[t] = a_f[t] + J * (a_s[t + 1] - a_p[t + 1])
            P_s[t] = P_f[t] + J * J * (P_s[t + 1] - P_p[t + 1])
        else:
            a_s[t], P_s[t] = a_s[t + 1], P_s[t + 1]
    return a_s, P_s


def dense_gls_smoother(y, obs_var: float, trend_var: float, a1: Optional[float] = None,
                       P1: Optional[float] = None):
    """Posterior mean and variances of the level path from one dense solve.

    The joint posterior precision is I/obs_var + D'D/trend_var (+ the prior on
    the first state), with D the first-difference matrix.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    D = np.diff(np.eye(n), axis=0)
    prec = np.eye(n) / obs_var + D.T @ D / trend_var
    rhs = y / obs_var
    if P1 is not None:
        prec[0, 0] += 1.0 / P1
        rhs = rhs.copy()
        rhs[0] += a1 / P1
    cov = np.linalg.inv(prec)
    return cov @ rhs, np.diag(cov).copy()


def stepup_oracle(p, q: float = 0.05) -> frozenset:
    """Indices rejected by the step-up rule: the largest k with
    p_(k) <= k q / m, rejecting the k smallest p-values."""
    p = list(p)
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    k_star = 0
    for k in range(m, 0, -1):
        if p[order[k - 1]] <= k * q / m:
            k_star = k
            break
    return frozenset(order[:k_star])


def export_fixture(synth: SyntheticPanel, directory, theta: float = 1.0) -> dict:
    """Write panel, ground truth, elasticity and deflator files; return their paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {
        "panel": os.path.join(directory, "panel.csv"),
        "truth": os.path.join(directory, "truth.csv"),
        "elasticities": os.path.join(directory, "elasticities.csv"),
        "deflator": os.path.join(directory, "deflator.csv"),
    }
    synth.data.to_csv(paths["panel"])
    truth = synth.truth.copy()
    truth["period"] = [format_period(c, synth.spec.frequency) for c in truth["period"]]
    truth.to_csv(paths["truth"], index=False)
    pd.DataFrame({"naics2": ["*"], "period": ["*"], "theta": [theta]}).to_csv(paths["elasticities"], index=False)
    per = sorted(set(int(c) for c in synth.data.frame["period"]))
    pd.DataFrame({"period": [format_period(c, synth.spec.frequency) for c in per],
                  "index": [100.0] * len(per)}).to_csv(paths["deflator"], index=False)
    return paths
