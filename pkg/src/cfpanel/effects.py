"""Counterfactual effects: per-firm estimates, significance, fleet aggregates
and cross-firm correlation audits."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .bsts import DEFAULT_LEVELS, ForecastDistribution
from .diagnostics import adjust_pvalues
from .errors import AlignmentError, DomainError

log = logging.getLogger(__name__)


@dataclass
class EffectEstimate:
    firm_id: object
    horizon: int
    observed: float
    counterfactual_mean: float
    effect: float
    intervals: dict = field(default_factory=dict)  # level -> (lo, hi) of the counterfactual
    posterior_p: Optional[float] = None
    significant: Optional[bool] = None
    sign: int = 0


def posterior_pvalue(observed: float, draws) -> float:
    """Two-sided tail-doubling p-value with floor 2/(n+1), clamped to 1."""
    d = np.asarray(draws, dtype=float)
    n = d.size
    upper = np.mean(d >= observed)
    lower = np.mean(d <= observed)
    p = 2.0 * min(upper, lower)
    return float(min(1.0, max(p, 2.0 / (n + 1))))


def effect_estimates(observed, forecast, firm_id=None) -> list:
    """Effect per horizon: observed minus the counterfactual mean.

    ``forecast`` is a :class:`ForecastDistribution` (Bayesian: intervals,
    posterior p-values and significance flags are filled in) or a plain
    array of point forecasts (projections: significance left as None).
    """
    obs = np.atleast_1d(np.asarray(observed, dtype=float))
    if isinstance(forecast, ForecastDistribution):
        point = forecast.point
    else:
        point = np.atleast_1d(np.asarray(forecast, dtype=float))
    if obs.shape != point.shape:
        raise AlignmentError(f"{obs.size} observed periods vs {point.size} forecast horizons")
    out = []
    for h in range(obs.size):
        eff = obs[h] - point[h]
        est = EffectEstimate(firm_id=firm_id, horizon=h + 1, observed=float(obs[h]),
                             counterfactual_mean=float(point[h]), effect=float(eff))
        if isinstance(forecast, ForecastDistribution):
            est.intervals = {lev: (float(lo[h]), float(hi[h])) for lev, (lo, hi) in forecast.intervals.items()}
            lo95, hi95 = est.intervals[0.95]
            est.significant = bool(obs[h] < lo95 or obs[h] > hi95)
            if forecast.draws is not None:
                est.posterior_p = posterior_pvalue(obs[h], forecast.draws[:, h])
            est.sign = int(np.sign(eff)) if est.significant else 0
        out.append(est)
    return out


def average_effect_pvalue(observed, paths) -> tuple:
    """Effect and posterior p-value for the average over all treated horizons."""
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(paths, dtype=float)
    avg_draws = p.mean(axis=1)
    return float(obs.mean() - avg_draws.mean()), posterior_pvalue(obs.mean(), avg_draws)


@dataclass
class AggregateSeries:
    statistic: str
    observed: np.ndarray
    point: np.ndarray
    bands: dict  # level -> (lo, hi)
    simulations: Optional[np.ndarray] = None

    @property
    def effect(self):
        return self.observed - self.point

    def to_frame(self, periods=None) -> pd.DataFrame:
        H = self.observed.shape[0]
        df = pd.DataFrame({"period": periods if periods is not None else np.arange(1, H + 1),
                           "observed": self.observed, "point": self.point})
        for lev in sorted(self.bands):
            tag = int(round(lev * 100))
            df[f"lo{tag}"], df[f"hi{tag}"] = self.bands[lev]
        return df


def _apply_stat(values, weights, statistic):
    # values: (..., H, n_firms); weights: (n_firms, H)
    if statistic == "mean":
        return np.einsum("...hn,nh->...h", values, weights) / weights.sum(axis=0)
    q = {"Q1": 0.25, "Q2": 0.5, "Q3": 0.75}[statistic]
    return np.quantile(values, q, axis=-1)


def aggregate_fleet(observed, paths: Sequence, weights=None, statistic: str = "mean",
                    n_simulations: int = 5000, levels=DEFAULT_LEVELS, seed: int = 0,
                    keep_simulations=False) -> AggregateSeries:
    """Fleet aggregate of observed and counterfactual outcomes.

    ``observed`` is (n_firms, H); ``paths`` a sequence of (n_draws_i, H)
    predictive arrays. Simulation s combines draw s of every firm, the
    statistic is taken across firms within each simulation, and bands are
    equally-tailed quantiles across simulations. Means use ``weights``, one
    per firm or one per firm and period; quartiles are unweighted.
    """
    obs = np.atleast_2d(np.asarray(observed, dtype=float))
    n_firms, H = obs.shape
    if len(paths) != n_firms:
        raise AlignmentError("one path array per firm required")
    if statistic not in ("mean", "Q1", "Q2", "Q3"):
        raise DomainError(f"unknown statistic {statistic!r}")
    w = np.ones(n_firms) if weights is None or statistic != "mean" else np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.repeat(w[:, None], H, axis=1)
    if w.shape != (n_firms, H):
        raise AlignmentError("weights must have one entry per firm or per firm and period")
    if np.any(~np.isfinite(w)) or np.any(w < 0) or np.any(w.sum(axis=0) <= 0):
        raise DomainError("weights must be nonnegative and not all zero")
    rng = np.random.default_rng(seed)
    sims = np.empty((n_simulations, H, n_firms))
    short = 0
    for i, p in enumerate(paths):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.shape[1] != H:
            raise AlignmentError(f"firm {i}: paths have {p.shape[1]} horizons, expected {H}")
        if p.shape[0] >= n_simulations:
            sims[:, :, i] = p[:n_simulations]
        else:
            short += 1
            sims[:, :, i] = p[rng.integers(0, p.shape[0], size=n_simulations)]
    if short:
        warnings.warn(f"{short} firms had fewer than {n_simulations} draws; resampled with replacement",
                      stacklevel=2)
    stat = _apply_stat(sims, w, statistic)  # (n_sim, H)
    observed_stat = _apply_stat(obs.T, w, statistic)
    bands = {}
    for lev in sorted(levels):
        q = (1 - lev) / 2
        lo, hi = np.quantile(stat, [q, 1 - q], axis=0)
        bands[lev] = (lo, hi)
    return AggregateSeries(statistic=statistic, observed=np.asarray(observed_stat, dtype=float),
                           point=stat.mean(axis=0), bands=bands,
                           simulations=stat if keep_simulations else None)


def significant_fraction_series(effects: pd.DataFrame) -> pd.DataFrame:
    """Per period: shares of firms with significant, positive-significant and
    negative-significant effects. Needs columns period, significant, effect."""
    rows = []
    for per, g in effects.groupby("period", sort=True):
        sig = g["significant"].astype(bool).to_numpy()
        eff = g["effect"].to_numpy(dtype=float)
        n = len(g)
        pos = int(np.sum(sig & (eff > 0)))
        neg = int(np.sum(sig & (eff < 0)))
        # total defined as the sum so the decomposition holds exactly in floating point
        rows.append((per, pos / n + neg / n, pos / n, neg / n, n))
    return pd.DataFrame(rows, columns=["period", "frac_significant", "frac_positive_significant",
                                       "frac_negative_significant", "n_firms"])


def fdr_significant_count(pvalues, q: float = 0.05, naive_level: float = 0.05) -> dict:
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return {"n_rejected_bh": 0, "n_rejected_naive": 0, "n": 0}
    return {
        "n_rejected_bh": int(np.sum(adjust_pvalues(p, "benjamini_hochberg") <= q)),
        "n_rejected_naive": int(np.sum(p <= naive_level)),
        "n": int(p.size),
    }


def pc_correlation_audit(wide: pd.DataFrame, window: int = 5) -> dict:
    """First-principal-component R^2 and pairwise correlation across firms.

    ``wide`` has one row per period and one column per firm. Non-overlapping
    windows of ``window`` consecutive rows are used; within each, only firms
    with complete, non-constant data enter. Windows with fewer than two such
    firms are skipped.
    """
    r2_all, corr_all, skipped = [], [], []
    values = wide.to_numpy(dtype=float)
    for start in range(0, values.shape[0] - window + 1, window):
        block = values[start:start + window]
        ok = np.all(np.isfinite(block), axis=0)
        block = block[:, ok]
        if block.shape[1] >= 2:
            sd = block.std(axis=0, ddof=1)
            block = block[:, sd > 0]
        if block.shape[1] < 2:
            skipped.append(wide.index[start])
            log.info("PC audit: window starting %s skipped (<2 complete firms)", wide.index[start])
            continue
        Z = (block - block.mean(axis=0)) / block.std(axis=0, ddof=1)
        u, s, _ = np.linalg.svd(Z, full_matrices=False)
        pc = u[:, 0] * s[0]
        pc_c = pc - pc.mean()
        denom = pc_c @ pc_c
        for j in range(Z.shape[1]):
            y = Z[:, j]
            if denom <= 0:
                r2_all.append(0.0)
                continue
            b = (pc_c @ y) / denom
            resid = y - b * pc_c
            r2_all.append(1.0 - (resid @ resid) / (y @ y))
        C = np.corrcoef(block, rowvar=False)
        iu = np.triu_indices(C.shape[0], k=1)
        corr_all.extend(C[iu].tolist())
    return {
        "mean_R2": float(np.mean(r2_all)) if r2_all else np.nan,
        "mean_pairwise_corr": float(np.mean(corr_all)) if corr_all else np.nan,
        "n_windows": (values.shape[0] // window) - len(skipped) if values.shape[0] >= window else 0,
        "skipped_windows": skipped,
    }


def scaled_effects(effects: pd.DataFrame, baseline: pd.Series) -> pd.DataFrame:
    """Divide each firm's effects by its baseline mean outcome.

    ``effects`` needs firm_id and effect columns; ``baseline`` is indexed by
    firm. Firms with a zero or missing baseline are dropped and logged.
    """
    base = effects["firm_id"].map(baseline)
    bad = base.isna() | (base == 0)
    for fid in pd.unique(effects.loc[bad, "firm_id"]):
        log.info("scaled effects: firm %s excluded (zero or missing baseline)", fid)
    out = effects.loc[~bad].copy()
    out["scaled_effect"] = out["effect"] / base[~bad]
    return out


def baseline_means(frame: pd.DataFrame, outcome: str, start: int, end: int) -> pd.Series:
    """Mean outcome per firm over period codes [start, end]."""
    win = frame[(frame["period"] >= start) & (frame["period"] <= end)]
    return win.groupby("firm_id")[outcome].mean()
