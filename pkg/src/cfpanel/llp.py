"""Local linear projection forecasters.

Each horizon h has its own regression of Y[t+h] on a constant and the p most
recent values up to t; forecasts are direct, never iterated. The firm-specific
variant fits one regression per firm and horizon; the panel variant pools
firms with a common slope vector and firm fixed effects.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import CollinearityError, DomainError, SampleSizeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LlpSpec:
    max_lag: int = 3
    horizon: int = 2
    variant: str = "firm_specific"  # or "panel_fixed_effects"
    n_bootstrap: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.max_lag < 1 or self.horizon < 1:
            raise DomainError("max_lag and horizon must be >= 1")
        if self.variant not in ("firm_specific", "panel_fixed_effects"):
            raise DomainError(f"unknown variant {self.variant!r}")


@dataclass
class LlpFit:
    """Coefficients and forecasts per horizon (index 0 is h=1).

    For the firm-specific variant the dicts hold a single entry under the
    firm id; for the panel variant ``coef`` is shared and ``firm_effects``
    holds u_ih per firm.
    """

    variant: str
    lag: int
    coef: list  # per horizon: array of length lag + 1, constant first
    resid_var: list
    se: list = field(default_factory=list)
    n_obs: list = field(default_factory=list)
    firm_effects: dict = field(default_factory=dict)  # firm -> array over horizons
    forecasts: dict = field(default_factory=dict)  # firm -> array over horizons
    flags: dict = field(default_factory=dict)  # firm -> note


def design(y, lag: int, h: int):
    """Rows (t, X_t, Y_{t+h}) for every t with a full lag window and a target.

    X_t = (1, y_t, y_{t-1}, ..., y_{t-lag+1}).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    ts = np.arange(lag - 1, n - h)
    if ts.size == 0:
        return np.empty((0, lag + 1)), np.empty(0)
    X = np.ones((ts.size, lag + 1))
    for j in range(lag):
        X[:, j + 1] = y[ts - j]
    return X, y[ts + h]


def origin(y, lag: int):
    """Regressor vector at the last observation."""
    y = np.asarray(y, dtype=float)
    return np.concatenate([[1.0], y[::-1][:lag]])


def aic(n: int, ssr: float, k: int) -> float:
    """Gaussian AIC n*ln(SSR/n) + 2(k+1) for k lags plus a constant."""
    with np.errstate(divide="ignore"):
        return n * np.log(ssr / n) + 2 * (k + 1)


def _ols(X, y):
    beta, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return beta, resid, rank, sv


def _estimable(X, x0, rank, tol=1e-8):
    """True if x0 lies in the row space of X, so x0'beta is unique."""
    if rank == X.shape[1]:
        return True
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    keep = s > s[0] * 1e-10 if s.size else s
    V = vt[keep]
    proj = V.T @ (V @ x0)
    return np.linalg.norm(x0 - proj) <= tol * max(1.0, np.linalg.norm(x0))


def select_lag_aic(y, max_lag: int, horizon: int = 1) -> int:
    """Lag in 1..max_lag minimizing AIC on the common estimation sample."""
    y = np.asarray(y, dtype=float)
    n_common = y.shape[0] - horizon - (max_lag - 1)
    if n_common < 3:
        raise SampleSizeError(f"series too short to compare lags up to {max_lag}")
    best, best_aic = None, np.inf
    for p in range(1, max_lag + 1):
        X, target = design(y, p, horizon)
        X, target = X[-n_common:], target[-n_common:]
        _, resid, _, _ = _ols(X, target)
        val = aic(n_common, float(resid @ resid), p)
        if best is None or val < best_aic - 1e-12 * max(1.0, abs(best_aic)):
            best, best_aic = p, val
    return best


def _max_feasible_lag(n: int, max_lag: int, horizon: int) -> int:
    # lag p at horizon H leaves n - H - (p - 1) rows, which must be >= p + 2
    return max(0, min(max_lag, (n - horizon - 1) // 2))


def fit_firm_llp(y, spec: LlpSpec, lag: Optional[int] = None) -> LlpFit:
    """Firm-specific projections for h = 1..H on pre-treatment data."""
    y = np.asarray(y, dtype=float)
    if lag is None:
        cap = _max_feasible_lag(y.shape[0], spec.max_lag, spec.horizon)
        if cap < 1:
            raise SampleSizeError("too few observations for a lag-1 projection")
        lag = select_lag_aic(y, cap, 1) if y.shape[0] - 1 - (cap - 1) >= 3 else 1
    x0 = origin(y, lag)
    fit = LlpFit(variant="firm_specific", lag=lag, coef=[], resid_var=[])
    fc = np.empty(spec.horizon)
    for h in range(1, spec.horizon + 1):
        X, target = design(y, lag, h)
        if X.shape[0] < lag + 2:
            raise SampleSizeError(f"horizon {h}: {X.shape[0]} rows < lag + 2 = {lag + 2}")
        beta, resid, rank, _ = _ols(X, target)
        if not _estimable(X, x0, rank):
            raise CollinearityError(f"horizon {h}: forecast not identified by a rank-deficient design")
        dof = max(X.shape[0] - rank, 1)
        s2 = float(resid @ resid) / dof
        fit.coef.append(beta)
        fit.resid_var.append(s2)
        fit.n_obs.append(X.shape[0])
        fit.se.append(_classical_se(X, s2, rank))
        fc[h - 1] = x0 @ beta
    fit.forecasts["_"] = fc
    return fit


def _classical_se(X, s2, rank):
    if rank < X.shape[1]:
        return np.full(X.shape[1], np.nan)
    return np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))


def fit_panel_llp(panel: Mapping[object, Sequence[float]], spec: LlpSpec, lag: Optional[int] = None) -> LlpFit:
    """Pooled projections with a common slope vector and firm fixed effects.

    ``panel`` maps firm id to its pre-treatment series. The lag is chosen on
    pooled AIC at h=1. Firms with too few rows for a horizon regression are
    left out of that estimation but still forecast (with a zero firm effect)
    when they have a full lag window; firms without one are skipped.
    """
    series = {k: np.asarray(v, dtype=float) for k, v in panel.items()}
    usable = [k for k, v in series.items() if v.shape[0] >= 3]
    if len(usable) < 2:
        raise SampleSizeError("panel projections need at least two firms with data")
    if lag is None:
        lag = _pooled_aic_lag(series, spec.max_lag)

    fit = LlpFit(variant="panel_fixed_effects", lag=lag, coef=[], resid_var=[])
    for k, v in series.items():
        if v.shape[0] >= lag:
            fit.forecasts[k] = np.full(spec.horizon, np.nan)
            fit.firm_effects[k] = np.zeros(spec.horizon)
        else:
            fit.flags[k] = "skipped: no lag window"
            log.info("panel LLP: firm %s skipped, %d obs < lag %d", k, v.shape[0], lag)

    for h in range(1, spec.horizon + 1):
        Xs, ys, owners = [], [], []
        for k, v in series.items():
            X, target = design(v, lag, h)
            if X.shape[0] >= 2:
                Xs.append(X[:, 1:])
                ys.append(target)
                owners.append(k)
            elif k in fit.forecasts:
                fit.flags.setdefault(k, f"excluded from estimation at h={h}; pooled effect used")
        if len(owners) < 2:
            raise SampleSizeError(f"horizon {h}: fewer than two firms with estimation rows")
        # within transformation per firm
        Xd = np.vstack([X - X.mean(axis=0) for X in Xs])
        yd = np.concatenate([t - t.mean() for t in ys])
        slopes, resid, rank, _ = _ols(Xd, yd)
        if rank < Xd.shape[1]:
            raise CollinearityError(f"horizon {h}: pooled within design is rank deficient")
        intercepts = np.array([t.mean() - X.mean(axis=0) @ slopes for X, t in zip(Xs, ys)])
        const = float(intercepts.mean())
        n_tot = yd.shape[0]
        dof = max(n_tot - len(owners) - Xd.shape[1], 1)
        s2 = float(resid @ resid) / dof
        se_slopes = np.sqrt(np.diag(s2 * np.linalg.inv(Xd.T @ Xd)))
        fit.coef.append(np.concatenate([[const], slopes]))
        fit.resid_var.append(s2)
        fit.se.append(np.concatenate([[np.nan], se_slopes]))
        fit.n_obs.append(n_tot)
        for k, u in zip(owners, intercepts - const):
            if k in fit.firm_effects:
                fit.firm_effects[k][h - 1] = u
        for k in fit.forecasts:
            x0 = origin(series[k], lag)
            fit.forecasts[k][h - 1] = x0 @ fit.coef[-1] + fit.firm_effects[k][h - 1]
    return fit


def _pooled_aic_lag(series, max_lag):
    best, best_aic = None, np.inf
    for p in range(1, max_lag + 1):
        Xs, ys = [], []
        for v in series.values():
            X, target = design(v, p, 1)
            n_common = v.shape[0] - 1 - (max_lag - 1)
            if n_common < 2:
                continue
            X, target = X[-n_common:], target[-n_common:]
            Xs.append(X[:, 1:] - X[:, 1:].mean(axis=0))
            ys.append(target - target.mean())
        if len(ys) < 2:
            continue
        Xd, yd = np.vstack(Xs), np.concatenate(ys)
        _, resid, _, _ = _ols(Xd, yd)
        val = aic(yd.shape[0], float(resid @ resid), p)
        if best is None or val < best_aic - 1e-12 * max(1.0, abs(best_aic)):
            best, best_aic = p, val
    if best is None:
        raise SampleSizeError("no firm long enough to compare panel lags")
    return best


def forecast_firms(series: Mapping[object, Sequence[float]], spec: LlpSpec):
    """Run the configured variant over many firms.

    Returns (forecasts, lags, skipped) where ``forecasts`` maps firm to an
    array of length H and ``skipped`` maps firm to a reason.
    """
    forecasts, lags, skipped = {}, {}, {}
    if spec.variant == "firm_specific":
        for k, v in series.items():
            try:
                f = fit_firm_llp(v, spec)
            except (SampleSizeError, CollinearityError) as exc:
                skipped[k] = str(exc)
                continue
            forecasts[k] = f.forecasts["_"]
            lags[k] = f.lag
        return forecasts, lags, skipped
    f = fit_panel_llp(series, spec)
    for k in series:
        if k in f.forecasts:
            forecasts[k] = f.forecasts[k]
            lags[k] = f.lag
        else:
            skipped[k] = f.flags.get(k, "skipped")
    return forecasts, lags, skipped


def bootstrap_aggregate_ci(effects, weights=None, spec: Optional[LlpSpec] = None, n_bootstrap=None,
                           seed=None, level: float = 0.95, chunk: int = 1000):
    """Percentile interval of the weighted average effect, resampling firms.

    ``effects`` is (n_firms,) or (n_firms, H). Returns (lower, upper) arrays
    of length H.
    """
    e = np.asarray(effects, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    n = e.shape[0]
    if n < 2:
        raise SampleSizeError("bootstrap needs at least two firms")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    B = n_bootstrap or (spec.n_bootstrap if spec else 10_000)
    rng = np.random.default_rng(seed if seed is not None else (spec.seed if spec else 0))
    stats = np.empty((B, e.shape[1]))
    done = 0
    while done < B:
        b = min(chunk, B - done)
        idx = rng.integers(0, n, size=(b, n))
        ww = w[idx]
        stats[done:done + b] = np.einsum("bn,bnh->bh", ww, e[idx]) / ww.sum(axis=1, keepdims=True)
        done += b
    q = (1 - level) / 2
    lo, hi = np.quantile(stats, [q, 1 - q], axis=0)
    return lo, hi
