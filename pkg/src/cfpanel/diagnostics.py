"""Normality tests, multiple-testing adjustments, fit coverage and forecast
quality metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateSeriesError, DomainError, SampleSizeError

METHODS = ("bonferroni", "holm", "hochberg", "hommel", "benjamini_hochberg")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int

    __test__ = False  # keep pytest from collecting this


@dataclass(frozen=True)
class QualityReport:
    ME: float
    RMSE: float
    MAE: float
    MAES: float
    MAPE: float
    median_MAPE: float
    n: int
    n_pairs: int
    mape_excluded: int


def jarque_bera(x) -> TestResult:
    """JB = n/6 (S^2 + (K-3)^2/4) with biased moments; chi-square(2) p-value."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if n < 8:
        raise SampleSizeError(f"Jarque-Bera needs n >= 8, got {n}")
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    if m2 <= 1e-300 or m2 < 1e-24 * max(1.0, np.mean(x ** 2)):
        raise DegenerateSeriesError("zero variance")
    skew = np.mean(d ** 3) / m2 ** 1.5
    kurt = np.mean(d ** 4) / m2 ** 2
    jb = n / 6.0 * (skew ** 2 + (kurt - 3.0) ** 2 / 4.0)
    return TestResult(float(jb), float(stats.chi2.sf(jb, 2)), n)


def adjust_pvalues(p, method: str = "benjamini_hochberg") -> np.ndarray:
    """Adjusted p-values in input order, clamped to 1."""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p.copy()
    if method == "bonferroni":
        return np.minimum(1.0, m * p)
    order = np.argsort(p, kind="mergesort")
    ps = p[order]
    i = np.arange(1, m + 1)
    if method == "holm":
        adj = np.maximum.accumulate((m - i + 1) * ps)
    elif method == "hochberg":
        adj = np.minimum.accumulate(((m - i + 1) * ps)[::-1])[::-1]
    elif method == "benjamini_hochberg":
        adj = np.minimum.accumulate((m / i * ps)[::-1])[::-1]
    elif method == "hommel":
        adj = _hommel_sorted(ps)
    else:
        raise DomainError(f"unknown method {method!r}")
    out = np.empty(m)
    out[order] = np.minimum(1.0, adj)
    return out


def _hommel_sorted(ps):
    n = ps.size
    if n <= 2:
        # Hommel coincides with Hochberg for two hypotheses
        i = np.arange(1, n + 1)
        return np.minimum.accumulate(((n - i + 1) * ps)[::-1])[::-1]
    i = np.arange(1, n + 1)
    q = np.full(n, np.min(n * ps / i))
    pa = q.copy()
    for m in range(n - 1, 1, -1):
        i1 = np.arange(n - m + 1)
        i2 = np.arange(n - m + 1, n)
        q1 = np.min(m * ps[i2] / np.arange(2, m + 1))
        q[i1] = np.minimum(m * ps[i1], q1)
        q[i2] = q[n - m]
        pa = np.maximum(pa, q)
    return np.maximum(pa, ps)


def reject(p, q: float = 0.05, method: str = "benjamini_hochberg") -> np.ndarray:
    """Boolean rejections at level ``q``.

    The false discovery rule compares sorted p-values with ``k q / m``
    directly instead of thresholding adjusted values, so a p-value sitting
    exactly on its critical line is never lost to rounding in ``m p / k``.
    """
    adj = adjust_pvalues(p, method)
    if method != "benjamini_hochberg" or adj.size == 0:
        return adj <= q
    ps = np.asarray(p, dtype=float)
    order = np.argsort(ps, kind="mergesort")
    m = ps.size
    ok = np.flatnonzero(ps[order] <= np.arange(1, m + 1) * q / m)
    out = np.zeros(m, dtype=bool)
    if ok.size:
        out[order[:ok[-1] + 1]] = True
    return out


def coverage_fraction(observed, lower, upper) -> float:
    """Share of periods where the observation lies strictly outside its band."""
    y = np.asarray(observed, dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if y.size == 0:
        return 0.0
    return float(np.mean((y < lo) | (y > hi)))


def fleet_coverage(fractions) -> dict:
    f = np.asarray(fractions, dtype=float)
    return {"average": float(f.mean()), "p75": float(np.percentile(f, 75)), "n_firms": int(f.size)}


def forecast_quality(actuals, forecasts, by_firm=None) -> QualityReport:
    """Pooled error statistics (error = actual - forecast) plus the median of per-firm MAPEs."""
    a = np.asarray(actuals, dtype=float)
    f = np.asarray(forecasts, dtype=float)
    if a.shape != f.shape:
        raise DomainError("actuals and forecasts must align")
    if a.size == 0:
        raise SampleSizeError("no forecast pairs")
    e = a - f
    ae = np.abs(e)
    nz = a != 0
    sd = a.std(ddof=1) if a.size > 1 else np.nan
    groups = np.zeros(a.size, dtype=int) if by_firm is None else np.asarray(by_firm)
    firm_mapes = []
    # actuals near zero give huge percentage errors; let them saturate to inf quietly
    with np.errstate(over="ignore"):
        ape = np.where(nz, ae / np.where(nz, np.abs(a), 1.0), np.nan)
        mape = float(np.mean(ape[nz])) if nz.any() else np.nan
        for g in _unique_in_order(groups):
            m = (groups == g) & nz
            if m.any():
                firm_mapes.append(np.mean(ape[m]))
    mae = float(ae.mean())
    return QualityReport(
        ME=float(e.mean()),
        RMSE=float(np.sqrt(np.mean(e ** 2))),
        MAE=mae,
        MAES=float(mae / sd) if sd and sd > 0 else (0.0 if mae == 0 else np.nan),
        MAPE=mape,
        median_MAPE=float(np.median(firm_mapes)) if firm_mapes else np.nan,
        n=len(_unique_in_order(groups)),
        n_pairs=int(a.size),
        mape_excluded=int((~nz).sum()),
    )


def _unique_in_order(x):
    _, idx = np.unique(x, return_index=True)
    return [x[i] for i in sorted(idx)]


def normality_screen(diff_series: dict, alpha: float = 0.05, methods=METHODS) -> dict:
    """Run JB per series and report the share not rejected after each adjustment.

    ``diff_series`` maps firm to its differenced outcome. Series that are too
    short or constant are left out and counted.
    """
    ids, pvals, skipped = [], [], 0
    for k, v in diff_series.items():
        try:
            pvals.append(jarque_bera(v).p_value)
            ids.append(k)
        except (SampleSizeError, DegenerateSeriesError):
            skipped += 1
    out = {"n_tested": len(ids), "n_skipped": skipped}
    if not ids:
        return out
    p = np.array(pvals)
    out["unadjusted"] = float(np.mean(p > alpha))
    for meth in methods:
        out[meth] = float(np.mean(adjust_pvalues(p, meth) > alpha))
    out["p_values"] = dict(zip(ids, pvals))
    return out
