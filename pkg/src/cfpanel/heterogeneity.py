"""Cross-sectional heterogeneity of estimated effects: OLS with HC1 errors and
optional industry fixed effects, binscatters and industry breakdowns."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import AlignmentError, SampleSizeError

log = logging.getLogger(__name__)

COVARIATES = ("log_cogs", "log_sales", "log_emp", "stock_tenure", "market_share")
COVARIATE_LABELS = {
    "log_cogs": "Log COGS",
    "log_sales": "Log sales",
    "log_emp": "Log employment",
    "stock_tenure": "Stock tenure",
    "market_share": "Market share",
    "const": "Constant",
}
MIN_FIRMS = 10


@dataclass
class HeterogeneityReport:
    coef: dict
    se: dict
    pvalues: dict
    industry_fe: bool
    r2: float
    within_r2: Optional[float]
    n: int
    mean_effect: float
    covariate_means: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)

    def stars(self, name: str) -> str:
        p = self.pvalues.get(name, np.nan)
        if not np.isfinite(p):
            return ""
        return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _drop_collinear(X: np.ndarray, names: list, base: Optional[np.ndarray] = None, tol=1e-10):
    """Greedily keep columns that add rank, in order; ``base`` columns are
    always kept (constant term)."""
    keep, dropped = [], []
    cur = base if base is not None else np.empty((X.shape[0], 0))
    for j, nm in enumerate(names):
        cand = np.column_stack([cur, X[:, j]])
        s = np.linalg.svd(cand, compute_uv=False)
        if s.size and s[-1] > tol * max(1.0, s[0]) and np.linalg.norm(X[:, j]) > 0:
            keep.append(j)
            cur = cand
        else:
            dropped.append(nm)
    return keep, dropped


def _within(values: np.ndarray, groups: np.ndarray) -> np.ndarray:
    df = pd.DataFrame(values)
    return values - df.groupby(groups).transform("mean").to_numpy()


def _r2(ssr: float, tss: float, y: np.ndarray) -> float:
    # a total sum of squares at rounding level means a constant outcome
    floor = y.size * (1e-12 * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)) ** 2
    return 1.0 - ssr / tss if tss > floor else 0.0


def ols_hc1(y: np.ndarray, X: np.ndarray, extra_dof: int = 0):
    """OLS coefficients with HC1 standard errors.

    ``extra_dof`` counts parameters absorbed before the call (fixed effects),
    which enter the small-sample factor n / (n - k).
    """
    n, p = X.shape
    k = p + extra_dof
    if n <= k:
        raise SampleSizeError(f"{n} observations for {k} parameters")
    XtX_inv = np.linalg.pinv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    resid = y - X @ beta
    meat = (X * resid[:, None] ** 2).T @ X
    cov = n / (n - k) * XtX_inv @ meat @ XtX_inv
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return beta, se, resid, n - k


def heterogeneity_regression(data: pd.DataFrame, effect: str = "effect",
                             covariates: Sequence[str] = COVARIATES, with_industry_fe: bool = False,
                             industry: str = "naics2") -> HeterogeneityReport:
    """Regress firm-level average effects on baseline covariates.

    Rows with any missing value (or a ``missing`` flag set) are left out.
    Fixed effects are absorbed by demeaning within industry.
    """
    cols = [effect, *covariates] + ([industry] if with_industry_fe else [])
    df = data
    if "missing" in df.columns:
        df = df[~df["missing"].astype(bool)]
    df = df.dropna(subset=cols)
    n = len(df)
    if n < MIN_FIRMS:
        raise SampleSizeError(f"need at least {MIN_FIRMS} firms with complete covariates, got {n}")
    y = df[effect].to_numpy(dtype=float)
    X = df[list(covariates)].to_numpy(dtype=float)
    names = list(covariates)
    means = {c: float(df[c].mean()) for c in covariates}

    if with_industry_fe:
        g = df[industry].astype(str).to_numpy()
        n_groups = len(np.unique(g))
        yw = _within(y[:, None], g)[:, 0]
        Xw = _within(X, g)
        keep, dropped = _drop_collinear(Xw, names)
        Xw = Xw[:, keep]
        beta, se, resid, dof = ols_hc1(yw, Xw, extra_dof=n_groups)
        used = [names[j] for j in keep]
        ssr = float(resid @ resid)
        tss_w = float(yw @ yw)
        tss = float(np.sum((y - y.mean()) ** 2))
        within_r2 = _r2(ssr, tss_w, y)
        r2 = _r2(ssr, tss, y)
    else:
        ones = np.ones((n, 1))
        keep, dropped = _drop_collinear(X, names, base=ones)
        Xd = np.column_stack([ones, X[:, keep]])
        beta, se, resid, dof = ols_hc1(y, Xd)
        used = ["const"] + [names[j] for j in keep]
        ssr = float(resid @ resid)
        tss = float(np.sum((y - y.mean()) ** 2))
        r2 = _r2(ssr, tss, y)
        within_r2 = None
    for nm in dropped:
        warnings.warn(f"covariate {nm!r} dropped: perfectly collinear", stacklevel=2)
    coef = dict(zip(used, beta.tolist()))
    ses = dict(zip(used, se.tolist()))
    pv = {}
    for nm in used:
        if ses[nm] > 0:
            pv[nm] = float(2 * stats.t.sf(abs(coef[nm]) / ses[nm], dof))
        else:
            pv[nm] = np.nan
    return HeterogeneityReport(coef=coef, se=ses, pvalues=pv, industry_fe=with_industry_fe, r2=float(r2),
                               within_r2=None if within_r2 is None else float(within_r2), n=n,
                               mean_effect=float(y.mean()), covariate_means=means, dropped=dropped)


def average_effects(effects: pd.DataFrame, years: Sequence[int], effect: str = "effect") -> pd.Series:
    """Simple mean of each firm's effects over the available ``years``."""
    sub = effects[effects["year"].isin(list(years))]
    return sub.groupby("firm_id")[effect].mean()


def heterogeneity_table(reports: Sequence[tuple], covariates: Sequence[str] = COVARIATES) -> pd.DataFrame:
    """Text table: one column per (label, report), coefficient rows with
    stars followed by SE rows in parentheses and summary rows."""
    rows = []
    index = []
    for c in list(covariates) + ["const"]:
        index += [COVARIATE_LABELS.get(c, c), ""]
        coef_row, se_row = [], []
        for _, r in reports:
            if c in r.coef:
                coef_row.append(f"{r.coef[c]:.4f}{r.stars(c)}")
                se_row.append(f"({r.se[c]:.4f})")
            else:
                coef_row.append("")
                se_row.append("")
        rows += [coef_row, se_row]
    extra = {
        "Industry FE": lambda r: "Yes" if r.industry_fe else "No",
        "Observations": lambda r: str(r.n),
        "R2": lambda r: f"{r.r2:.3f}",
        "Within R2": lambda r: "" if r.within_r2 is None else f"{r.within_r2:.3f}",
        "Mean effect": lambda r: f"{r.mean_effect:.4f}",
    }
    for lab, fn in extra.items():
        index.append(lab)
        rows.append([fn(r) for _, r in reports])
    return pd.DataFrame(rows, index=index, columns=[lab for lab, _ in reports])


def binscatter(x, y, n_bins: int = 5) -> pd.DataFrame:
    """Equal-count quantile bins of ``x`` with the mean of ``y`` per bin and a
    mean +/- 1.96 sd/sqrt(n) band."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise AlignmentError("x and y must align")
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    k = n_bins
    while k > 1:
        try:
            labels = pd.qcut(x, k, labels=False)
            break
        except ValueError:
            k -= 1
    else:
        labels = np.zeros(x.size, dtype=int)
    if k < n_bins:
        warnings.warn(f"ties in covariate: using {k} bins instead of {n_bins}", stacklevel=2)
    rows = []
    for b in range(k):
        m = labels == b
        nb = int(m.sum())
        if nb == 0:
            continue
        sd = y[m].std(ddof=1) if nb > 1 else 0.0
        mu = y[m].mean()
        half = 1.96 * sd / np.sqrt(nb)
        rows.append((b, nb, x[m].mean(), mu, mu - half, mu + half))
    return pd.DataFrame(rows, columns=["bin", "n", "x_mean", "y_mean", "lo", "hi"])


@dataclass
class IndustryBreakdown:
    table: pd.DataFrame          # industry, year, effect, weight, n_firms
    order: list                  # industries ascending by the ordering-year effect
    reference: pd.DataFrame      # year, p25, p75 over firm-level effects


def industry_breakdown(effects: pd.DataFrame, weight: str = "sales", industry: str = "naics2",
                       order_year: int = 2020, effect: str = "effect") -> IndustryBreakdown:
    """Weighted mean effect per industry and year.

    ``effects`` holds one row per firm-year with columns year, ``effect``,
    ``weight`` and ``industry``. Industries are ordered ascending by their
    ``order_year`` effect (industries lacking that year go last).
    """
    df = effects.dropna(subset=[effect, industry]).copy()
    if weight is None or weight == "none":
        df["_w"] = 1.0
    else:
        df["_w"] = df[weight].astype(float)
    df["_wy"] = df["_w"] * df[effect]
    g = df.groupby([industry, "year"], sort=True)
    tab = g.agg(wy=("_wy", "sum"), weight=("_w", "sum"), n_firms=(effect, "size")).reset_index()
    tab["effect"] = tab["wy"] / tab["weight"]
    tab = tab.drop(columns="wy")
    ref_rows = [(yr, float(np.percentile(s, 25)), float(np.percentile(s, 75)))
                for yr, s in df.groupby("year")[effect]]
    ref = pd.DataFrame(ref_rows, columns=["year", "p25", "p75"])
    key = tab[tab["year"] == order_year].set_index(industry)["effect"]
    inds = list(pd.unique(tab[industry]))
    order = sorted(inds, key=lambda i: (i not in key.index, key.get(i, 0.0), str(i)))
    tab["_o"] = tab[industry].map({ind: i for i, ind in enumerate(order)})
    tab = tab.sort_values(["_o", "year"]).drop(columns="_o").reset_index(drop=True)
    tab = tab.rename(columns={industry: "industry"})
    return IndustryBreakdown(table=tab[["industry", "year", "effect", "weight", "n_firms"]], order=order,
                             reference=ref)
