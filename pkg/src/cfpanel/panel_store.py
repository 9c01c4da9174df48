"""Firm-period panel: loading, sample cleaning, outcome construction and
descriptive statistics.

Currency columns are sales, cogs, xsga, ppegt (and the optional wage_bill);
``emp`` is employment in thousands. Periods are integer codes (see
:mod:`cfpanel.periods`).
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from . import periods as P
from .errors import (
    CoverageError,
    DomainError,
    EmptyResultError,
    IntegrityError,
    SchemaError,
)

REQUIRED_COLUMNS = ("firm_id", "period", "sales", "cogs", "xsga", "ppegt", "emp", "naics2")
NUMERIC_COLUMNS = ("sales", "cogs", "xsga", "ppegt", "emp")
CURRENCY_COLUMNS = ("sales", "cogs", "xsga", "ppegt", "wage_bill")


@dataclass(frozen=True)
class FirmObservation:
    firm_id: str
    period: int
    sales: float
    cogs: float
    xsga: float
    ppegt: float
    emp: float
    naics2: Optional[str]
    wage_bill: Optional[float] = None


@dataclass(frozen=True)
class FirmSeries:
    firm_id: str
    observations: pd.DataFrame
    entry_period: int
    exit_period: int
    markup: Optional[pd.Series] = None
    profit_rate: Optional[pd.Series] = None

    def __len__(self):
        return len(self.observations)

    @property
    def periods(self) -> np.ndarray:
        return self.observations["period"].to_numpy()


class PanelDataset:
    """Immutable firm-period panel sorted by firm then period."""

    def __init__(self, frame: pd.DataFrame, frequency: str, dropped_rows: int = 0):
        P.check_frequency(frequency)
        df = frame.sort_values(["firm_id", "period"], kind="mergesort").reset_index(drop=True)
        self._df = df
        self.frequency = frequency
        self.dropped_rows = int(dropped_rows)

    @property
    def frame(self) -> pd.DataFrame:
        # shallow copy: callers may add columns without touching the dataset
        return self._df.copy(deep=False)

    def __len__(self):
        return len(self._df)

    @property
    def firm_ids(self) -> list:
        return list(pd.unique(self._df["firm_id"].dropna()))

    @property
    def n_firms(self) -> int:
        return len(self.firm_ids)

    @property
    def periods(self) -> np.ndarray:
        return np.unique(self._df["period"].to_numpy())

    def series(self, firm_id, theta: Optional["IndustryElasticityTable"] = None) -> FirmSeries:
        obs = self._df[self._df["firm_id"] == firm_id]
        if obs.empty:
            raise KeyError(firm_id)
        return _make_series(firm_id, obs, theta, self.frequency)

    def iter_series(self, theta=None) -> Iterable[FirmSeries]:
        for fid, obs in self._df.dropna(subset=["firm_id"]).groupby("firm_id", sort=True):
            yield _make_series(fid, obs, theta, self.frequency)

    def subset(self, mask) -> "PanelDataset":
        return PanelDataset(self._df[np.asarray(mask, dtype=bool)], self.frequency)

    def before(self, cutoff: int) -> "PanelDataset":
        """Rows with period <= cutoff."""
        return self.subset(self._df["period"].to_numpy() <= cutoff)

    def to_csv(self, path_or_buf):
        out = self._df.copy()
        out["period"] = [P.format_period(p, self.frequency) for p in out["period"]]
        cols = list(REQUIRED_COLUMNS) + (["wage_bill"] if "wage_bill" in out else [])
        return out[cols].to_csv(path_or_buf, index=False, float_format="%.17g")


def _make_series(fid, obs, theta, frequency):
    obs = obs.reset_index(drop=True)
    per = obs["period"].to_numpy()
    markup = None
    if theta is not None:
        markup = pd.Series(markup_values(obs, theta, frequency), index=per, name="markup")
    with np.errstate(divide="ignore", invalid="ignore"):
        pr = (obs["sales"] - obs["cogs"] - obs["xsga"]) / obs["sales"]
    return FirmSeries(
        firm_id=fid,
        observations=obs,
        entry_period=int(per.min()),
        exit_period=int(per.max()),
        markup=markup,
        profit_rate=pd.Series(pr.to_numpy(), index=per, name="profit_rate"),
    )


def _read_table(source) -> pd.DataFrame:
    if isinstance(source, (str, os.PathLike)):
        return pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return pd.read_csv(source, dtype=str, keep_default_na=False)
    raise TypeError("source must be a path or a readable file handle")


def _clean_id(col: pd.Series) -> pd.Series:
    s = col.astype(str).str.strip()
    return s.where(s != "", np.nan)


def load_panel(source, frequency: str) -> PanelDataset:
    """Read a comma-separated firm-period file into a :class:`PanelDataset`.

    Rows whose period or numeric fields fail to parse are dropped and counted
    in ``dataset.dropped_rows``. Missing firm ids or industry codes are kept
    here and removed during cleaning.
    """
    P.check_frequency(frequency)
    raw = _read_table(source)
    raw.columns = [c.strip() for c in raw.columns]
    for col in REQUIRED_COLUMNS:
        if col not in raw.columns:
            raise SchemaError(f"missing required column: {col}")
    df = pd.DataFrame({"firm_id": _clean_id(raw["firm_id"]), "naics2": _clean_id(raw["naics2"])})
    df["period"] = [P.parse_period(p, frequency) for p in raw["period"]]
    for col in NUMERIC_COLUMNS:
        df[col] = pd.to_numeric(raw[col].str.strip(), errors="coerce")
    if "wage_bill" in raw.columns:
        df["wage_bill"] = pd.to_numeric(raw["wage_bill"].str.strip(), errors="coerce")
    ok = df["period"].notna() & df[list(NUMERIC_COLUMNS)].notna().all(axis=1)
    dropped = int((~ok).sum())
    df = df[ok].copy()
    df["period"] = df["period"].astype(np.int64)

    keyed = df.dropna(subset=["firm_id"])
    dup = keyed.duplicated(subset=["firm_id", "period"], keep=False)
    if dup.any():
        offenders = sorted({(f, P.format_period(p, frequency))
                            for f, p in keyed.loc[dup, ["firm_id", "period"]].itertuples(index=False)})
        raise IntegrityError(f"duplicate (firm_id, period) rows: {offenders}")
    cols = ["firm_id", "period", "sales", "cogs", "xsga", "ppegt", "emp", "naics2"]
    if "wage_bill" in df:
        cols.append("wage_bill")
    return PanelDataset(df[cols], frequency, dropped_rows=dropped)


# ---------------------------------------------------------------- elasticities

class IndustryElasticityTable:
    """Map (naics2, period) -> output elasticity theta, with fallbacks.

    Lookup order: exact period, the period's year, any period for the
    industry (``"*"``), then the wildcard default.
    """

    def __init__(self, entries: Optional[Mapping] = None, default: Optional[float] = None):
        self._map = {}
        for (ind, per), theta in (entries or {}).items():
            self._set(str(ind), str(per), float(theta))
        if default is not None:
            self._set("*", "*", float(default))

    def _set(self, ind, per, theta):
        if not theta > 0:
            raise DomainError(f"theta must be positive, got {theta} for ({ind}, {per})")
        self._map[(ind.strip(), per.strip())] = theta

    @property
    def default(self):
        return self._map.get(("*", "*"))

    @classmethod
    def constant(cls, theta: float) -> "IndustryElasticityTable":
        return cls(default=theta)

    @classmethod
    def from_csv(cls, source) -> "IndustryElasticityTable":
        raw = _read_table(source)
        raw.columns = [c.strip() for c in raw.columns]
        for col in ("naics2", "period", "theta"):
            if col not in raw.columns:
                raise SchemaError(f"elasticity table missing column: {col}")
        table = cls()
        for ind, per, theta in raw[["naics2", "period", "theta"]].itertuples(index=False):
            table._set(str(ind), str(per), float(theta))
        return table

    def lookup(self, naics2, period: int, frequency: str) -> float:
        ind = "*" if naics2 is None or (isinstance(naics2, float) and np.isnan(naics2)) else str(naics2)
        keys = [(ind, P.format_period(period, frequency)), (ind, str(P.year_of(period, frequency))),
                (ind, "*"), ("*", P.format_period(period, frequency)),
                ("*", str(P.year_of(period, frequency))), ("*", "*")]
        for k in keys:
            if k in self._map:
                return self._map[k]
        raise KeyError(f"no elasticity for industry {naics2} in period {period}")


def compute_markup(obs: FirmObservation, theta: IndustryElasticityTable, frequency="yearly") -> float:
    """Output elasticity times sales over COGS."""
    if not obs.cogs > 0:
        raise DomainError("COGS must be positive to compute a markup")
    th = theta.lookup(obs.naics2, obs.period, frequency) if isinstance(theta, IndustryElasticityTable) else float(theta)
    return th * obs.sales / obs.cogs


def compute_profit_rate(obs: FirmObservation) -> float:
    if not obs.sales > 0:
        raise DomainError("sales must be positive to compute a profit rate")
    return (obs.sales - obs.cogs - obs.xsga) / obs.sales


def markup_values(frame: pd.DataFrame, theta, frequency: str) -> np.ndarray:
    cogs = frame["cogs"].to_numpy(dtype=float)
    if np.any(cogs <= 0):
        raise DomainError("COGS must be positive to compute markups")
    if isinstance(theta, IndustryElasticityTable):
        th = np.array([theta.lookup(i, p, frequency)
                       for i, p in zip(frame["naics2"], frame["period"])])
    else:
        th = float(theta)
    return th * frame["sales"].to_numpy(dtype=float) / cogs


def profit_rate_values(frame: pd.DataFrame) -> np.ndarray:
    sales = frame["sales"].to_numpy(dtype=float)
    if np.any(sales <= 0):
        raise DomainError("sales must be positive to compute profit rates")
    return (sales - frame["cogs"].to_numpy(dtype=float) - frame["xsga"].to_numpy(dtype=float)) / sales


def outcome_frame(data: PanelDataset, theta=None) -> pd.DataFrame:
    """Long frame of firm_id, period, naics2, sales, cogs, markup, profit_rate."""
    df = data.frame
    out = df[["firm_id", "period", "naics2", "sales", "cogs"]].copy()
    out["markup"] = markup_values(df, theta if theta is not None else 1.0, data.frequency)
    out["profit_rate"] = profit_rate_values(df)
    return out


# -------------------------------------------------------------------- cleaning

@dataclass
class CleaningConfig:
    lower_pct: float = 1.0
    upper_pct: float = 99.0
    share_lower_pct: float = 1.0
    share_upper_pct: float = 99.0
    min_pre_periods: Optional[int] = None  # None -> 3 yearly, 20 quarterly
    deflator: Optional[Mapping] = None  # period code or year -> index
    deflator_base: int = 2010
    treatment_start: int = 2020  # year
    capital_column: str = "ppegt"

    def __post_init__(self):
        for lo, hi in ((self.lower_pct, self.upper_pct), (self.share_lower_pct, self.share_upper_pct)):
            if not 0 <= lo < hi <= 100:
                raise DomainError("percentile bounds must satisfy 0 <= lower < upper <= 100")
        if self.min_pre_periods is not None and self.min_pre_periods < 2:
            raise DomainError("minimum pre-treatment length must be at least 2")

    def min_pre(self, frequency: str) -> int:
        if self.min_pre_periods is not None:
            return self.min_pre_periods
        return 20 if frequency == "quarterly" else 3

    def treatment_code(self, frequency: str) -> int:
        return P.year_start(self.treatment_start, frequency)


@dataclass
class CleaningLog:
    steps: dict = field(default_factory=dict)
    firms_removed: dict = field(default_factory=dict)  # firm_id -> reason

    STEP_NAMES = (
        "negative_values",
        "deflate",
        "ratio_trim",
        "missing_ids",
        "cost_share_trim",
        "short_or_early_exit",
    )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": list(self.steps), "rows_removed": list(self.steps.values())})


def _trim_mask(values: np.ndarray, groups: np.ndarray, lo_pct: float, hi_pct: float) -> np.ndarray:
    """True for rows to keep: within [lo, hi] percentiles of their group (ties kept)."""
    keep = np.ones(values.shape[0], dtype=bool)
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        v = values[idx]
        lo, hi = np.percentile(v, [lo_pct, hi_pct], method="linear")
        keep[idx] = (v >= lo) & (v <= hi)
    return keep


def _deflator_lookup(deflator: Mapping, code: int, frequency: str):
    if code in deflator:
        return deflator[code]
    year = P.year_of(code, frequency)
    return deflator.get(year)


def clean_panel(data: PanelDataset, cfg: CleaningConfig):
    """Apply the sample-construction rules in order; return (dataset, log)."""
    freq = data.frequency
    df = data.frame.copy()
    log = CleaningLog()

    bad = (df["sales"] < 0) | (df["cogs"] < 0) | (df["xsga"] < 0)
    log.steps["negative_values"] = int(bad.sum())
    df = df[~bad]

    if cfg.deflator is not None:
        codes = df["period"].to_numpy()
        factors = np.array([_deflator_lookup(cfg.deflator, c, freq) or np.nan for c in codes], dtype=float)
        base = _deflator_lookup(cfg.deflator, P.year_start(cfg.deflator_base, freq), freq)
        if base is None:
            base = cfg.deflator.get(cfg.deflator_base)
        missing = sorted({P.format_period(c, freq) for c, f in zip(codes, factors) if not np.isfinite(f)})
        if missing or base is None:
            raise CoverageError(f"deflator does not cover periods: {missing or [cfg.deflator_base]}")
        scale = factors / float(base)
        for col in CURRENCY_COLUMNS:
            if col in df:
                df[col] = df[col].to_numpy(dtype=float) / scale
    log.steps["deflate"] = 0

    if len(df):
        per = df["period"].to_numpy()
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = (df["cogs"] / df["sales"]).to_numpy()
            r2 = (df["xsga"] / df["sales"]).to_numpy()
        finite = np.isfinite(r1) & np.isfinite(r2)
        keep = finite.copy()
        keep[finite] = (_trim_mask(r1[finite], per[finite], cfg.lower_pct, cfg.upper_pct)
                        & _trim_mask(r2[finite], per[finite], cfg.lower_pct, cfg.upper_pct))
        log.steps["ratio_trim"] = int((~keep).sum())
        df = df[keep]
    else:
        log.steps["ratio_trim"] = 0

    miss = df["firm_id"].isna() | df["naics2"].isna()
    log.steps["missing_ids"] = int(miss.sum())
    df = df[~miss]

    if len(df):
        cap = df[cfg.capital_column].to_numpy(dtype=float)
        cogs = df["cogs"].to_numpy(dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            s1 = cogs / (cogs + cap)
            s2 = cogs / (cogs + cap + df["xsga"].to_numpy(dtype=float))
        per = df["period"].to_numpy()
        finite = np.isfinite(s1) & np.isfinite(s2)
        keep = finite.copy()
        keep[finite] = (_trim_mask(s1[finite], per[finite], cfg.share_lower_pct, cfg.share_upper_pct)
                        & _trim_mask(s2[finite], per[finite], cfg.share_lower_pct, cfg.share_upper_pct))
        log.steps["cost_share_trim"] = int((~keep).sum())
        df = df[keep]
    else:
        log.steps["cost_share_trim"] = 0

    start = cfg.treatment_code(freq)
    need = cfg.min_pre(freq)
    before = len(df)
    keep_firms = []
    for fid, g in df.groupby("firm_id", sort=True):
        per = g["period"].to_numpy()
        n_pre = int((per < start).sum())
        if per.max() < start:
            log.firms_removed[fid] = "exits before treatment start"
        elif n_pre < need:
            log.firms_removed[fid] = f"{n_pre} pre-treatment periods < {need}"
        else:
            keep_firms.append(fid)
    df = df[df["firm_id"].isin(keep_firms)]
    log.steps["short_or_early_exit"] = before - len(df)

    if df.empty:
        raise EmptyResultError("no observations left after cleaning")
    return PanelDataset(df, freq), log


# ----------------------------------------------------------------- descriptives

def entry_exit_rates(data: PanelDataset) -> pd.DataFrame:
    """Per-period entry and exit rates; a firm enters at its first and exits at its last period."""
    df = data.frame.dropna(subset=["firm_id"])
    if df.empty:
        raise EmptyResultError("empty dataset")
    span = df.groupby("firm_id")["period"].agg(["min", "max"])
    count = df.groupby("period")["firm_id"].nunique()
    entries = span["min"].value_counts().reindex(count.index, fill_value=0)
    exits = span["max"].value_counts().reindex(count.index, fill_value=0)
    out = pd.DataFrame({
        "period": count.index.to_numpy(),
        "firm_count": count.to_numpy(),
        "entries": entries.to_numpy(),
        "exits": exits.to_numpy(),
    })
    out["entry_rate"] = out["entries"] / out["firm_count"]
    out["exit_rate"] = out["exits"] / out["firm_count"]
    return out


def rolling_cv(series, window: int = 5):
    """Absolute coefficient of variation over trailing windows (sample sd).

    Returns one value per window end, starting at the ``window``-th
    observation; windows with zero mean give NaN.
    """
    is_pd = isinstance(series, pd.Series)
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < window:
        return series.iloc[:0].astype(float) if is_pd else np.empty(0)
    w = np.lib.stride_tricks.sliding_window_view(x, window)
    mean = w.mean(axis=1)
    sd = w.std(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cv = np.where(mean == 0, np.nan, np.abs(sd / np.where(mean == 0, 1.0, mean)))
    if is_pd:
        return pd.Series(cv, index=series.index[window - 1:], name="cv")
    return cv


def aggregate_outcome_series(frame: pd.DataFrame, outcome: str, weight: str = "sales") -> pd.DataFrame:
    """Per-period weighted mean and quartiles of an outcome (volatility inputs)."""
    rows = []
    for per, g in frame.groupby("period", sort=True):
        v = g[outcome].to_numpy(dtype=float)
        w = g[weight].to_numpy(dtype=float)
        q1, q2, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        rows.append((per, float(np.sum(w * v) / np.sum(w)), q1, q2, q3))
    return pd.DataFrame(rows, columns=["period", "mean", "q1", "q2", "q3"])


def derive_covariates(data: PanelDataset, baseline_years=(2015, 2019), treatment_start: int = 2020) -> pd.DataFrame:
    """Firm covariates over a baseline window.

    Returns one row per firm with the log of the window-average COGS, sales
    and employment, stock tenure in years at the treatment start, the
    window-average within-industry sales share, the industry code, and a
    ``missing`` flag for firms that cannot enter the regressions.
    """
    freq = data.frequency
    y0, y1 = baseline_years
    start_code, end_code = P.year_start(y0, freq), P.year_start(y1 + 1, freq) - 1
    ts = P.year_start(treatment_start, freq)
    if end_code >= ts:
        raise DomainError("baseline window must precede the treatment start")
    df = data.frame.dropna(subset=["firm_id"])
    entry = df.groupby("firm_id")["period"].min()
    ind_total = df.groupby(["naics2", "period"])["sales"].transform("sum")
    df = df.assign(share=df["sales"] / ind_total)
    win = df[(df["period"] >= start_code) & (df["period"] <= end_code)]
    agg = win.groupby("firm_id").agg(cogs=("cogs", "mean"), sales=("sales", "mean"),
                                     emp=("emp", "mean"), market_share=("share", "mean"))
    last_ind = df.groupby("firm_id")["naics2"].last()
    out = pd.DataFrame(index=pd.Index(sorted(entry.index), name="firm_id"))
    out["naics2"] = last_ind.reindex(out.index)
    with np.errstate(divide="ignore", invalid="ignore"):
        out["log_cogs"] = np.log(agg["cogs"].reindex(out.index).where(lambda s: s > 0))
        out["log_sales"] = np.log(agg["sales"].reindex(out.index).where(lambda s: s > 0))
        out["log_emp"] = np.log(agg["emp"].reindex(out.index).where(lambda s: s > 0))
    out["stock_tenure"] = (ts - entry.reindex(out.index)) / P.periods_per_year(freq)
    out["market_share"] = agg["market_share"].reindex(out.index)
    cols = ["log_cogs", "log_sales", "log_emp", "stock_tenure", "market_share"]
    out["missing"] = out[cols].isna().any(axis=1)
    return out


def longest_contiguous_run(periods, values, before: Optional[int] = None):
    """Longest run of consecutive period codes (restricted to ``< before``).

    Ties go to the most recent run. Returns (periods, values) arrays.
    """
    per = np.asarray(periods)
    val = np.asarray(values, dtype=float)
    order = np.argsort(per, kind="mergesort")
    per, val = per[order], val[order]
    if before is not None:
        m = per < before
        per, val = per[m], val[m]
    if per.size == 0:
        return per, val
    breaks = np.flatnonzero(np.diff(per) != 1) + 1
    bounds = np.concatenate([[0], breaks, [per.size]])
    lengths = np.diff(bounds)
    best = len(lengths) - 1 - int(np.argmax(lengths[::-1]))
    a, b = bounds[best], bounds[best + 1]
    return per[a:b], val[a:b]


def load_deflator(source, frequency: str) -> dict:
    """Read a ``period,index`` file into {period code or year: index}."""
    raw = _read_table(source)
    raw.columns = [c.strip() for c in raw.columns]
    for col in ("period", "index"):
        if col not in raw.columns:
            raise SchemaError(f"deflator missing column: {col}")
    out = {}
    for per, idx in raw[["period", "index"]].itertuples(index=False):
        code = P.parse_period(per, frequency)
        if code is None and frequency == "quarterly":
            code = P.parse_period(per, "yearly")
        if code is None:
            raise SchemaError(f"unparseable deflator period {per!r}")
        out[code] = float(idx)
    return out

