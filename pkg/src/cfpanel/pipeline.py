"""End-to-end pipeline steps behind the command line.

Every step reads its inputs from and writes its outputs to ``cfg.outdir``:

    ingest         cleaned/panel.csv, cleaned/cleaning_log.csv, cleaned/firms_removed.csv
    fit            forecasts/<set>.jsonl, draws/<set>.bin, forecasts/skips.csv
    diagnose       diagnostics/*.csv (fit coverage, normality, holdout quality)
    effects        effects/<set>_*.csv, effects/summary.csv
    heterogeneity  heterogeneity/<set>_*.csv
    report         all of the above post-fit files plus report/*.csv descriptives

A fit set is one (outcome, estimator, prior scale factor) combination.
"""
from __future__ import annotations

import hashlib
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd

from . import periods as P
from .artifacts import ensure_dir, iter_draws, read_records, write_draws, write_records
from .bsts import (DEFAULT_LEVELS, ForecastDistribution, ModelSpec, PriorConfig, fit_series, fitted_bands,
                   forecast_distribution, hp_filter, hp_lambda, scale_hyperparameters)
from .config import RunConfig
from .diagnostics import coverage_fraction, fleet_coverage, forecast_quality, normality_screen
from .effects import (aggregate_fleet, average_effect_pvalue, baseline_means, effect_estimates,
                      fdr_significant_count, pc_correlation_audit, scaled_effects, significant_fraction_series)
from .errors import (CfPanelError, ConvergenceWarning, DataError, DependencyError, LeakageError,
                     NumericalFailureError, SampleSizeError, SchemaError, SkipThresholdError)
from .heterogeneity import (COVARIATES, binscatter, heterogeneity_regression, heterogeneity_table,
                            industry_breakdown)
from .llp import bootstrap_aggregate_ci, fit_firm_llp, fit_panel_llp
from .panel_store import (IndustryElasticityTable, PanelDataset, aggregate_outcome_series, clean_panel,
                          derive_covariates, entry_exit_rates, load_deflator, load_panel,
                          longest_contiguous_run, outcome_frame, rolling_cv)

log = logging.getLogger(__name__)

LLP_VARIANTS = {"llp_firm": "firm_specific", "llp_panel": "panel_fixed_effects"}
PROGRESS_EVERY = 100


# ------------------------------------------------------------------- helpers

def firm_rng(seed: int, firm_id, tag: str) -> np.random.Generator:
    """Generator keyed by (global seed, firm id, stream tag); stable under
    adding or removing other firms."""
    digest = hashlib.sha256(f"{firm_id}\x1f{tag}".encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


def _path(cfg: RunConfig, *parts) -> str:
    return os.path.join(cfg.outdir, *parts)


def _require(path: str, step: str) -> str:
    if not os.path.exists(path):
        raise DependencyError(f"missing {path}; run the '{step}' step first")
    return path


def _write_csv(df: pd.DataFrame, path: str) -> None:
    ensure_dir(os.path.dirname(path))
    df.to_csv(path, index=False, lineterminator="\n")


def theta_table(cfg: RunConfig) -> IndustryElasticityTable:
    if cfg.elasticities:
        return IndustryElasticityTable.from_csv(cfg.elasticities)
    return IndustryElasticityTable.constant(cfg.theta_default)


@dataclass(frozen=True)
class FitSet:
    outcome: str
    estimator: str
    factor: float = 1.0

    @property
    def name(self) -> str:
        base = f"{self.outcome}__{self.estimator}"
        return base if self.factor == 1.0 else f"{base}__x{self.factor:g}"


def fit_sets(cfg: RunConfig) -> list:
    out = []
    for outcome in cfg.outcomes:
        for est in cfg.estimators:
            out.append(FitSet(outcome, est))
            if est == "bsts":
                out += [FitSet(outcome, est, float(f)) for f in cfg.sensitivity if float(f) != 1.0]
    return out


def _map(func, jobs: list, workers: int, label: str) -> list:
    """Ordered map with optional process pool and progress logging."""
    out = []
    if workers <= 1 or len(jobs) < 2:
        it = map(func, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        it = pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * workers)))
    try:
        for i, res in enumerate(it, 1):
            out.append(res)
            if i % PROGRESS_EVERY == 0:
                log.info("%s: %d/%d firms", label, i, len(jobs))
    finally:
        if pool is not None:
            pool.shutdown()
    return out


# -------------------------------------------------------------------- ingest

def cmd_ingest(cfg: RunConfig) -> dict:
    cfg.validate()
    theta_table(cfg)  # fail early on a bad elasticity file
    data = load_panel(cfg.panel, cfg.frequency)
    deflator = load_deflator(cfg.deflator, cfg.frequency) if cfg.deflator else None
    cleaned, clog = clean_panel(data, replace(cfg.cleaning, deflator=deflator))
    ensure_dir(_path(cfg, "cleaned"))
    cleaned.to_csv(_path(cfg, "cleaned", "panel.csv"))
    steps = pd.concat([pd.DataFrame({"step": ["unparseable_rows"], "rows_removed": [data.dropped_rows]}),
                       clog.to_frame()], ignore_index=True)
    _write_csv(steps, _path(cfg, "cleaned", "cleaning_log.csv"))
    removed = pd.DataFrame(sorted(clog.firms_removed.items()), columns=["firm_id", "reason"])
    _write_csv(removed, _path(cfg, "cleaned", "firms_removed.csv"))
    log.info("ingest: %d rows in, %d rows / %d firms kept", len(data) + data.dropped_rows, len(cleaned),
             cleaned.n_firms)
    return {"rows_in": len(data) + data.dropped_rows, "rows_out": len(cleaned), "firms": cleaned.n_firms,
            "log": steps}


def load_cleaned(cfg: RunConfig) -> PanelDataset:
    return load_panel(_require(_path(cfg, "cleaned", "panel.csv"), "ingest"), cfg.frequency)


def outcomes_of(cfg: RunConfig, data: PanelDataset) -> pd.DataFrame:
    df = outcome_frame(data, theta_table(cfg))
    extra = data.frame[["firm_id", "period", "xsga", "emp"]]
    return df.merge(extra, on=["firm_id", "period"], how="left")


# ----------------------------------------------------------------- fit inputs

class CutoffView:
    """Outcome rows strictly before ``cutoff``; later rows are never stored.

    ``check`` is called inside every fit job on the periods actually used
    and raises :class:`LeakageError` if any lies at or beyond the cutoff.
    """

    def __init__(self, frame: pd.DataFrame, cutoff: int):
        self.cutoff = int(cutoff)
        self._frame = frame[frame["period"] < self.cutoff].copy()

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    def runs(self, outcome: str) -> dict:
        """firm -> (periods, values) of the longest contiguous run before the cutoff."""
        out = {}
        for fid, g in self._frame.groupby("firm_id", sort=True):
            v = g[outcome].to_numpy(dtype=float)
            ok = np.isfinite(v)
            out[fid] = longest_contiguous_run(g["period"].to_numpy()[ok], v[ok], before=self.cutoff)
        return out

    @staticmethod
    def check(periods, cutoff: int) -> None:
        if len(periods) and int(np.max(periods)) >= cutoff:
            raise LeakageError(f"fit saw period {int(np.max(periods))} >= cutoff {cutoff}")


def _cycle_map(cfg: RunConfig) -> Optional[dict]:
    if not cfg.cycle:
        return None
    raw = pd.read_csv(cfg.cycle, dtype=str, keep_default_na=False)
    raw.columns = [c.strip() for c in raw.columns]
    if "period" not in raw or "value" not in raw:
        raise SchemaError("cycle file needs columns period, value")
    codes = [P.parse_period(p, cfg.frequency) for p in raw["period"]]
    if any(c is None for c in codes):
        raise SchemaError("unparseable period in cycle file")
    vals = pd.to_numeric(raw["value"], errors="coerce").to_numpy(dtype=float)
    order = np.argsort(codes)
    codes = np.asarray(codes)[order]
    vals = vals[order]
    if np.any(np.diff(codes) != 1) or not np.all(np.isfinite(vals)):
        raise DataError("cycle series must be contiguous and numeric")
    lamb = cfg.hp_lambda if cfg.hp_lambda is not None else hp_lambda(cfg.frequency)
    _, cyc = hp_filter(vals, lamb)
    return dict(zip(codes.tolist(), cyc.tolist()))


def _bsts_job(job: dict) -> dict:
    fid = job["firm_id"]
    per, y = job["periods"], job["values"]
    CutoffView.check(per, job["cutoff"])
    spec: ModelSpec = job["spec"]
    need = 2 * 4 if spec.has_seasonal else 3
    if len(y) < need:
        return {"firm_id": fid, "skip": f"{len(y)} contiguous pre-periods < {need}"}
    rng = firm_rng(job["seed"], fid, job["tag"])
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            draws = fit_series(y, spec, job["priors"], rng=rng, cycle=job.get("cycle"),
                               cycle_future=job.get("cycle_future"), keep_states=False)
    except (DataError, NumericalFailureError) as exc:
        return {"firm_id": fid, "skip": f"{type(exc).__name__}: {exc}"}
    off = job["offset"]
    paths = draws.paths[:, off:]
    fc = forecast_distribution(paths, DEFAULT_LEVELS)
    lo, hi = fitted_bands(draws, 0.95)
    rec = {
        "firm_id": fid,
        "n_pre": len(y),
        "fit_start": int(per[0]),
        "fit_end": int(per[-1]),
        "point": fc.point,
        "intervals": {f"{lev:g}": {"lo": fc.intervals[lev][0], "hi": fc.intervals[lev][1]}
                      for lev in DEFAULT_LEVELS},
        "variance_means": draws.variance_means(),
        "ess": draws.ess,
        "coverage_fraction": coverage_fraction(y, lo, hi),
        "low_ess": any(issubclass(w.category, ConvergenceWarning) for w in caught),
    }
    if draws.alpha is not None:
        rec["alpha_mean"] = float(draws.alpha.mean())
        rec["alpha_interval"] = list(draws.alpha_interval(0.95))
        rec["alpha_significant"] = draws.alpha_significant(0.95)
    return {"firm_id": fid, "record": rec, "paths": paths}


def _run_bsts(cfg: RunConfig, view: CutoffView, outcome: str, first_target: int, horizon: int,
              priors: PriorConfig, tag: str, cycle: Optional[dict]):
    jobs = []
    for fid, (per, y) in view.runs(outcome).items():
        offset = int(first_target - 1 - per[-1]) if len(per) else 0
        spec = replace(cfg.model, horizon=horizon + offset, has_seasonal=cfg.use_seasonal(),
                       has_cycle=cycle is not None, seed=cfg.seed)
        job = {"firm_id": fid, "periods": per, "values": y, "cutoff": view.cutoff, "spec": spec,
               "priors": priors, "seed": cfg.seed, "tag": tag, "offset": offset}
        if cycle is not None and len(per):
            need = list(per) + list(range(int(per[-1]) + 1, int(per[-1]) + 1 + horizon + offset))
            if any(c not in cycle for c in per):
                jobs.append({**job, "values": np.empty(0), "periods": np.empty(0, dtype=int),
                             "skip_reason": "cycle series does not cover the fit sample"})
                continue
            job["cycle"] = np.array([cycle[c] for c in per])
            job["cycle_future"] = np.array([cycle.get(c, 0.0) for c in need[len(per):]])
        jobs.append(job)
    results = _map(_bsts_job_guarded, jobs, cfg.workers, f"bsts {tag}")
    return results


def _bsts_job_guarded(job: dict) -> dict:
    if "skip_reason" in job:
        return {"firm_id": job["firm_id"], "skip": job["skip_reason"]}
    return _bsts_job(job)


def _run_llp(cfg: RunConfig, view: CutoffView, outcome: str, first_target: int, horizon: int,
             variant: str) -> list:
    runs = view.runs(outcome)
    offsets = {fid: int(first_target - 1 - per[-1]) if len(per) else 0 for fid, (per, _) in runs.items()}
    for per, _ in runs.values():
        CutoffView.check(per, view.cutoff)
    results = []
    if variant == "firm_specific":
        for fid, (per, y) in runs.items():
            off = offsets[fid]
            try:
                f = fit_firm_llp(y, replace(cfg.llp, variant=variant, horizon=horizon + off))
            except DataError as exc:
                results.append({"firm_id": fid, "skip": f"{type(exc).__name__}: {exc}"})
                continue
            results.append({"firm_id": fid, "record": {
                "firm_id": fid, "n_pre": len(y), "fit_start": int(per[0]), "fit_end": int(per[-1]),
                "point": f.forecasts["_"][off:], "lag": f.lag}})
        return results
    H = horizon + max(offsets.values(), default=0)
    series = {fid: y for fid, (_, y) in runs.items()}
    try:
        f = fit_panel_llp(series, replace(cfg.llp, variant=variant, horizon=H))
    except DataError as exc:
        return [{"firm_id": fid, "skip": f"{type(exc).__name__}: {exc}"} for fid in runs]
    for fid, (per, y) in runs.items():
        if fid not in f.forecasts:
            results.append({"firm_id": fid, "skip": f.flags.get(fid, "skipped")})
            continue
        off = offsets[fid]
        rec = {"firm_id": fid, "n_pre": len(y), "fit_start": int(per[0]) if len(per) else None,
               "fit_end": int(per[-1]) if len(per) else None,
               "point": f.forecasts[fid][off:off + horizon], "lag": f.lag}
        if fid in f.flags:
            rec["flag"] = f.flags[fid]
        results.append({"firm_id": fid, "record": rec})
    return results


def run_fit_set(cfg: RunConfig, frame: pd.DataFrame, fs: FitSet, cutoff: int, horizon: int,
                cycle: Optional[dict] = None, tag: str = "") -> list:
    """Fit one set on rows before ``cutoff``; forecast ``horizon`` periods from ``cutoff`` on."""
    view = CutoffView(frame, cutoff)
    if fs.estimator == "bsts":
        priors = cfg.priors if fs.factor == 1.0 else scale_hyperparameters(cfg.priors, fs.factor)
        return _run_bsts(cfg, view, fs.outcome, cutoff, horizon, priors, tag or fs.name, cycle)
    return _run_llp(cfg, view, fs.outcome, cutoff, horizon, LLP_VARIANTS[fs.estimator])


def _target_periods(cfg: RunConfig, start: int, horizon: int) -> list:
    return [P.format_period(c, cfg.frequency) for c in range(start, start + horizon)]


# ----------------------------------------------------------------------- fit

def cmd_fit(cfg: RunConfig) -> dict:
    data = load_cleaned(cfg)
    frame = outcomes_of(cfg, data)
    firms = data.firm_ids
    t0 = cfg.cleaning.treatment_code(cfg.frequency)
    H = cfg.horizon()
    cycle = _cycle_map(cfg)
    ensure_dir(_path(cfg, "forecasts"))
    if cfg.write_draws:
        ensure_dir(_path(cfg, "draws"))
    skip_rows, summary = [], {}
    worst = 0.0
    for fs in fit_sets(cfg):
        results = run_fit_set(cfg, frame, fs, t0, H, cycle if fs.estimator == "bsts" else None)
        by_firm = {r["firm_id"]: r for r in results}
        recs, draws_out, n_skip = [], [], 0
        for fid in firms:
            r = by_firm.get(fid, {"firm_id": fid, "skip": "no outcome data before treatment"})
            if "skip" in r:
                n_skip += 1
                skip_rows.append((fs.name, fid, r["skip"]))
                continue
            rec = dict(r["record"])
            rec.update({"outcome": fs.outcome, "estimator": fs.estimator, "factor": fs.factor,
                        "periods": _target_periods(cfg, t0, H)})
            recs.append(rec)
            if "paths" in r:
                draws_out.append((fid, r["paths"]))
        write_records(_path(cfg, "forecasts", f"{fs.name}.jsonl"), recs)
        if cfg.write_draws and fs.estimator == "bsts":
            write_draws(_path(cfg, "draws", f"{fs.name}.bin"), draws_out)
        frac = n_skip / max(len(firms), 1)
        worst = max(worst, frac)
        summary[fs.name] = {"fitted": len(recs), "skipped": n_skip}
        log.info("fit %s: %d fitted, %d skipped", fs.name, len(recs), n_skip)
    _write_csv(pd.DataFrame(skip_rows, columns=["fit_set", "firm_id", "reason"]),
               _path(cfg, "forecasts", "skips.csv"))
    if worst > cfg.max_skip_fraction:
        raise SkipThresholdError(f"skip fraction {worst:.3f} exceeds {cfg.max_skip_fraction}")
    return summary


def _load_set(cfg: RunConfig, fs: FitSet):
    recs = read_records(_require(_path(cfg, "forecasts", f"{fs.name}.jsonl"), "fit"))
    draws = None
    if fs.estimator == "bsts":
        p = _path(cfg, "draws", f"{fs.name}.bin")
        if os.path.exists(p):
            draws = dict(iter_draws(p))
    return recs, draws


# ------------------------------------------------------------------ diagnose

def cmd_diagnose(cfg: RunConfig) -> dict:
    data = load_cleaned(cfg)
    frame = outcomes_of(cfg, data)
    t0 = cfg.cleaning.treatment_code(cfg.frequency)
    out = {}

    rows = []
    for fs in fit_sets(cfg):
        if fs.estimator != "bsts" or fs.factor != 1.0:
            continue
        recs, _ = _load_set(cfg, fs)
        fr = [r["coverage_fraction"] for r in recs if r.get("coverage_fraction") is not None]
        if fr:
            s = fleet_coverage(fr)
            rows.append((fs.outcome, cfg.frequency, s["average"], s["p75"], s["n_firms"]))
    cov = pd.DataFrame(rows, columns=["outcome", "frequency", "average", "p75", "n_firms"])
    _write_csv(cov, _path(cfg, "diagnostics", "coverage.csv"))
    out["coverage"] = cov

    rows = []
    pre = frame[frame["period"] < t0]
    for outcome in cfg.outcomes:
        diffs = {}
        for fid, g in pre.groupby("firm_id", sort=True):
            per, v = longest_contiguous_run(g["period"].to_numpy(), g[outcome].to_numpy(dtype=float))
            diffs[fid] = np.diff(v)
        res = normality_screen(diffs)
        rows.append({"outcome": outcome, "frequency": cfg.frequency,
                     **{k: v for k, v in res.items() if k != "p_values"}})
    norm = pd.DataFrame(rows)
    _write_csv(norm, _path(cfg, "diagnostics", "normality.csv"))
    out["normality"] = norm

    out["quality"] = holdout_quality(cfg, frame)
    _write_csv(out["quality"], _path(cfg, "diagnostics", "holdout_quality.csv"))
    return out


def holdout_quality(cfg: RunConfig, frame: pd.DataFrame) -> pd.DataFrame:
    """Fit on data through the holdout cutoff year and score forecasts of the
    following years, one row per outcome, estimator and year.

    Within an outcome every estimator is scored on the same firm-periods: the
    ones all estimators produced a finite forecast for. A firm that one
    estimator skips would otherwise make the error tables incomparable.
    """
    cut = P.year_start(cfg.holdout_cutoff + 1, cfg.frequency)
    H = cfg.holdout_horizon()
    actual = frame[(frame["period"] >= cut) & (frame["period"] < cut + H)]
    rows = []
    for outcome in cfg.outcomes:
        act = actual.set_index(["firm_id", "period"])[outcome]
        by_est = {}
        for est in cfg.estimators:
            fs = FitSet(outcome, est)
            results = run_fit_set(cfg, frame, fs, cut, H, None, tag=f"{fs.name}__holdout")
            pairs = {}
            for r in results:
                if "skip" in r:
                    continue
                for h, f in enumerate(r["record"]["point"]):
                    key = (r["firm_id"], cut + h)
                    if key in act.index and np.isfinite(act[key]) and np.isfinite(f):
                        pairs[key] = (act[key], f)
            by_est[est] = pairs
        common = set.intersection(*(set(p) for p in by_est.values())) if by_est else set()
        dropped = max((len(p) for p in by_est.values()), default=0) - len(common)
        if dropped:
            log.info("holdout %s: %d firm-periods lack a forecast from some estimator and are not scored",
                     outcome, dropped)
        keys = sorted(common, key=lambda k: (str(k[0]), k[1]))
        for est, pairs in by_est.items():
            pf = pd.DataFrame([(k[0], P.year_of(k[1], cfg.frequency), *pairs[k]) for k in keys],
                              columns=["firm_id", "year", "actual", "forecast"])
            for year in range(cfg.holdout_cutoff + 1, cfg.holdout_end + 1):
                g = pf[pf["year"] == year]
                if g.empty:
                    continue
                q = forecast_quality(g["actual"].to_numpy(), g["forecast"].to_numpy(),
                                     by_firm=g["firm_id"].to_numpy())
                rows.append((outcome, est, cfg.frequency, year, q.ME, q.RMSE, q.MAE, q.MAES, q.MAPE,
                             q.median_MAPE, q.n, q.n_pairs, q.mape_excluded))
    return pd.DataFrame(rows, columns=["outcome", "estimator", "frequency", "year", "ME", "RMSE", "MAE",
                                       "MAES", "MAPE", "median_MAPE", "n_firms", "n_pairs",
                                       "mape_excluded"])


# ------------------------------------------------------------------- effects

def _observed_matrix(cfg: RunConfig, frame: pd.DataFrame, outcome: str, firms: list, t0: int, H: int):
    wcol = {"sales": "sales", "cogs": "cogs"}.get(cfg.weighting)
    idx = frame.set_index(["firm_id", "period"])
    obs = np.full((len(firms), H), np.nan)
    w = np.ones((len(firms), H))
    for i, fid in enumerate(firms):
        for h in range(H):
            key = (fid, t0 + h)
            if key in idx.index:
                obs[i, h] = idx.at[key, outcome]
                if wcol:
                    w[i, h] = idx.at[key, wcol]
    return obs, w


def effects_for_set(cfg: RunConfig, frame: pd.DataFrame, fs: FitSet) -> dict:
    recs, draws = _load_set(cfg, fs)
    t0 = cfg.cleaning.treatment_code(cfg.frequency)
    H = cfg.horizon()
    firms = [r["firm_id"] for r in recs]
    naics = frame.groupby("firm_id")["naics2"].last()
    obs, w = _observed_matrix(cfg, frame, fs.outcome, firms, t0, H)
    rows, avg_p = [], []
    for i, rec in enumerate(recs):
        fid = rec["firm_id"]
        point = np.asarray(rec["point"], dtype=float)
        if fs.estimator == "bsts":
            ivs = {float(k): (np.asarray(v["lo"], dtype=float), np.asarray(v["hi"], dtype=float))
                   for k, v in rec["intervals"].items()}
            paths = draws.get(fid) if draws else None
            fc = forecast_distribution(paths) if paths is not None else None
            if fc is None:
                fc = ForecastDistribution(point, ivs)
        else:
            fc = point
        for h in range(H):
            if not np.isfinite(obs[i, h]):
                continue
            e = effect_estimates([obs[i, h]], _slice(fc, h), firm_id=fid)[0]
            lo95, hi95 = e.intervals.get(0.95, (np.nan, np.nan))
            rows.append((fid, naics.get(fid), t0 + h, P.year_of(t0 + h, cfg.frequency), h + 1, e.observed,
                         e.counterfactual_mean, e.effect, lo95, hi95, e.posterior_p, e.significant, e.sign,
                         w[i, h]))
        if fs.estimator == "bsts" and draws and fid in draws:
            ok = np.isfinite(obs[i])
            if ok.any():
                eff, p = average_effect_pvalue(obs[i, ok], draws[fid][:, ok])
                avg_p.append((fid, eff, p))
    eff = pd.DataFrame(rows, columns=["firm_id", "naics2", "period", "year", "horizon", "observed",
                                      "counterfactual", "effect", "lo95", "hi95", "posterior_p",
                                      "significant", "sign", "weight"])
    eff["period"] = [P.format_period(c, cfg.frequency) for c in eff["period"]]
    _write_csv(eff, _path(cfg, "effects", f"{fs.name}_firm_effects.csv"))
    out = {"firm_effects": eff}

    complete = np.all(np.isfinite(obs), axis=1)
    periods = _target_periods(cfg, t0, H)
    if complete.sum() == 0:
        log.warning("effects %s: no firm observed in every treated period", fs.name)
        return out
    if not complete.all():
        log.info("effects %s: %d firms lack some treated periods and are left out of aggregates",
                 fs.name, int((~complete).sum()))
    sel = [i for i in range(len(firms)) if complete[i]]
    if fs.estimator == "bsts" and draws:
        sel = [i for i in sel if firms[i] in draws]
        paths = [draws[firms[i]] for i in sel]
        n_sim = cfg.model.n_predictive_draws
        frames = []
        for stat in ("mean", "Q1", "Q2", "Q3"):
            agg = aggregate_fleet(obs[sel], paths, weights=w[sel], statistic=stat, n_simulations=n_sim,
                                  seed=cfg.seed)
            f = agg.to_frame(periods)
            f.insert(0, "statistic", stat)
            frames.append(f)
        fan = pd.concat(frames, ignore_index=True)
        _write_csv(fan[fan["statistic"] == "mean"].drop(columns="statistic"),
                   _path(cfg, "effects", f"{fs.name}_fan_mean.csv"))
        _write_csv(fan[fan["statistic"] != "mean"], _path(cfg, "effects", f"{fs.name}_quartiles.csv"))
        out["fan"] = fan
        fr = significant_fraction_series(eff)
        _write_csv(fr, _path(cfg, "effects", f"{fs.name}_fractions.csv"))
        out["fractions"] = fr
        if avg_p:
            ap = pd.DataFrame(avg_p, columns=["firm_id", "average_effect", "posterior_p"])
            _write_csv(ap, _path(cfg, "effects", f"{fs.name}_average_pvalues.csv"))
            counts = fdr_significant_count(ap["posterior_p"].to_numpy())
            _write_csv(pd.DataFrame([counts]), _path(cfg, "effects", f"{fs.name}_fdr.csv"))
            out["fdr"] = counts
        obs_agg = fan[fan["statistic"] == "mean"]["observed"].to_numpy()
        cf_agg = fan[fan["statistic"] == "mean"]["point"].to_numpy()
    else:
        cf = np.array([recs[i]["point"] for i in sel], dtype=float)
        ww = w[sel]
        obs_agg = (obs[sel] * ww).sum(axis=0) / ww.sum(axis=0)
        cf_agg = (cf * ww).sum(axis=0) / ww.sum(axis=0)
        e = obs[sel] - cf
        if len(sel) >= 2:
            lo, hi = _bootstrap_per_period(e, ww, cfg)
        else:
            lo = hi = np.full(H, np.nan)
        boot = pd.DataFrame({"period": periods, "observed": obs_agg, "counterfactual": cf_agg,
                             "effect": obs_agg - cf_agg, "effect_lo95": lo, "effect_hi95": hi})
        _write_csv(boot, _path(cfg, "effects", f"{fs.name}_aggregate.csv"))
        out["aggregate"] = boot
    summ = pd.DataFrame({"fit_set": fs.name, "period": periods, "observed": obs_agg,
                         "counterfactual": cf_agg, "effect": obs_agg - cf_agg})
    if fs.outcome == "markup":
        summ["effect_pct_of_counterfactual"] = 100 * (obs_agg - cf_agg) / cf_agg
    else:
        summ["effect_pp"] = 100 * (obs_agg - cf_agg)
    out["summary"] = summ
    return out


def _slice(fc, h):
    if isinstance(fc, ForecastDistribution):
        ivs = {lev: (lo[h:h + 1], hi[h:h + 1]) for lev, (lo, hi) in fc.intervals.items()}
        return ForecastDistribution(fc.point[h:h + 1], ivs, None if fc.draws is None else fc.draws[:, h:h + 1])
    return np.asarray(fc, dtype=float)[h:h + 1]


def _bootstrap_per_period(e, w, cfg: RunConfig):
    lo, hi = np.empty(e.shape[1]), np.empty(e.shape[1])
    for h in range(e.shape[1]):
        lo[h], hi[h] = (x[0] for x in bootstrap_aggregate_ci(e[:, h], w[:, h], spec=cfg.llp,
                                                             seed=cfg.seed + h))
    return lo, hi


def cmd_effects(cfg: RunConfig) -> dict:
    data = load_cleaned(cfg)
    frame = outcomes_of(cfg, data)
    out, summaries = {}, []
    for fs in fit_sets(cfg):
        res = effects_for_set(cfg, frame, fs)
        out[fs.name] = res
        if "summary" in res:
            summaries.append(res["summary"])
        if fs.outcome == "markup" and fs.factor == 1.0:
            _write_scaled(cfg, frame, fs, res["firm_effects"])
    if summaries:
        _write_csv(pd.concat(summaries, ignore_index=True), _path(cfg, "effects", "summary.csv"))
    return out


def _write_scaled(cfg, frame, fs, eff):
    b0, b1 = cfg.baseline
    base = baseline_means(frame, "markup", P.year_start(b0, cfg.frequency),
                          P.year_start(b1 + 1, cfg.frequency) - 1)
    sc = scaled_effects(eff, base)
    _write_csv(sc[["firm_id", "period", "horizon", "effect", "scaled_effect"]],
               _path(cfg, "effects", f"{fs.name}_scaled.csv"))


# ------------------------------------------------------------- heterogeneity

def cmd_heterogeneity(cfg: RunConfig) -> dict:
    data = load_cleaned(cfg)
    cov = derive_covariates(data, cfg.baseline, cfg.treatment_start).reset_index()
    out = {}
    years = list(range(cfg.treatment_start, cfg.treatment_end + 1))
    for fs in fit_sets(cfg):
        if fs.factor != 1.0:
            continue
        p = _path(cfg, "effects", f"{fs.name}_firm_effects.csv")
        eff = pd.read_csv(_require(p, "effects"), dtype={"firm_id": str, "naics2": str})
        if eff.empty:
            continue
        groups = [("all", years)] + ([(str(y), [y]) for y in years] if len(years) > 1 else [])
        reports = []
        for label, yrs in groups:
            avg = eff[eff["year"].isin(yrs)].groupby("firm_id")["effect"].mean().rename("effect")
            df = cov.merge(avg, left_on="firm_id", right_index=True)
            for fe in (False, True):
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", UserWarning)
                        r = heterogeneity_regression(df, with_industry_fe=fe)
                except SampleSizeError as exc:
                    log.info("heterogeneity %s %s: %s", fs.name, label, exc)
                    continue
                reports.append((f"{label}{' FE' if fe else ''}", r))
        if reports:
            tab = heterogeneity_table(reports)
            tab.index.name = "row"
            ensure_dir(_path(cfg, "heterogeneity"))
            tab.to_csv(_path(cfg, "heterogeneity", f"{fs.name}_table.csv"), lineterminator="\n")
            out[fs.name] = tab
        avg = eff.groupby("firm_id")["effect"].mean().rename("effect")
        df = cov.merge(avg, left_on="firm_id", right_index=True)
        df = df[~df["missing"]]
        bins = []
        for c in COVARIATES:
            if df[c].nunique() >= 2:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UserWarning)
                    b = binscatter(df[c].to_numpy(), df["effect"].to_numpy())
                b.insert(0, "covariate", c)
                bins.append(b)
        if bins:
            _write_csv(pd.concat(bins, ignore_index=True), _path(cfg, "heterogeneity", f"{fs.name}_binscatter.csv"))
        ib = industry_breakdown(eff, weight="weight", order_year=cfg.treatment_start)
        _write_csv(ib.table, _path(cfg, "heterogeneity", f"{fs.name}_industry.csv"))
        _write_csv(ib.reference, _path(cfg, "heterogeneity", f"{fs.name}_industry_reference.csv"))
    return out


# -------------------------------------------------------------------- report

def cmd_report(cfg: RunConfig) -> dict:
    for fs in fit_sets(cfg):
        _require(_path(cfg, "forecasts", f"{fs.name}.jsonl"), "fit")
    out = {"diagnostics": cmd_diagnose(cfg), "effects": cmd_effects(cfg),
           "heterogeneity": cmd_heterogeneity(cfg)}
    data = load_cleaned(cfg)
    frame = outcomes_of(cfg, data)
    ee = entry_exit_rates(data)
    ee["period"] = [P.format_period(c, cfg.frequency) for c in ee["period"]]
    _write_csv(ee, _path(cfg, "report", "entry_exit.csv"))
    wcol = "cogs" if cfg.weighting == "cogs" else "sales"
    vol = []
    for outcome in cfg.outcomes:
        agg = aggregate_outcome_series(frame, outcome, weight=wcol)
        for col in ("mean", "q1", "q2", "q3"):
            cv = rolling_cv(pd.Series(agg[col].to_numpy(), index=agg["period"].to_numpy()), 5)
            vol.append(pd.DataFrame({"outcome": outcome, "series": col,
                                     "period": [P.format_period(c, cfg.frequency) for c in cv.index],
                                     "rolling_cv": cv.to_numpy()}))
        agg["period"] = [P.format_period(c, cfg.frequency) for c in agg["period"]]
        agg.insert(0, "outcome", outcome)
        _write_csv(agg, _path(cfg, "report", f"{outcome}_aggregate_series.csv"))
        wide = frame.pivot(index="period", columns="firm_id", values=outcome).sort_index()
        pc = pc_correlation_audit(wide, 5)
        pc["skipped_windows"] = len(pc["skipped_windows"])
        _write_csv(pd.DataFrame([{"outcome": outcome, **pc}]), _path(cfg, "report", f"{outcome}_pc_audit.csv"))
    if vol:
        _write_csv(pd.concat(vol, ignore_index=True), _path(cfg, "report", "volatility.csv"))
    if cfg.cycle:
        rows = []
        for fs in fit_sets(cfg):
            if fs.estimator != "bsts" or fs.factor != 1.0:
                continue
            recs, _ = _load_set(cfg, fs)
            a = [r for r in recs if r.get("alpha_interval") is not None]
            if a:
                rows.append((fs.outcome, len(a), float(np.mean([r["alpha_mean"] for r in a])),
                             float(np.mean([bool(r["alpha_significant"]) for r in a]))))
        _write_csv(pd.DataFrame(rows, columns=["outcome", "n_firms", "mean_alpha", "share_significant"]),
                   _path(cfg, "report", "cycle_coefficients.csv"))
    return out


def cmd_run(cfg: RunConfig) -> dict:
    """ingest, fit and report in one go."""
    out = {"ingest": cmd_ingest(cfg)}
    try:
        out["fit"] = cmd_fit(cfg)
    except SkipThresholdError:
        cmd_report(cfg)
        raise
    out["report"] = cmd_report(cfg)
    return out


__all__ = ["CfPanelError", "CutoffView", "FitSet", "cmd_diagnose", "cmd_effects", "cmd_fit",
           "cmd_heterogeneity", "cmd_ingest", "cmd_report", "cmd_run", "firm_rng", "fit_sets",
           "holdout_quality", "run_fit_set"]
