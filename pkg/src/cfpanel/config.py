"""Run configuration: INI file with section headers, every setting addressable
as ``section.key`` (priors use ``priors.obs.h1`` style keys)."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from typing import Optional

from .bsts import ModelSpec, PriorConfig
from .errors import ConfigError, DomainError
from .llp import LlpSpec
from .panel_store import CleaningConfig

OUTCOMES = ("markup", "profit_rate")
ESTIMATORS = ("bsts", "llp_firm", "llp_panel")
PRIOR_KEYS = {"h1": 0, "h2": 1, "v": 0, "s": 1}


def _floats(text) -> tuple:
    return tuple(float(x) for x in _words(text))


def _words(text) -> list:
    return [w.strip() for w in str(text).replace(";", ",").split(",") if w.strip()]


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    panel: Optional[str] = None
    elasticities: Optional[str] = None
    theta_default: float = 1.0
    deflator: Optional[str] = None
    cycle: Optional[str] = None
    frequency: str = "yearly"
    outcomes: tuple = OUTCOMES
    estimators: tuple = ESTIMATORS
    weighting: str = "sales"
    outdir: str = "out"
    seed: int = 0
    workers: int = 1
    sensitivity: tuple = ()
    max_skip_fraction: float = 0.5
    treatment_end: int = 2021
    holdout_cutoff: int = 2017
    holdout_end: int = 2019
    baseline: tuple = (2015, 2019)
    seasonal: str = "auto"  # auto | true | false
    hp_lambda: Optional[float] = None
    write_draws: bool = True
    model: ModelSpec = field(default_factory=ModelSpec)
    priors: PriorConfig = field(default_factory=PriorConfig)
    llp: LlpSpec = field(default_factory=LlpSpec)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    source: Optional[str] = None

    @property
    def treatment_start(self) -> int:
        return self.cleaning.treatment_start

    def horizon(self) -> int:
        """Number of treated periods forecast."""
        years = self.treatment_end - self.treatment_start + 1
        return years * (4 if self.frequency == "quarterly" else 1)

    def holdout_horizon(self) -> int:
        years = self.holdout_end - self.holdout_cutoff
        return years * (4 if self.frequency == "quarterly" else 1)

    def use_seasonal(self) -> bool:
        if self.seasonal == "auto":
            return self.frequency == "quarterly"
        return self.seasonal == "true"

    def validate(self, require_panel: bool = True) -> "RunConfig":
        if self.frequency not in ("yearly", "quarterly"):
            raise ConfigError(f"data.frequency must be yearly or quarterly, got {self.frequency!r}")
        bad = [o for o in self.outcomes if o not in OUTCOMES]
        if bad or not self.outcomes:
            raise ConfigError(f"run.outcomes must be a non-empty subset of {OUTCOMES}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"run.estimators must be a non-empty subset of {ESTIMATORS}")
        if self.weighting not in ("sales", "cogs", "none"):
            raise ConfigError("run.weighting must be sales, cogs or none")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if not 0 <= self.max_skip_fraction <= 1:
            raise ConfigError("run.max_skip_fraction must lie in [0, 1]")
        if any(not f > 0 for f in self.sensitivity):
            raise ConfigError("sensitivity factors must be positive")
        if self.treatment_end < self.treatment_start:
            raise ConfigError("run.treatment_end precedes the treatment start")
        if self.holdout_end <= self.holdout_cutoff:
            raise ConfigError("run.holdout_end must follow run.holdout_cutoff")
        if self.seasonal not in ("auto", "true", "false"):
            raise ConfigError("model.seasonal must be auto, true or false")
        if require_panel and not self.panel:
            raise ConfigError("data.panel is required")
        for key in ("panel", "elasticities", "deflator", "cycle"):
            p = getattr(self, key)
            if p and require_panel and not os.path.exists(p):
                raise ConfigError(f"data.{key}: file not found: {p}")
        return self


def _resolve_path(base_dir, p):
    if not p:
        return None
    return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))


def apply_settings(cfg: RunConfig, settings: dict, base_dir: str = ".") -> RunConfig:
    """Apply ``{"section.key": "text"}`` settings to ``cfg``; unknown keys are errors."""
    top, model, llp, clean = {}, {}, {}, {}
    priors = {"obs": list(cfg.priors.obs), "trend": list(cfg.priors.trend),
              "seasonal": list(cfg.priors.seasonal)}
    prior_other = {}
    try:
        for key, val in settings.items():
            sec, _, name = key.partition(".")
            if str(val).strip() == "" and sec != "run":
                continue  # blank means default
            if sec == "data":
                if name in ("panel", "elasticities", "deflator", "cycle"):
                    top[name] = _resolve_path(base_dir, val)
                elif name == "frequency":
                    top["frequency"] = val.strip()
                elif name == "theta_default":
                    top["theta_default"] = float(val)
                else:
                    raise ConfigError(f"unknown key {key}")
            elif sec == "run":
                if name in ("outcomes", "estimators"):
                    top[name] = tuple(_words(val))
                elif name == "sensitivity":
                    top[name] = _floats(val)
                elif name == "baseline":
                    b = tuple(int(x) for x in _floats(val))
                    if len(b) != 2:
                        raise ConfigError("run.baseline needs two years")
                    top[name] = b
                elif name in ("seed", "workers", "treatment_end", "holdout_cutoff", "holdout_end"):
                    top[name] = int(val)
                elif name == "max_skip_fraction":
                    top[name] = float(val)
                elif name == "weighting":
                    top[name] = val.strip()
                elif name == "outdir":
                    top[name] = _resolve_path(base_dir, val)
                elif name == "write_draws":
                    top[name] = _bool(val)
                else:
                    raise ConfigError(f"unknown key {key}")
            elif sec == "model":
                if name in ("n_iterations", "n_burn", "n_predictive_draws"):
                    model[name] = int(val)
                elif name == "seasonal":
                    top["seasonal"] = val.strip().lower()
                elif name == "hp_lambda":
                    top["hp_lambda"] = float(val)
                else:
                    raise ConfigError(f"unknown key {key}")
            elif sec == "priors":
                comp, _, which = name.partition(".")
                if comp in priors and which in PRIOR_KEYS:
                    priors[comp][PRIOR_KEYS[which]] = float(val)
                elif name in ("init_trend_sd", "init_seasonal_sd"):
                    prior_other[name] = float(val)
                elif name == "convention":
                    prior_other[name] = val.strip()
                else:
                    raise ConfigError(f"unknown key {key}")
            elif sec == "llp":
                if name in ("max_lag", "n_bootstrap"):
                    llp[name] = int(val)
                else:
                    raise ConfigError(f"unknown key {key}")
            elif sec == "cleaning":
                if name in ("lower_pct", "upper_pct", "share_lower_pct", "share_upper_pct"):
                    clean[name] = float(val)
                elif name in ("min_pre_periods", "deflator_base", "treatment_start"):
                    clean[name] = int(val)
                elif name == "capital_column":
                    clean[name] = val.strip()
                else:
                    raise ConfigError(f"unknown key {key}")
            else:
                raise ConfigError(f"unknown section in key {key}")
        cfg = replace(cfg, **top)
        cfg = replace(
            cfg,
            model=replace(cfg.model, **model),
            priors=replace(cfg.priors, obs=tuple(priors["obs"]), trend=tuple(priors["trend"]),
                           seasonal=tuple(priors["seasonal"]), **prior_other),
            llp=replace(cfg.llp, **llp),
            cleaning=replace(cfg.cleaning, **clean),
        )
    except ConfigError:
        raise
    except (ValueError, DomainError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def read_settings(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {f"{sec}.{k}": v for sec in cp.sections() for k, v in cp.items(sec)}


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Build a :class:`RunConfig` from an INI file plus ``section.key`` overrides.

    Relative paths in the file resolve against the file's directory.
    """
    cfg = RunConfig()
    if path:
        cfg = apply_settings(cfg, read_settings(path), os.path.dirname(os.path.abspath(path)))
        cfg.source = os.path.abspath(path)
    if overrides:
        cfg = apply_settings(cfg, overrides, os.getcwd())
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Canonical INI text of the effective configuration."""
    lines = [
        "[data]",
        f"panel = {cfg.panel or ''}",
        f"elasticities = {cfg.elasticities or ''}",
        f"theta_default = {cfg.theta_default!r}",
        f"deflator = {cfg.deflator or ''}",
        f"cycle = {cfg.cycle or ''}",
        f"frequency = {cfg.frequency}",
        "",
        "[run]",
        f"outcomes = {', '.join(cfg.outcomes)}",
        f"estimators = {', '.join(cfg.estimators)}",
        f"weighting = {cfg.weighting}",
        f"seed = {cfg.seed}",
        f"sensitivity = {', '.join(repr(f) for f in cfg.sensitivity)}",
        f"max_skip_fraction = {cfg.max_skip_fraction!r}",
        f"treatment_end = {cfg.treatment_end}",
        f"holdout_cutoff = {cfg.holdout_cutoff}",
        f"holdout_end = {cfg.holdout_end}",
        f"baseline = {cfg.baseline[0]}, {cfg.baseline[1]}",
        f"write_draws = {str(cfg.write_draws).lower()}",
        "",
        "[model]",
        f"n_iterations = {cfg.model.n_iterations}",
        f"n_burn = {cfg.model.n_burn}",
        f"n_predictive_draws = {cfg.model.n_predictive_draws}",
        f"seasonal = {cfg.seasonal}",
        f"hp_lambda = {'' if cfg.hp_lambda is None else repr(cfg.hp_lambda)}",
        "",
        "[priors]",
    ]
    for comp in ("obs", "trend", "seasonal"):
        h1, h2 = getattr(cfg.priors, comp)
        lines += [f"{comp}.h1 = {h1!r}", f"{comp}.h2 = {h2!r}"]
    lines += [
        f"init_trend_sd = {cfg.priors.init_trend_sd!r}",
        f"init_seasonal_sd = {cfg.priors.init_seasonal_sd!r}",
        f"convention = {cfg.priors.convention}",
        "",
        "[llp]",
        f"max_lag = {cfg.llp.max_lag}",
        f"n_bootstrap = {cfg.llp.n_bootstrap}",
        "",
        "[cleaning]",
        f"lower_pct = {cfg.cleaning.lower_pct!r}",
        f"upper_pct = {cfg.cleaning.upper_pct!r}",
        f"share_lower_pct = {cfg.cleaning.share_lower_pct!r}",
        f"share_upper_pct = {cfg.cleaning.share_upper_pct!r}",
        f"min_pre_periods = {'' if cfg.cleaning.min_pre_periods is None else cfg.cleaning.min_pre_periods}",
        f"deflator_base = {cfg.cleaning.deflator_base}",
        f"treatment_start = {cfg.cleaning.treatment_start}",
        f"capital_column = {cfg.cleaning.capital_column}",
        "",
    ]
    return "\n".join(lines)
