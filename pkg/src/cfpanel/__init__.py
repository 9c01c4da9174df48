"""Counterfactual forecasting of firm outcomes on panels: structural time-series
models, local projections, diagnostics, effect aggregation and heterogeneity."""

from .bsts import ModelSpec, PriorConfig, fit_series, forecast_distribution
from .effects import aggregate_fleet, effect_estimates
from .llp import LlpSpec, fit_firm_llp, fit_panel_llp
from .panel_store import CleaningConfig, PanelDataset, clean_panel, load_panel

__version__ = "0.1.0"

__all__ = [
    "CleaningConfig",
    "LlpSpec",
    "ModelSpec",
    "PanelDataset",
    "PriorConfig",
    "aggregate_fleet",
    "clean_panel",
    "effect_estimates",
    "fit_firm_llp",
    "fit_panel_llp",
    "fit_series",
    "forecast_distribution",
    "load_panel",
]
