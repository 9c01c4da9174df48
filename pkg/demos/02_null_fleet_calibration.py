"""How often does a fleet without any effect look significant?

Fits 200 untreated local-level firms and counts how many treated-period
observations fall outside their 95% bands, with and without a false discovery
correction across firms.
"""
import warnings

import numpy as np

from cfpanel.bsts import ModelSpec, PriorConfig, fit_series, forecast_distribution
from cfpanel.diagnostics import reject
from cfpanel.effects import average_effect_pvalue, effect_estimates
from cfpanel.synth import simulate_local_level

spec = ModelSpec(horizon=2, n_iterations=2000, n_burn=500, n_predictive_draws=1000)
flags, pvals = [], []
for child in np.random.SeedSequence(7).spawn(200):
    rng = np.random.default_rng(child)
    y, _, _ = simulate_local_level(22, 1.0, 0.01, rng, level0=5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        draws = fit_series(y[:20], spec, PriorConfig(), rng=rng, keep_states=False)
    flags.append([e.significant for e in effect_estimates(y[20:], forecast_distribution(draws))])
    pvals.append(average_effect_pvalue(y[20:], draws.paths)[1])

rate = np.mean(flags, axis=0)
print(f"share of firms flagged at the 95% level, by treated year: {np.round(rate, 3).tolist()}")
print(f"naive p < 0.05 on the two-year average: {np.mean(np.array(pvals) < 0.05):.3f}")
print(f"rejections after Benjamini-Hochberg at q = 0.05: {int(reject(pvals, 0.05).sum())}")
