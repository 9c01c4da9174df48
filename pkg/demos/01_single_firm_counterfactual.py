"""One firm, one counterfactual.

Simulates twenty years of a markup series that follows a local level, cuts it
by 5% in the last two years, fits the structural model to the pre-treatment
years and compares what happened with what the model expected.
"""
import numpy as np

from cfpanel.bsts import ModelSpec, PriorConfig, fit_series, forecast_distribution
from cfpanel.effects import average_effect_pvalue, effect_estimates
from cfpanel.synth import simulate_local_level

rng = np.random.default_rng(42)
y, _, _ = simulate_local_level(22, 0.05 ** 2, 0.005 ** 2, rng, level0=1.5)
observed = y.copy()
observed[20:] *= 0.95

draws = fit_series(observed[:20], ModelSpec(horizon=2), PriorConfig(), rng=rng)
fd = forecast_distribution(draws)

print("year  observed  counterfactual  95% band          effect   p")
for h, e in enumerate(effect_estimates(observed[20:], fd)):
    lo, hi = e.intervals[0.95]
    print(f"{2020 + h}  {e.observed:8.4f}  {e.counterfactual_mean:14.4f}  "
          f"[{lo:.4f}, {hi:.4f}]  {e.effect:+.4f}  {e.posterior_p:.4f}")

eff, p = average_effect_pvalue(observed[20:], draws.paths)
print(f"\ntwo-year average effect {eff:+.4f} ({100 * eff / fd.point.mean():+.2f}% of counterfactual), p = {p:.4f}")
print(f"posterior mean variances (standardized scale): obs {draws.obs_var.mean():.3f}, trend {draws.trend_var.mean():.4f}")
