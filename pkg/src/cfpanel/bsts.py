"""Per-firm Bayesian structural time series: local level, optional quarterly
seasonal, optional exogenous cycle regressor.

Estimation is by Gibbs sampling. States are drawn jointly by forward
filtering / backward sampling, variances from their conjugate inverse-Gamma
full conditionals, the cycle coefficient from its conjugate Normal. Models are
fit on standardized data; predictive paths are mapped back to the original
scale before they are stored.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import _kernels
from .errors import (
    AlignmentError,
    ConvergenceWarning,
    DegenerateSeriesError,
    DomainError,
    NumericalFailureError,
    SampleSizeError,
)

N_SEASONS = 4
DEFAULT_LEVELS = (0.5, 0.8, 0.9, 0.95)


@dataclass(frozen=True)
class ModelSpec:
    has_seasonal: bool = False
    has_cycle: bool = False
    horizon: int = 2
    n_iterations: int = 10_000
    n_burn: int = 1_000
    n_predictive_draws: int = 5_000
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if self.n_iterations < 1 or self.n_predictive_draws < 1:
            raise DomainError("iteration and draw counts must be positive")
        if not 0 <= self.n_burn < self.n_iterations:
            raise DomainError("need 0 <= n_burn < n_iterations")

    @property
    def n_retained(self) -> int:
        return self.n_iterations - self.n_burn


@dataclass(frozen=True)
class InverseGamma:
    """Prior 1/sigma^2 ~ Gamma(v/2, rate=s/2): v degrees of freedom, s sum of squares."""

    v: float
    s: float

    def posterior(self, n: int, sse: float) -> tuple[float, float]:
        """(shape, scale) of the conjugate update with n residuals."""
        return 0.5 * (self.v + n), 0.5 * (self.s + sse)


@dataclass(frozen=True)
class PriorConfig:
    """Variance and initial-state priors.

    Each variance prior is stored as the printed hyperparameter pair
    ``(h1, h2)``. ``convention`` decides how the pair becomes an inverse-Gamma
    (v, s):

    ``"sd_guess"`` (default)
        h1 is a guess of the standard deviation on the standardized scale and
        h2 the prior sample size: v = h2, s = h2 * h1**2.
    ``"df_ss"``
        h1 is the degrees of freedom and h2 the sum of squares: v = h1, s = h2.
    """

    obs: tuple[float, float] = (1.0, 0.01)
    trend: tuple[float, float] = (0.01, 32.0)
    seasonal: tuple[float, float] = (0.01, 0.01)
    init_trend_sd: float = 1.0
    init_seasonal_sd: float = 1.0
    convention: str = "sd_guess"

    def __post_init__(self):
        if self.convention not in ("sd_guess", "df_ss"):
            raise DomainError(f"unknown prior convention {self.convention!r}")
        for name in ("obs", "trend", "seasonal"):
            h1, h2 = getattr(self, name)
            if not (h1 > 0 and h2 > 0):
                raise DomainError(f"{name} hyperparameters must be positive")
        if not (self.init_trend_sd > 0 and self.init_seasonal_sd > 0):
            raise DomainError("initial-state prior sds must be positive")

    def _resolve(self, pair) -> InverseGamma:
        h1, h2 = pair
        if self.convention == "df_ss":
            return InverseGamma(v=h1, s=h2)
        return InverseGamma(v=h2, s=h2 * h1 * h1)

    @property
    def obs_prior(self) -> InverseGamma:
        return self._resolve(self.obs)

    @property
    def trend_prior(self) -> InverseGamma:
        return self._resolve(self.trend)

    @property
    def seasonal_prior(self) -> InverseGamma:
        return self._resolve(self.seasonal)


def scale_hyperparameters(priors: PriorConfig, factor: float) -> PriorConfig:
    """Multiply every scale-type hyperparameter by ``factor``.

    Both members of each variance pair and the initial-state prior sds are
    scaled; the initial-state means are data-driven and left alone.
    """
    if not factor > 0:
        raise DomainError("factor must be positive")
    f = float(factor)
    return replace(
        priors,
        obs=(priors.obs[0] * f, priors.obs[1] * f),
        trend=(priors.trend[0] * f, priors.trend[1] * f),
        seasonal=(priors.seasonal[0] * f, priors.seasonal[1] * f),
        init_trend_sd=priors.init_trend_sd * f,
        init_seasonal_sd=priors.init_seasonal_sd * f,
    )


@dataclass
class Standardized:
    values: np.ndarray
    mean: float
    sd: float

    def invert(self, z):
        return self.mean + self.sd * np.asarray(z, dtype=float)


def standardize(series) -> Standardized:
    """Center and scale by the sample mean and sample (n-1) sd."""
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise SampleSizeError("standardize needs at least 3 observations")
    if not np.all(np.isfinite(y)):
        raise DomainError("series contains non-finite values")
    mean = float(y.mean())
    sd = float(y.std(ddof=1))
    if not sd > 0 or sd < 1e-12 * max(1.0, abs(mean)):
        raise DegenerateSeriesError("constant series cannot be standardized")
    return Standardized((y - mean) / sd, mean, sd)


@dataclass
class PosteriorDraws:
    """Retained Gibbs output for one series.

    ``paths`` are posterior-predictive outcome paths on the original scale,
    shape (n_predictive_draws, horizon). ``fitted`` holds one-step-ahead
    predictive draws of the in-sample observations (original scale), used
    for the pre-period fit bands.
    """

    obs_var: np.ndarray
    trend_var: np.ndarray
    seasonal_var: Optional[np.ndarray]
    alpha: Optional[np.ndarray]
    trend: Optional[np.ndarray]
    seasonal: Optional[np.ndarray]
    final_state: np.ndarray
    paths: np.ndarray
    fitted: Optional[np.ndarray]
    transform: Standardized
    spec: ModelSpec
    ess: dict = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return self.obs_var.shape[0]

    def variance_means(self) -> dict:
        """Posterior means of the variances on the standardized scale."""
        out = {"obs": float(self.obs_var.mean()), "trend": float(self.trend_var.mean())}
        if self.seasonal_var is not None:
            out["seasonal"] = float(self.seasonal_var.mean())
        return out

    def alpha_interval(self, level: float = 0.95):
        if self.alpha is None:
            return None
        q = (1 - level) / 2
        lo, hi = np.quantile(self.alpha, [q, 1 - q])
        return float(lo), float(hi)

    def alpha_significant(self, level: float = 0.95) -> Optional[bool]:
        iv = self.alpha_interval(level)
        if iv is None:
            return None
        return bool(iv[0] > 0 or iv[1] < 0)


@dataclass
class ForecastDistribution:
    point: np.ndarray
    intervals: dict  # level -> (lower array, upper array)
    draws: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.point.shape[0]

    def band(self, level: float):
        return self.intervals[level]


def _structure(seasonal: bool):
    m = N_SEASONS if seasonal else 1
    Z = np.zeros(m)
    Z[0] = 1.0
    T = np.zeros((m, m))
    T[0, 0] = 1.0
    if seasonal:
        Z[1] = 1.0
        T[1, 1:] = -1.0
        T[2, 1] = 1.0
        T[3, 2] = 1.0
    return Z, T


def _initial_moments(y0: float, priors: PriorConfig, seasonal: bool):
    m = N_SEASONS if seasonal else 1
    a1 = np.zeros(m)
    a1[0] = y0
    P1 = np.zeros((m, m))
    P1[0, 0] = priors.init_trend_sd ** 2
    for i in range(1, m):
        P1[i, i] = priors.init_seasonal_sd ** 2
    return a1, P1


def ffbs_states(y, variances, spec: ModelSpec, priors: PriorConfig, rng, cycle=None, alpha=0.0):
    """Draw one joint state path given the variances.

    ``variances`` is ``(obs, trend)`` or ``(obs, trend, seasonal)`` on the
    scale of ``y``. Returns an array of shape (T, m) with the trend in column
    0 and, for seasonal models, the current seasonal effect in column 1.
    """
    y = np.ascontiguousarray(y, dtype=float)
    seasonal = spec.has_seasonal
    variances = tuple(float(v) for v in variances)
    if any(not v > 0 for v in variances):
        raise DomainError("variances must be positive")
    Z, T = _structure(seasonal)
    m = Z.shape[0]
    Q = np.zeros((m, m))
    Q[0, 0] = variances[1]
    if seasonal:
        Q[1, 1] = variances[2]
    ystar = y - alpha * np.asarray(cycle, dtype=float) if cycle is not None else y
    a1, P1 = _initial_moments(float(y[0]), priors, seasonal)
    n = y.shape[0]
    z = rng.standard_normal(n * m)
    states = np.empty((n, m))
    status = _kernels.ffbs(ystar, Z, T, Q, a1, P1, variances[0], z, states,
                           np.empty(n), np.empty(n))
    if status >= 0:
        raise NumericalFailureError(f"Kalman filter broke down at t={status}", iteration=0)
    return states


def sample_variances(y, states, priors: PriorConfig, rng, seasonal=False, cycle=None, alpha=0.0):
    """Draw (obs, trend[, seasonal]) variances from their inverse-Gamma full conditionals."""
    y = np.asarray(y, dtype=float)
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if states.shape[0] != y.shape[0]:
        raise AlignmentError("states not conformable with y")
    signal = states[:, 0] + (states[:, 1] if seasonal else 0.0)
    if cycle is not None:
        signal = signal + alpha * np.asarray(cycle, dtype=float)
    sse = [float(np.sum((y - signal) ** 2)), float(np.sum(np.diff(states[:, 0]) ** 2))]
    counts = [y.shape[0], y.shape[0] - 1]
    pri = [priors.obs_prior, priors.trend_prior]
    if seasonal:
        eta = states[1:, 1] + states[:-1, 1] + states[:-1, 2] + states[:-1, 3]
        sse.append(float(np.sum(eta ** 2)))
        counts.append(y.shape[0] - 1)
        pri.append(priors.seasonal_prior)
    out = []
    for p, n, e in zip(pri, counts, sse):
        shape, scale = p.posterior(n, e)
        out.append(scale / rng.gamma(shape))
    return tuple(out)


def effective_sample_size(x) -> float:
    """Autocorrelation-based ESS with the initial positive sequence cutoff."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var <= 0:
        return float(n)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    rho = acov / var
    total = 0.0
    # sum consecutive pairs while they stay positive
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        total += pair
    return float(n / (1 + 2 * total))


def gibbs_run(y, spec: ModelSpec, priors: PriorConfig, rng=None, cycle=None,
              cycle_future=None, keep_states=True, transform: Optional[Standardized] = None,
              ) -> PosteriorDraws:
    """Fit the model to ``y`` and simulate predictive paths.

    ``y`` is the standardized pre-treatment series; ``transform`` carries the
    mean and sd used to standardize it (identity if omitted) so that stored
    paths are on the original scale. ``cycle`` must be aligned with ``y``;
    ``cycle_future`` supplies the regressor over the forecast horizon
    (zeros if omitted).
    """
    y = np.ascontiguousarray(y, dtype=float)
    n = y.shape[0]
    seasonal = spec.has_seasonal
    min_len = max(3, 2 * N_SEASONS if seasonal else 3)
    if n < min_len:
        raise SampleSizeError(f"need at least {min_len} observations, got {n}")
    if not np.all(np.isfinite(y)):
        raise DomainError("series contains non-finite values")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if transform is None:
        transform = Standardized(y, 0.0, 1.0)

    has_cycle = spec.has_cycle
    if has_cycle:
        if cycle is None:
            raise AlignmentError("cycle regressor required when has_cycle is set")
        cyc = np.ascontiguousarray(cycle, dtype=float)
        if cyc.shape != y.shape:
            raise AlignmentError("cycle series not aligned with the outcome")
        fut = np.zeros(spec.horizon) if cycle_future is None else np.asarray(cycle_future, dtype=float)
        if fut.shape != (spec.horizon,):
            raise AlignmentError("future cycle values must cover the horizon")
    else:
        cyc = np.zeros(n)
        fut = np.zeros(spec.horizon)

    m = N_SEASONS if seasonal else 1
    pri = [priors.obs_prior, priors.trend_prior, priors.seasonal_prior]
    prior_v = np.array([p.v for p in pri])
    prior_s = np.array([p.s for p in pri])
    shapes = np.array([0.5 * (pri[0].v + n), 0.5 * (pri[1].v + n - 1), 0.5 * (pri[2].v + n - 1)])
    a1, P1 = _initial_moments(float(y[0]), priors, seasonal)

    n_iter = spec.n_iterations
    z_state = rng.standard_normal((n_iter, n * m))
    g_var = rng.standard_gamma(shapes, size=(n_iter, 3))
    z_alpha = rng.standard_normal(n_iter)
    z_fit = rng.standard_normal((n_iter, n))
    v0 = float(np.var(y)) if np.var(y) > 0 else 1.0
    init_var = np.array([0.5 * v0, 0.1 * v0, 0.01 * v0])

    status, var_out, alpha_out, final_state, trend_out, seas_out, fit_out = _kernels.gibbs(
        y, cyc, has_cycle, seasonal, prior_v, prior_s, a1, P1, 1.0,
        n_iter, spec.n_burn, z_state, g_var, z_alpha, z_fit, init_var, keep_states,
    )
    if status >= 0:
        raise NumericalFailureError(f"filter covariance broke down at iteration {status}",
                                    iteration=int(status))

    paths = _simulate_paths(var_out, alpha_out if has_cycle else None, final_state,
                            spec, fut, rng)
    draws = PosteriorDraws(
        obs_var=var_out[:, 0].copy(),
        trend_var=var_out[:, 1].copy(),
        seasonal_var=var_out[:, 2].copy() if seasonal else None,
        alpha=alpha_out if has_cycle else None,
        trend=transform.invert(trend_out) if keep_states else None,
        seasonal=transform.sd * seas_out if (keep_states and seasonal) else None,
        final_state=final_state,
        paths=transform.invert(paths),
        fitted=transform.invert(fit_out),
        transform=transform,
        spec=spec,
    )
    names = ["obs", "trend"] + (["seasonal"] if seasonal else [])
    draws.ess = {k: effective_sample_size(var_out[:, i]) for i, k in enumerate(names)}
    low = [k for k, v in draws.ess.items() if v < 100]
    if low:
        warnings.warn(f"effective sample size below 100 for {', '.join(low)}",
                      ConvergenceWarning, stacklevel=2)
    return draws


def _simulate_paths(var_out, alpha_out, final_state, spec: ModelSpec, cycle_future, rng):
    n_ret = var_out.shape[0]
    k = spec.n_predictive_draws
    if k <= n_ret:
        idx = np.floor(np.linspace(0, n_ret - 1, k)).astype(int)
    else:
        idx = np.sort(rng.integers(0, n_ret, size=k))
    sd = np.sqrt(var_out[idx])
    state = final_state[idx].copy()
    seasonal = spec.has_seasonal
    H = spec.horizon
    noise = rng.standard_normal((H, 3, k))
    paths = np.empty((k, H))
    for h in range(H):
        state[:, 0] = state[:, 0] + sd[:, 1] * noise[h, 1]
        signal = state[:, 0].copy()
        if seasonal:
            new = -state[:, 1:4].sum(axis=1) + sd[:, 2] * noise[h, 2]
            state[:, 3] = state[:, 2]
            state[:, 2] = state[:, 1]
            state[:, 1] = new
            signal += new
        if alpha_out is not None:
            signal += alpha_out[idx] * cycle_future[h]
        paths[:, h] = signal + sd[:, 0] * noise[h, 0]
    if not np.all(np.isfinite(paths)):
        raise NumericalFailureError("non-finite predictive path")
    return paths


def fit_series(values, spec: ModelSpec, priors: PriorConfig, rng=None, cycle=None,
               cycle_future=None, keep_states=True) -> PosteriorDraws:
    """Standardize a raw pre-treatment series, fit, and return original-scale draws."""
    tr = standardize(values)
    return gibbs_run(tr.values, spec, priors, rng=rng, cycle=cycle, cycle_future=cycle_future,
                     keep_states=keep_states, transform=tr)


def _quantile(x, q, axis=0):
    return np.quantile(x, q, axis=axis, method="linear")


def forecast_distribution(draws, levels: Sequence[float] = DEFAULT_LEVELS) -> ForecastDistribution:
    """Mean and equally-tailed quantile intervals per horizon.

    Accepts a :class:`PosteriorDraws` or a raw (n_draws, H) array.
    """
    paths = draws.paths if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if paths.ndim == 1:
        paths = paths[:, None]
    if paths.shape[0] == 0:
        raise SampleSizeError("no predictive draws")
    point = paths.mean(axis=0)
    intervals = {}
    for lev in sorted(levels):
        q = (1 - lev) / 2
        lo, hi = _quantile(paths, [q, 1 - q])
        intervals[lev] = (lo, hi)
    return ForecastDistribution(point=point, intervals=intervals, draws=paths)


def fitted_bands(draws: PosteriorDraws, level: float = 0.95):
    """Equally-tailed one-step-ahead predictive bands over the estimation sample."""
    q = (1 - level) / 2
    lo, hi = _quantile(draws.fitted, [q, 1 - q])
    return lo, hi


def hp_filter(series, lamb: float = 1600.0):
    """Hodrick-Prescott decomposition; returns (trend, cycle)."""
    y = np.asarray(series, dtype=float)
    if not lamb > 0:
        raise DomainError("lambda must be positive")
    n = y.size
    if n < 4:
        raise SampleSizeError("HP filter needs at least 4 observations")
    D = sparse.diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2],
                     shape=(n - 2, n), format="csc")
    A = (sparse.identity(n, format="csc") + lamb * (D.T @ D)).tocsc()
    trend = spsolve(A, y)
    return trend, y - trend


def hp_lambda(frequency: str) -> float:
    return 1600.0 if frequency == "quarterly" else 100.0


def cycle_regression_spec(y, cycle, spec: Optional[ModelSpec] = None) -> ModelSpec:
    """Validate a cycle regressor against ``y`` and return a spec with the cycle on.

    The cycle must already be standardized (mean 0, sd 1) so the Normal(0, 1)
    prior on its coefficient is on a comparable scale.
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(cycle, dtype=float)
    if c.shape != y.shape:
        raise AlignmentError(f"cycle has {c.size} periods, outcome has {y.size}")
    if not np.all(np.isfinite(c)):
        raise AlignmentError("cycle has missing values over the outcome's periods")
    base = spec or ModelSpec()
    return replace(base, has_cycle=True)
