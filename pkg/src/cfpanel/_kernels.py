"""Compiled inner loops for the structural time-series sampler.

All randomness enters through pre-drawn arrays so the kernels stay pure and
results are reproducible from a numpy Generator alone.
"""
import numpy as np
from numba import njit

_PSD_TOL = 1e-13


@njit(cache=True)
def _chol_psd(A, L):
    # Cholesky for positive semi-definite input; zero pivots give zero columns.
    m = A.shape[0]
    scale = 0.0
    for i in range(m):
        if A[i, i] > scale:
            scale = A[i, i]
    tol = _PSD_TOL * max(scale, 1e-300)
    for j in range(m):
        for i in range(m):
            L[i, j] = 0.0
    for j in range(m):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if d <= tol:
            continue
        ljj = np.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, m):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj


@njit(cache=True)
def _chol_solve_pd(A, B, L, out):
    """Solve A X = B for symmetric positive-definite A; returns False if A is not PD."""
    m = A.shape[0]
    for j in range(m):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not (d > 0.0):
            return False
        ljj = np.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, m):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
    n = B.shape[1]
    for c in range(n):
        # forward then backward substitution
        for i in range(m):
            s = B[i, c]
            for k in range(i):
                s -= L[i, k] * out[k, c]
            out[i, c] = s / L[i, i]
        for i in range(m - 1, -1, -1):
            s = out[i, c]
            for k in range(i + 1, m):
                s -= L[k, i] * out[k, c]
            out[i, c] = s / L[i, i]
    return True


@njit(cache=True)
def ffbs(ystar, Z, T, Q, a1, P1, obs_var, z, states, fit_mean, fit_var):
    """One forward-filter backward-sample pass.

    ``ystar`` is the observation net of any regression term. ``z`` holds
    ``len(ystar) * m`` standard normals. On return ``states`` holds the joint
    state draw and ``fit_mean``/``fit_var`` the one-step-ahead predictive
    moments of each observation. Returns -1 on success, otherwise the time
    index where the filter broke down.
    """
    n = ystar.shape[0]
    m = Z.shape[0]
    a_pred = np.empty((n, m))
    P_pred = np.empty((n, m, m))
    a_filt = np.empty((n, m))
    P_filt = np.empty((n, m, m))
    PZ = np.empty(m)
    a = a1.copy()
    P = P1.copy()
    tmp = np.empty((m, m))
    for t in range(n):
        a_pred[t] = a
        P_pred[t] = P
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += P[i, k] * Z[k]
            PZ[i] = s
        F = obs_var
        mu = 0.0
        for i in range(m):
            F += Z[i] * PZ[i]
            mu += Z[i] * a[i]
        if not (F > 0.0) or not np.isfinite(F):
            return t
        fit_mean[t] = mu
        fit_var[t] = F
        v = ystar[t] - mu
        for i in range(m):
            a_filt[t, i] = a[i] + PZ[i] * v / F
        for i in range(m):
            for k in range(m):
                P_filt[t, i, k] = P[i, k] - PZ[i] * PZ[k] / F
        # a <- T a_filt ; P <- T P_filt T' + Q
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += T[i, k] * a_filt[t, k]
            a[i] = s
        for i in range(m):
            for k in range(m):
                s = 0.0
                for l in range(m):
                    s += T[i, l] * P_filt[t, l, k]
                tmp[i, k] = s
        for i in range(m):
            for k in range(m):
                s = 0.0
                for l in range(m):
                    s += tmp[i, l] * T[k, l]
                P[i, k] = s + Q[i, k]
        for i in range(m):
            if not np.isfinite(a[i]):
                return t

    L = np.empty((m, m))
    W = np.empty((m, m))
    h = np.empty(m)
    # last state from its filtered distribution
    _chol_psd(P_filt[n - 1], L)
    for i in range(m):
        s = a_filt[n - 1, i]
        for k in range(m):
            s += L[i, k] * z[(n - 1) * m + k]
        states[n - 1, i] = s

    PT = np.empty((m, m))
    J = np.empty((m, m))
    JT = np.empty((m, m))
    Lp = np.empty((m, m))
    for t in range(n - 2, -1, -1):
        # J = P_filt T' P_pred[t+1]^{-1}; solve P_pred J' = T P_filt
        for i in range(m):
            for k in range(m):
                s = 0.0
                for l in range(m):
                    s += T[i, l] * P_filt[t, l, k]
                PT[i, k] = s
        if not _chol_solve_pd(P_pred[t + 1], PT, Lp, JT):
            return t
        for i in range(m):
            for k in range(m):
                J[i, k] = JT[k, i]
        for i in range(m):
            s = a_filt[t, i]
            for k in range(m):
                s += J[i, k] * (states[t + 1, k] - a_pred[t + 1, k])
            h[i] = s
        for i in range(m):
            for k in range(m):
                s = P_filt[t, i, k]
                for l in range(m):
                    s -= J[i, l] * PT[l, k]
                W[i, k] = s
        for i in range(m):
            for k in range(i + 1, m):
                avg = 0.5 * (W[i, k] + W[k, i])
                W[i, k] = avg
                W[k, i] = avg
        _chol_psd(W, L)
        for i in range(m):
            s = h[i]
            for k in range(m):
                s += L[i, k] * z[t * m + k]
            states[t, i] = s
    return -1


@njit(cache=True)
def gibbs(y, cyc, has_cycle, seasonal, prior_v, prior_s, a1, P1, alpha_prior_var,
          n_iter, n_burn, z_state, g_var, z_alpha, z_fit, init_var, keep_states):
    """Full Gibbs loop.

    ``prior_v``/``prior_s`` hold (v, s) for obs, trend, seasonal. ``g_var`` is
    an (n_iter, 3) array of Gamma(shape_j, 1) variates whose shapes were fixed
    by the caller; precision = g / rate with rate = (s + SSE) / 2.
    """
    n = y.shape[0]
    m = 4 if seasonal else 1
    Z = np.zeros(m)
    Z[0] = 1.0
    T = np.zeros((m, m))
    T[0, 0] = 1.0
    if seasonal:
        Z[1] = 1.0
        T[1, 1] = -1.0
        T[1, 2] = -1.0
        T[1, 3] = -1.0
        T[2, 1] = 1.0
        T[3, 2] = 1.0
    Q = np.zeros((m, m))

    n_ret = n_iter - n_burn
    var_out = np.empty((n_ret, 3))
    alpha_out = np.zeros(n_ret)
    final_state = np.empty((n_ret, m))
    if keep_states:
        trend_out = np.empty((n_ret, n))
        seas_out = np.empty((n_ret, n)) if seasonal else np.empty((0, n))
    else:
        trend_out = np.empty((0, n))
        seas_out = np.empty((0, n))
    fit_out = np.empty((n_ret, n))

    s_obs = init_var[0]
    s_trend = init_var[1]
    s_seas = init_var[2] if seasonal else 0.0
    alpha = 0.0
    states = np.empty((n, m))
    fmean = np.empty(n)
    fvar = np.empty(n)
    ystar = np.empty(n)
    for it in range(n_iter):
        Q[0, 0] = s_trend
        if seasonal:
            Q[1, 1] = s_seas
        for t in range(n):
            ystar[t] = y[t] - alpha * cyc[t] if has_cycle else y[t]
        alpha_used = alpha
        status = ffbs(ystar, Z, T, Q, a1, P1, s_obs, z_state[it], states, fmean, fvar)
        if status >= 0:
            return it, var_out, alpha_out, final_state, trend_out, seas_out, fit_out

        # residual sums of squares for each equation
        sse_obs = 0.0
        for t in range(n):
            signal = states[t, 0] + (states[t, 1] if seasonal else 0.0)
            r = ystar[t] - signal
            sse_obs += r * r
        sse_trend = 0.0
        for t in range(1, n):
            d = states[t, 0] - states[t - 1, 0]
            sse_trend += d * d
        sse_seas = 0.0
        if seasonal:
            for t in range(1, n):
                e = states[t, 1] + states[t - 1, 1] + states[t - 1, 2] + states[t - 1, 3]
                sse_seas += e * e
        s_obs = 0.5 * (prior_s[0] + sse_obs) / g_var[it, 0]
        s_trend = 0.5 * (prior_s[1] + sse_trend) / g_var[it, 1]
        if seasonal:
            s_seas = 0.5 * (prior_s[2] + sse_seas) / g_var[it, 2]

        if has_cycle:
            sxx = 0.0
            sxy = 0.0
            for t in range(n):
                signal = states[t, 0] + (states[t, 1] if seasonal else 0.0)
                sxx += cyc[t] * cyc[t]
                sxy += cyc[t] * (y[t] - signal)
            prec = 1.0 / alpha_prior_var + sxx / s_obs
            alpha = (sxy / s_obs) / prec + z_alpha[it] / np.sqrt(prec)

        if it >= n_burn:
            j = it - n_burn
            var_out[j, 0] = s_obs
            var_out[j, 1] = s_trend
            var_out[j, 2] = s_seas
            alpha_out[j] = alpha
            for i in range(m):
                final_state[j, i] = states[n - 1, i]
            if keep_states:
                for t in range(n):
                    trend_out[j, t] = states[t, 0]
                    if seasonal:
                        seas_out[j, t] = states[t, 1]
            # one-step-ahead predictive draw of each observation; the filter
            # ran on the parameters entering this sweep
            for t in range(n):
                reg = alpha_used * cyc[t] if has_cycle else 0.0
                fit_out[j, t] = fmean[t] + reg + np.sqrt(fvar[t]) * z_fit[it, t]
    return -1, var_out, alpha_out, final_state, trend_out, seas_out, fit_out
