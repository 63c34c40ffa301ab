"""Sequential recursions for the conditional-quantile filter.

Plain-Python implementations compiled with numba when available; the
fallback keeps behaviour identical (only slower).  All recursions treat
pre-sample lags through the ``x_pre``/``psi_pre`` arrays, ordered most
recent first (``x_pre[0]`` is the value at t = -1).
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

ETA_CAP = 700.0  # exp overflow boundary for the log link


@njit(cache=True)
def filter_path(x, omega, alpha, beta, x_pre, psi_pre):
    """Run the log-link recursion over x.

    Returns (eta, psi, t_div, eta_div); t_div is -1 on success, otherwise
    the index where |eta| exceeded ETA_CAP (psi/eta are valid before it).
    """
    n = x.shape[0]
    r = alpha.shape[0]
    s = beta.shape[0]
    eta = np.empty(n)
    psi = np.empty(n)
    for t in range(n):
        acc = omega
        for j in range(1, r + 1):
            if t - j >= 0:
                acc += alpha[j - 1] * np.log(psi[t - j])
            else:
                acc += alpha[j - 1] * np.log(psi_pre[j - t - 1])
        for j in range(1, s + 1):
            if t - j >= 0:
                acc += beta[j - 1] * (x[t - j] / psi[t - j])
            else:
                acc += beta[j - 1] * (x_pre[j - t - 1] / psi_pre[j - t - 1])
        if not (-ETA_CAP <= acc <= ETA_CAP):
            return eta, psi, t, acc
        eta[t] = acc
        psi[t] = np.exp(acc)
    return eta, psi, -1, 0.0


@njit(cache=True)
def derivative_paths(x, psi, alpha, beta, x_pre, psi_pre):
    """d psi_t / d(omega, alpha_1..r, beta_1..s), propagated recursively.

    Pre-sample derivatives are zero; pre-sample psi/x enter only the
    non-recursive base terms.
    """
    n = x.shape[0]
    r = alpha.shape[0]
    s = beta.shape[0]
    npar = 1 + r + s
    D = np.zeros((n, npar))
    for t in range(n):
        for p in range(npar):
            if p == 0:
                acc = 1.0
            elif p <= r:
                l = p
                if t - l >= 0:
                    acc = np.log(psi[t - l])
                else:
                    acc = np.log(psi_pre[l - t - 1])
            else:
                m = p - r
                if t - m >= 0:
                    acc = x[t - m] / psi[t - m]
                else:
                    acc = x_pre[m - t - 1] / psi_pre[m - t - 1]
            for j in range(1, r + 1):
                if t - j >= 0:
                    acc += alpha[j - 1] * D[t - j, p] / psi[t - j]
            for j in range(1, s + 1):
                if t - j >= 0:
                    acc -= beta[j - 1] * x[t - j] * D[t - j, p] / (psi[t - j] ** 2)
            D[t, p] = acc * psi[t]
    return D


@njit(cache=True)
def simulate_path(mult, omega, alpha, beta, x_pre, psi_pre):
    """Generate x_t = psi_t * mult_t with mult_t drawn outside.

    Returns (x, psi, t_div, eta_div) like :func:`filter_path`.
    """
    n = mult.shape[0]
    r = alpha.shape[0]
    s = beta.shape[0]
    x = np.empty(n)
    psi = np.empty(n)
    for t in range(n):
        acc = omega
        for j in range(1, r + 1):
            if t - j >= 0:
                acc += alpha[j - 1] * np.log(psi[t - j])
            else:
                acc += alpha[j - 1] * np.log(psi_pre[j - t - 1])
        for j in range(1, s + 1):
            if t - j >= 0:
                acc += beta[j - 1] * (x[t - j] / psi[t - j])
            else:
                acc += beta[j - 1] * (x_pre[j - t - 1] / psi_pre[j - t - 1])
        if not (-ETA_CAP <= acc <= ETA_CAP):
            return x, psi, t, acc
        psi[t] = np.exp(acc)
        x[t] = psi[t] * mult[t]
    return x, psi, -1, 0.0
