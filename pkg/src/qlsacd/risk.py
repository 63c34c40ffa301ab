"""Forecasting surface: quantile forecasts, prediction intervals, IVaR.

The intraday value-at-risk forecast is the couple (psi_next, ivar): the
one-step-ahead conditional quantile of the duration until the next price
event, and the signed return threshold such that the next price-event
return falls below it with the chosen probability.  Volatility per event
is the fitted conditional hazard scaled by the squared relative price
move and the inverse seasonal factor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .acd import AcdModelSpec, AcdParams, Presample, acd_filter
from .errors import DomainError, FilterDivergenceError
from .estimate import SCHEMA_VERSION, FitOptions, FittedModel, fit_auto
from .ingest import DurationSeries
from .lsdist import SURVIVAL_TINY, log_g, normalizing_constant, standard_cdf, standard_quantile

__all__ = [
    "IvarForecast",
    "forecast_quantile",
    "prediction_interval",
    "PredictionIntervalResult",
    "instantaneous_volatility",
    "volatility_series",
    "forecast_volatility",
    "ivar_forecast",
    "ivar_backtest",
    "IvarBacktestResult",
    "hit_rate",
]


def _one_step(spec: AcdModelSpec, params: AcdParams, x: np.ndarray, psi: np.ndarray) -> float:
    n = x.shape[0]
    if n < max(spec.r, spec.s, 1):
        raise DomainError("history shorter than the model order")
    eta = params.omega
    for j in range(1, spec.r + 1):
        eta += params.alpha[j - 1] * math.log(psi[n - j])
    for j in range(1, spec.s + 1):
        eta += params.beta[j - 1] * (x[n - j] / psi[n - j])
    if not -700.0 <= eta <= 700.0:
        raise FilterDivergenceError(n, eta)
    return math.exp(eta)


def forecast_quantile(fitted: FittedModel, x_history, presample: Presample | None = None) -> float:
    """One-step-ahead conditional quantile beyond the given history."""
    x = np.asarray(x_history, dtype=float)
    out = acd_filter(fitted.spec, fitted.params, x, presample)
    return _one_step(fitted.spec, fitted.params, x, out.psi)


def _hazard(spec: AcdModelSpec, phi: float, x, psi, return_overflow: bool = False):
    """Conditional hazard of each duration given its fitted quantile."""
    x = np.asarray(x, dtype=float)
    psi = np.asarray(psi, dtype=float)
    gen = spec.gen
    sphi = math.sqrt(phi)
    z = (np.log(x) - np.log(psi)) / sphi + standard_quantile(gen, spec.q)
    surv = np.asarray(standard_cdf(gen, -z), dtype=float)
    dens = (
        normalizing_constant(gen) / (sphi * x) * np.exp(np.asarray(log_g(gen, z * z)))
    )
    overflow = surv < SURVIVAL_TINY
    out = dens / np.maximum(surv, SURVIVAL_TINY)
    if return_overflow:
        return out, overflow
    return out


def instantaneous_volatility(fitted: FittedModel, d: DurationSeries, t: int) -> float:
    """Conditional volatility of the return at event t (1-based).

    ``t`` in 1..n gives the in-sample value (hazard at the observed
    adjusted duration); ``t = n + 1`` gives the forecast, which evaluates
    the hazard at the last observed duration and the last in-sample
    quantile.
    """
    n = len(d)
    if t < 1 or t > n + 1:
        raise DomainError(f"t must lie in 1..{n + 1}, got {t}")
    if t == n + 1:
        return forecast_volatility(fitted, d)
    i = t - 1
    h = float(_hazard(fitted.spec, fitted.params.phi, d.adjusted[i : i + 1], fitted.psi_path[i : i + 1])[0])
    return h * (d.kappa / d.prev_price(i)) ** 2 / d.prev_seasonal(i)


def volatility_series(fitted: FittedModel, d: DurationSeries, return_overflow: bool = False):
    """In-sample conditional volatilities for every event."""
    n = len(d)
    if len(fitted.psi_path) != n:
        raise DomainError("fitted quantile path is not aligned with the duration series")
    haz, overflow = _hazard(
        fitted.spec, fitted.params.phi, d.adjusted, fitted.psi_path, return_overflow=True
    )
    prev_prices = np.concatenate(([d.origin_price], d.mid_prices[:-1]))
    prev_seasonal = np.concatenate(([d.seasonal_origin], d.seasonal[:-1]))
    out = haz * (d.kappa / prev_prices) ** 2 / prev_seasonal
    if return_overflow:
        return out, overflow
    return out


def forecast_volatility(
    fitted: FittedModel, d: DurationSeries, hazard_at_next_quantile: bool = False
) -> float:
    """One-step-ahead volatility forecast.

    The hazard argument follows the in-sample convention (last observed
    duration at the last in-sample quantile); set
    ``hazard_at_next_quantile=True`` to evaluate it at the forecast
    quantile instead (sensitivity variant).
    """
    n = len(d)
    if n < 1:
        raise DomainError("empty duration series")
    psi_ref = (
        forecast_quantile(fitted, d.adjusted)
        if hazard_at_next_quantile
        else float(fitted.psi_path[n - 1])
    )
    h = float(_hazard(fitted.spec, fitted.params.phi, d.adjusted[n - 1 : n], np.asarray([psi_ref]))[0])
    return h * (d.kappa / float(d.mid_prices[n - 1])) ** 2 / float(d.seasonal[n - 1])


@dataclass
class IvarForecast:
    """The forecast couple plus the ingredients used to build it."""

    psi_next: float
    sigma2_next: float
    ivar: float
    var_level: float
    q_level: float
    eps_quantile: float
    n_excluded: int

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "psi_next": self.psi_next,
            "sigma2_next": self.sigma2_next,
            "ivar": self.ivar,
            "var_level": self.var_level,
            "q_level": self.q_level,
            "eps_quantile": self.eps_quantile,
            "n_excluded": self.n_excluded,
        }


def ivar_forecast(
    fitted: FittedModel,
    d: DurationSeries,
    var_level: float,
    hazard_at_next_quantile: bool = False,
) -> IvarForecast:
    """One-step-ahead intraday VaR from the fitted duration model.

    Standardizes the in-sample returns by their conditional volatilities,
    takes the empirical ``var_level`` quantile and rescales it by the
    forecast volatility.  Events with zero volatility are excluded from
    the standardization and counted.
    """
    if not 0.0 < var_level < 0.5:
        raise DomainError(f"var_level must lie in (0, 0.5), got {var_level}")
    psi_next = forecast_quantile(fitted, d.adjusted)
    sigma2_next = forecast_volatility(fitted, d, hazard_at_next_quantile)
    sigma2 = volatility_series(fitted, d)
    ok = sigma2 > 0
    n_excluded = int(np.sum(~ok))
    if not np.any(ok):
        raise DomainError("every in-sample volatility is zero")
    eps = d.returns[ok] / np.sqrt(sigma2[ok])
    eps_q = float(np.quantile(eps, var_level))
    return IvarForecast(
        psi_next=float(psi_next),
        sigma2_next=float(sigma2_next),
        ivar=float(eps_q * math.sqrt(sigma2_next)),
        var_level=float(var_level),
        q_level=float(fitted.spec.q),
        eps_quantile=eps_q,
        n_excluded=n_excluded,
    )


def hit_rate(returns, ivar_series) -> float:
    """Fraction of returns strictly below their IVaR thresholds."""
    returns = np.asarray(returns, dtype=float)
    ivar_series = np.asarray(ivar_series, dtype=float)
    if returns.shape != ivar_series.shape or returns.ndim != 1 or returns.size == 0:
        raise DomainError("returns and IVaR series must be equal-length nonempty vectors")
    return float(np.mean(returns < ivar_series))


@dataclass
class PredictionIntervalResult:
    """Rolling one-step interval record with its empirical coverage."""

    steps: np.ndarray  # global indices of the evaluated observations
    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    inside: np.ndarray
    coverage: float
    q_lo: float
    q_hi: float
    window: int
    mode: str
    failures: list

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "duration", "lower", "upper", "inside"])
            for i in range(self.steps.shape[0]):
                writer.writerow(
                    [
                        int(self.steps[i]),
                        repr(float(self.x[i])),
                        repr(float(self.lower[i])),
                        repr(float(self.upper[i])),
                        int(self.inside[i]),
                    ]
                )

    def summary_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
            "window": self.window,
            "mode": self.mode,
            "n_evaluated": int(self.steps.shape[0]),
            "coverage": self.coverage,
            "n_failures": len(self.failures),
        }


def prediction_interval(
    x,
    spec_template: AcdModelSpec,
    q_lo: float,
    q_hi: float,
    window: int,
    options: FitOptions | None = None,
    mode: str = "fast",
    profile: bool = False,
) -> PredictionIntervalResult:
    """Two-sided one-step-ahead intervals over the last ``window`` points.

    The models at ``q_lo`` and ``q_hi`` are estimated without the
    evaluated observation: the fast mode fits once on the pre-window
    sample and rolls the filter forward, the refit mode re-estimates at
    every step.
    """
    if q_lo > q_hi:
        raise DomainError("q_lo must not exceed q_hi")
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not 1 <= window <= n - 1:
        raise DomainError(f"window must lie in 1..{n - 1}, got {window}")
    if mode not in ("fast", "refit"):
        raise DomainError(f"mode must be 'fast' or 'refit', got {mode!r}")
    from dataclasses import replace as _replace

    spec_lo = _replace(spec_template, q=q_lo)
    spec_hi = _replace(spec_template, q=q_hi)
    start = n - window
    steps, lowers, uppers = [], [], []
    failures = []
    if mode == "fast":
        pre = x[:start]
        m_lo = fit_auto(spec_lo, pre, options, profile=profile)
        m_hi = fit_auto(spec_hi, pre, options, profile=profile)
        # roll the filters over the full series; psi_t only uses x_{<t}
        pre_lo = Presample.from_data(spec_lo, pre)
        pre_hi = Presample.from_data(spec_hi, pre)
        psi_lo = acd_filter(spec_lo, m_lo.params, x, pre_lo).psi
        psi_hi = acd_filter(spec_hi, m_hi.params, x, pre_hi).psi
        for t in range(start, n):
            steps.append(t)
            lowers.append(psi_lo[t])
            uppers.append(psi_hi[t])
    else:
        for t in range(start, n):
            try:
                m_lo = fit_auto(spec_lo, x[:t], options, profile=profile)
                m_hi = fit_auto(spec_hi, x[:t], options, profile=profile)
                lo = forecast_quantile(m_lo, x[:t])
                hi = forecast_quantile(m_hi, x[:t])
            except Exception as exc:
                failures.append(f"step {t}: {type(exc).__name__}: {exc}")
                continue
            steps.append(t)
            lowers.append(lo)
            uppers.append(hi)
    steps = np.asarray(steps, dtype=int)
    lowers = np.asarray(lowers, dtype=float)
    uppers = np.asarray(uppers, dtype=float)
    xt = x[steps]
    inside = (xt >= lowers) & (xt <= uppers)
    return PredictionIntervalResult(
        steps=steps,
        x=xt,
        lower=lowers,
        upper=uppers,
        inside=inside,
        coverage=float(np.mean(inside)) if steps.size else math.nan,
        q_lo=float(q_lo),
        q_hi=float(q_hi),
        window=int(window),
        mode=mode,
        failures=failures,
    )


@dataclass
class IvarBacktestResult:
    """Rolling IVaR forecasts with realized returns and hits."""

    event_times: np.ndarray
    returns: np.ndarray
    ivar: np.ndarray
    hits: np.ndarray
    var_level: float
    window: int

    @property
    def hit_rate(self) -> float:
        return float(np.mean(self.hits))

    def to_csv(self, path) -> None:
        from .ingest import _format_time

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["event_time", "return", "ivar", "hit"])
            for i in range(self.returns.shape[0]):
                writer.writerow(
                    [
                        _format_time(self.event_times[i]),
                        repr(float(self.returns[i])),
                        repr(float(self.ivar[i])),
                        int(self.hits[i]),
                    ]
                )

    def summary_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "var_level": self.var_level,
            "hits": int(np.sum(self.hits)),
            "hit_rate": self.hit_rate,
            "window": self.window,
        }


def ivar_backtest(
    spec_template: AcdModelSpec,
    d: DurationSeries,
    var_level: float,
    window: int,
    options: FitOptions | None = None,
    hazard_at_next_quantile: bool = False,
    profile: bool = False,
) -> IvarBacktestResult:
    """Roll the one-step IVaR forecast over the last ``window`` events.

    Fast-mode protocol: parameters and the standardized-return quantile
    come from the pre-window sample only; within the window the quantile
    filter rolls forward and each step's volatility uses the previous
    event's duration, price and seasonal factor, so every forecast is
    measurable with respect to the information before the evaluated event.
    """
    if not 0.0 < var_level < 0.5:
        raise DomainError(f"var_level must lie in (0, 0.5), got {var_level}")
    n = len(d)
    if not 1 <= window <= n - 1:
        raise DomainError(f"window must lie in 1..{n - 1}, got {window}")
    start = n - window
    x = d.adjusted
    pre_x = x[:start]
    fitted = fit_auto(spec_template, pre_x, options, profile=profile)
    spec, params = fitted.spec, fitted.params

    # pre-window standardization (in-sample convention: hazard at x_t)
    d_pre = DurationSeries(
        origin_time=d.origin_time,
        origin_price=d.origin_price,
        event_times=d.event_times[:start],
        mid_prices=d.mid_prices[:start],
        raw_durations=d.raw_durations[:start],
        returns=d.returns[:start],
        seasonal=d.seasonal[:start],
        adjusted=d.adjusted[:start],
        kappa=d.kappa,
        seasonal_origin=d.seasonal_origin,
    )
    sigma2_pre = volatility_series(fitted, d_pre)
    ok = sigma2_pre > 0
    if not np.any(ok):
        raise DomainError("every pre-window volatility is zero")
    eps = d.returns[:start][ok] / np.sqrt(sigma2_pre[ok])
    eps_q = float(np.quantile(eps, var_level))

    # full-series filter; psi_t only uses x_{<t}
    psi = acd_filter(spec, params, x, Presample.from_data(spec, pre_x)).psi
    idx = np.arange(start, n)
    if hazard_at_next_quantile:
        psi_ref = psi[idx]
    else:
        psi_ref = psi[idx - 1]
    haz = _hazard(spec, params.phi, x[idx - 1], psi_ref)
    prev_prices = d.mid_prices[idx - 1]
    prev_seasonal = d.seasonal[idx - 1]
    sigma2 = haz * (d.kappa / prev_prices) ** 2 / prev_seasonal
    ivar = eps_q * np.sqrt(sigma2)
    rets = d.returns[idx]
    hits = rets < ivar
    return IvarBacktestResult(
        event_times=d.event_times[idx],
        returns=rets,
        ivar=ivar,
        hits=hits,
        var_level=float(var_level),
        window=int(window),
    )
