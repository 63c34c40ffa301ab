"""Tick-data ingestion: price durations, diurnal adjustment, summaries.

A price event occurs at the first tick whose mid-price has moved at least
``kappa`` away from the previous event's mid-price.  Durations are the
elapsed seconds between consecutive events; intraday seasonality is
removed by dividing each duration by a smooth positive time-of-day factor
whose mean over the events is normalized to one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.interpolate import LSQUnivariateSpline

from .errors import DomainError

__all__ = [
    "TickSeries",
    "DurationSeries",
    "read_ticks_csv",
    "compute_price_durations",
    "diurnal_adjust",
    "descriptive_stats",
    "write_durations_csv",
    "read_durations_csv",
]

TICK_HEADER = ["timestamp", "bid", "ask"]
DURATION_HEADER = [
    "event_time",
    "mid_price",
    "raw_duration",
    "seasonal_factor",
    "adjusted_duration",
    "return",
]

# Order and exact labels of the descriptive-statistics rows
STAT_LABELS = [
    "n",
    "Minimum",
    "10th percentile",
    "Mean",
    "50th percentile (median)",
    "90th percentile",
    "Maximum",
    "Standard deviation",
    "Coefficient of variation",
    "Coefficient of skewness",
    "Coefficient of excess kurtosis",
]


@dataclass(frozen=True)
class TickSeries:
    """Timestamped bid/ask quotes, sorted, with ask >= bid."""

    times: np.ndarray  # datetime64[ns]
    bid: np.ndarray
    ask: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.bid) == len(self.ask)):
            raise DomainError("tick columns have different lengths")
        if len(self.times) and np.any(np.diff(self.times.astype("int64")) < 0):
            raise DomainError("tick timestamps are not sorted")
        if np.any(self.ask < self.bid):
            raise DomainError("crossed quotes: ask < bid")
        if np.any(self.bid <= 0):
            raise DomainError("bid prices must be positive")

    def __len__(self):
        return len(self.times)

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class DurationSeries:
    """Price events with their durations, returns and seasonal factors.

    Arrays are aligned per event (the origin event is kept separately so
    durations, returns and factors all have length n).
    """

    origin_time: np.datetime64
    origin_price: float
    event_times: np.ndarray  # datetime64[ns], length n
    mid_prices: np.ndarray
    raw_durations: np.ndarray  # seconds
    returns: np.ndarray  # log price changes between events
    seasonal: np.ndarray  # diurnal factors, mean 1 after adjustment
    adjusted: np.ndarray  # raw_durations / seasonal
    kappa: float
    seasonal_origin: float = 1.0

    def __post_init__(self):
        n = len(self.event_times)
        for name in ("mid_prices", "raw_durations", "returns", "seasonal", "adjusted"):
            if len(getattr(self, name)) != n:
                raise DomainError(f"{name} length does not match the event count")
        if np.any(self.raw_durations <= 0) or np.any(self.adjusted <= 0):
            raise DomainError("durations must be strictly positive")

    def __len__(self):
        return len(self.event_times)

    def prev_price(self, t: int) -> float:
        """Mid-price at the event preceding event t (origin for t = 0)."""
        return float(self.mid_prices[t - 1]) if t >= 1 else self.origin_price

    def prev_seasonal(self, t: int) -> float:
        return float(self.seasonal[t - 1]) if t >= 1 else self.seasonal_origin


def _parse_time(text: str) -> np.datetime64:
    return np.datetime64(text.strip(), "ns")


def read_ticks_csv(path, strict: bool = True):
    """Read a `timestamp,bid,ask` CSV.

    Returns (TickSeries, n_skipped).  In strict mode any malformed row
    raises with its line number; in lenient mode bad rows (including
    out-of-order timestamps and crossed quotes) are skipped and counted.
    """
    times, bids, asks = [], [], []
    skipped = 0
    last = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != TICK_HEADER:
            raise DomainError(
                f"{path}: expected header {','.join(TICK_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                ts = _parse_time(row[0])
                bid = float(row[1])
                ask = float(row[2])
                if not (math.isfinite(bid) and math.isfinite(ask)):
                    raise ValueError("non-finite quote")
                if ask < bid:
                    raise ValueError("crossed quote: ask < bid")
                if bid <= 0:
                    raise ValueError("non-positive bid")
                if last is not None and ts < last:
                    raise ValueError("timestamp goes backwards")
            except ValueError as exc:
                if strict:
                    raise DomainError(f"{path}:{lineno}: {exc}") from None
                skipped += 1
                continue
            last = ts
            times.append(ts)
            bids.append(bid)
            asks.append(ask)
    if len(times) < 2:
        raise DomainError(f"{path}: fewer than 2 usable ticks")
    ticks = TickSeries(
        times=np.array(times, dtype="datetime64[ns]"),
        bid=np.array(bids, dtype=float),
        ask=np.array(asks, dtype=float),
    )
    return ticks, skipped


def _dedupe_last(ticks: TickSeries) -> TickSeries:
    # later row wins for quoting at tied timestamps; this also prevents
    # events from triggering at zero elapsed time
    t = ticks.times.astype("int64")
    keep = np.ones(len(t), dtype=bool)
    keep[:-1] = t[:-1] != t[1:]
    return TickSeries(times=ticks.times[keep], bid=ticks.bid[keep], ask=ticks.ask[keep])


def compute_price_durations(ticks: TickSeries, kappa: float) -> DurationSeries:
    """Scan ticks for price events and build the raw duration series."""
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    if len(ticks) < 2:
        raise DomainError("need at least 2 ticks")
    ticks = _dedupe_last(ticks)
    mid = ticks.mid
    times = ticks.times
    ref = mid[0]
    ev_idx = []
    for i in range(1, len(ticks)):
        if abs(mid[i] - ref) >= kappa:
            ev_idx.append(i)
            ref = mid[i]
    if not ev_idx:
        raise DomainError(
            f"threshold too large: kappa={kappa} produced no price events"
        )
    ev_idx = np.asarray(ev_idx, dtype=int)
    ev_times = times[ev_idx]
    ev_prices = mid[ev_idx]
    prev_times = np.concatenate(([times[0]], ev_times[:-1]))
    prev_prices = np.concatenate(([mid[0]], ev_prices[:-1]))
    durations = (ev_times - prev_times) / np.timedelta64(1, "s")
    returns = np.log(ev_prices) - np.log(prev_prices)
    return DurationSeries(
        origin_time=times[0],
        origin_price=float(mid[0]),
        event_times=ev_times,
        mid_prices=ev_prices,
        raw_durations=durations,
        returns=returns,
        seasonal=np.ones_like(durations),
        adjusted=durations.copy(),
        kappa=float(kappa),
    )


def time_of_day_seconds(times: np.ndarray) -> np.ndarray:
    """Seconds since midnight for datetime64 instants."""
    days = times.astype("datetime64[D]")
    return (times - days) / np.timedelta64(1, "s")


def _spline_factor(tod: np.ndarray, logx: np.ndarray):
    order = np.argsort(tod, kind="stable")
    ts, ys = tod[order], logx[order]
    # strictly increasing abscissae are required; nudge exact ties apart
    tie = np.diff(ts) <= 0
    if np.any(tie):
        ts = ts + np.arange(len(ts)) * 1e-9
    first_hour = int(math.floor(ts[0] / 3600.0)) + 1
    last_hour = int(math.ceil(ts[-1] / 3600.0)) - 1
    knots = [h * 3600.0 for h in range(first_hour, last_hour + 1) if ts[0] < h * 3600.0 < ts[-1]]
    while True:
        try:
            spline = LSQUnivariateSpline(ts, ys, t=knots, k=3)
            return spline
        except ValueError:
            if not knots:
                raise DomainError(
                    "cannot fit the diurnal spline; too few distinct times"
                ) from None
            # drop the knot in the emptiest interval and retry
            counts = [np.sum((ts >= a) & (ts < b)) for a, b in zip([ts[0]] + knots, knots + [ts[-1] + 1])]
            knots.pop(int(np.argmin(counts[:-1])))


def diurnal_adjust(d: DurationSeries, method: str = "cubic-spline-hourly") -> DurationSeries:
    """Estimate diurnal factors and divide them out of the durations.

    ``cubic-spline-hourly`` fits a cubic regression spline of log duration
    on time-of-day with knots at each hour of the session;
    ``time-of-day-means`` uses hourly bin means.  Factors are normalized
    to mean one over the events.
    """
    tod = time_of_day_seconds(d.event_times)
    hours = np.unique(np.floor(tod / 3600.0))
    if len(hours) < 2:
        raise DomainError(
            "diurnal adjustment needs events in at least 2 distinct hours"
        )
    tod_origin = float(time_of_day_seconds(np.asarray([d.origin_time], "datetime64[ns]"))[0])
    if method == "cubic-spline-hourly":
        spline = _spline_factor(tod, np.log(d.raw_durations))
        factor = np.exp(spline(tod))
        factor_origin = float(np.exp(spline(tod_origin)))
    elif method == "time-of-day-means":
        bins = np.floor(tod / 3600.0).astype(int)
        means = {}
        for b in np.unique(bins):
            means[b] = float(np.mean(d.raw_durations[bins == b]))
        factor = np.array([means[b] for b in bins], dtype=float)
        b0 = int(math.floor(tod_origin / 3600.0))
        factor_origin = means.get(b0, factor[0])
    else:
        raise DomainError(f"unknown adjustment method {method!r}")
    scale = float(np.mean(factor))
    factor = factor / scale
    factor_origin = float(factor_origin / scale)
    return replace(
        d,
        seasonal=factor,
        adjusted=d.raw_durations / factor,
        seasonal_origin=factor_origin,
    )


def descriptive_stats(x) -> dict:
    """Summary-row dictionary keyed by the standard table labels."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DomainError("cannot summarize an empty vector")
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    cv = 100.0 * sd / mean if mean != 0 else math.nan
    degenerate = x.size < 2 or sd == 0.0
    return {
        "n": int(x.size),
        "Minimum": float(np.min(x)),
        "10th percentile": float(np.quantile(x, 0.10)),
        "Mean": mean,
        "50th percentile (median)": float(np.median(x)),
        "90th percentile": float(np.quantile(x, 0.90)),
        "Maximum": float(np.max(x)),
        "Standard deviation": sd,
        "Coefficient of variation": cv,
        "Coefficient of skewness": 0.0 if degenerate else float(stats.skew(x)),
        "Coefficient of excess kurtosis": 0.0 if degenerate else float(stats.kurtosis(x)),
    }


def _format_time(t: np.datetime64) -> str:
    text = np.datetime_as_string(t, unit="ns")
    # trim trailing zeros in the fractional part but keep full seconds
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def write_durations_csv(d: DurationSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DURATION_HEADER)
        for i in range(len(d)):
            writer.writerow(
                [
                    _format_time(d.event_times[i]),
                    repr(float(d.mid_prices[i])),
                    repr(float(d.raw_durations[i])),
                    repr(float(d.seasonal[i])),
                    repr(float(d.adjusted[i])),
                    repr(float(d.returns[i])),
                ]
            )


def read_durations_csv(path, kappa: float = math.nan) -> DurationSeries:
    """Rebuild a DurationSeries from the CSV written by write_durations_csv.

    The origin event is reconstructed from the first row; the origin
    seasonal factor is approximated by the first event's factor.
    """
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DURATION_HEADER:
            raise DomainError(f"{path}: expected header {','.join(DURATION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append(
                    (
                        _parse_time(row[0]),
                        float(row[1]),
                        float(row[2]),
                        float(row[3]),
                        float(row[4]),
                        float(row[5]),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DomainError(f"{path}: no duration rows")
    times = np.array([r[0] for r in rows], dtype="datetime64[ns]")
    prices = np.array([r[1] for r in rows], dtype=float)
    raw = np.array([r[2] for r in rows], dtype=float)
    seasonal = np.array([r[3] for r in rows], dtype=float)
    adjusted = np.array([r[4] for r in rows], dtype=float)
    returns = np.array([r[5] for r in rows], dtype=float)
    origin_time = times[0] - np.timedelta64(int(round(raw[0] * 1e9)), "ns")
    origin_price = float(prices[0] / math.exp(returns[0]))
    return DurationSeries(
        origin_time=origin_time,
        origin_price=origin_price,
        event_times=times,
        mid_prices=prices,
        raw_durations=raw,
        returns=returns,
        seasonal=seasonal,
        adjusted=adjusted,
        kappa=float(kappa),
        seasonal_origin=float(seasonal[0]),
    )
