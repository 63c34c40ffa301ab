import math

import numpy as np
import pytest

from qlsacd.errors import DomainError
from qlsacd.ingest import (
    DURATION_HEADER,
    STAT_LABELS,
    TickSeries,
    compute_price_durations,
    descriptive_stats,
    diurnal_adjust,
    read_durations_csv,
    read_ticks_csv,
    time_of_day_seconds,
    write_durations_csv,
)

from conftest import make_tick_csv


def ticks_from_mids(mids, start="2023-08-15T10:00:00", step_s=1.0, spread=0.002):
    mids = np.asarray(mids, dtype=float)
    t0 = np.datetime64(start, "ns")
    times = t0 + (np.arange(len(mids)) * step_s * 1e9).astype("int64").astype("timedelta64[ns]")
    return TickSeries(times=times, bid=mids - spread / 2, ask=mids + spread / 2)


class TestTickSeries:
    def test_invariants(self):
        t = np.array(["2023-08-15T10:00:00", "2023-08-15T10:00:01"], dtype="datetime64[ns]")
        with pytest.raises(DomainError):
            TickSeries(times=t, bid=np.array([2.0, 2.0]), ask=np.array([1.0, 3.0]))
        with pytest.raises(DomainError):
            TickSeries(times=t[::-1].copy(), bid=np.array([1.0, 1.0]), ask=np.array([2.0, 2.0]))

    def test_read_strict_rejects_bad_rows(self, tmp_path):
        path = tmp_path / "ticks.csv"
        path.write_text(
            "timestamp,bid,ask\n"
            "2023-08-15T10:00:00,1.0,1.1\n"
            "2023-08-15T10:00:01,not-a-number,1.2\n"
        )
        with pytest.raises(DomainError, match=":3"):
            read_ticks_csv(path, strict=True)

    def test_read_lenient_skips_and_counts(self, tmp_path):
        path = tmp_path / "ticks.csv"
        path.write_text(
            "timestamp,bid,ask\n"
            "2023-08-15T10:00:00,1.0,1.1\n"
            "2023-08-15T10:00:01,bad,1.2\n"
            "2023-08-15T10:00:02,1.3,1.2\n"  # crossed
            "2023-08-15T10:00:03,1.1,1.2\n"
        )
        ticks, skipped = read_ticks_csv(path, strict=False)
        assert skipped == 2
        assert len(ticks) == 2

    def test_header_required(self, tmp_path):
        path = tmp_path / "ticks.csv"
        path.write_text("time,b,a\n2023-08-15T10:00:00,1,2\n")
        with pytest.raises(DomainError, match="header"):
            read_ticks_csv(path)


class TestPriceDurationScan:
    def test_hand_traced_example(self):
        ticks = ticks_from_mids([100.0, 100.004, 100.011], step_s=1.0)
        d = compute_price_durations(ticks, kappa=0.01)
        assert len(d) == 1
        assert d.raw_durations[0] == pytest.approx(2.0)
        assert d.returns[0] == pytest.approx(math.log(100.011 / 100.0), rel=1e-12)
        assert d.origin_price == pytest.approx(100.0)

    def test_threshold_too_large(self):
        ticks = ticks_from_mids([100.0, 100.002, 100.004])
        with pytest.raises(DomainError, match="threshold too large"):
            compute_price_durations(ticks, kappa=5.0)

    def test_kappa_to_zero_limit(self):
        mids = 100.0 + np.cumsum(np.full(20, 0.003))
        ticks = ticks_from_mids(np.concatenate(([100.0], mids)))
        d = compute_price_durations(ticks, kappa=1e-12)
        assert len(d) == 20
        np.testing.assert_allclose(d.raw_durations, 1.0)

    def test_rejects_nonpositive_kappa(self):
        ticks = ticks_from_mids([100.0, 100.1])
        with pytest.raises(DomainError):
            compute_price_durations(ticks, kappa=0.0)

    def test_same_instant_triggers_merge(self):
        t = np.array(
            ["2023-08-15T10:00:00", "2023-08-15T10:00:01", "2023-08-15T10:00:01"],
            dtype="datetime64[ns]",
        )
        mids = np.array([100.0, 100.02, 100.05])
        ticks = TickSeries(times=t, bid=mids - 0.001, ask=mids + 0.001)
        d = compute_price_durations(ticks, kappa=0.01)
        # the later row wins at the tied timestamp: one event at 100.05
        assert len(d) == 1
        assert d.mid_prices[0] == pytest.approx(100.05)
        assert d.raw_durations[0] == pytest.approx(1.0)

    def test_coarsening_property(self):
        rng = np.random.default_rng(11)
        mids = 100.0 * np.exp(np.cumsum(rng.normal(0, 2e-4, size=4000)))
        ticks = ticks_from_mids(mids, step_s=0.5)
        d1 = compute_price_durations(ticks, kappa=0.01)
        d2 = compute_price_durations(ticks, kappa=0.02)
        # every 2-kappa event happens at or after some kappa event
        t1 = d1.event_times.astype("int64")
        t2 = d2.event_times.astype("int64")
        for t in t2:
            earlier = t1[t1 <= t]
            assert earlier.size > 0


class TestDiurnalAdjust:
    def test_seasonality_free_data_is_noop(self):
        rng = np.random.default_rng(2)
        n = 4000
        gaps = rng.lognormal(mean=0.7, sigma=0.4, size=n)
        times = np.datetime64("2023-08-15T09:30:00", "ns") + (
            np.cumsum(gaps) * 1e9
        ).astype("int64").astype("timedelta64[ns]")
        mids = np.full(n, 100.0)
        from qlsacd.ingest import DurationSeries

        d = DurationSeries(
            origin_time=np.datetime64("2023-08-15T09:30:00", "ns"),
            origin_price=100.0,
            event_times=times,
            mid_prices=mids,
            raw_durations=gaps,
            returns=np.zeros(n),
            seasonal=np.ones(n),
            adjusted=gaps.copy(),
            kappa=0.01,
        )
        adj = diurnal_adjust(d)
        assert np.all(np.abs(adj.seasonal - 1.0) < 0.15)
        np.testing.assert_allclose(adj.adjusted, d.raw_durations / adj.seasonal)

    def test_plant_and_recover(self, tmp_path):
        path = make_tick_csv(tmp_path / "ticks.csv", n_events=5000, seed=3)
        ticks, _ = read_ticks_csv(path)
        d = compute_price_durations(ticks, kappa=1e-9)
        adj = diurnal_adjust(d)
        tod = time_of_day_seconds(adj.event_times)
        rel = tod - tod.min()
        session = 6.5
        truth = 0.55 + 0.12 * ((tod - 9.5 * 3600) / 3600.0 - session / 2.0) ** 2
        corr = np.corrcoef(adj.seasonal, truth)[0, 1]
        assert corr > 0.95
        assert rel.max() > 3600.0

    def test_normalization_and_log_identity(self, tmp_path):
        path = make_tick_csv(tmp_path / "ticks.csv", n_events=1200, seed=9)
        ticks, _ = read_ticks_csv(path)
        d = compute_price_durations(ticks, kappa=1e-9)
        for method in ("cubic-spline-hourly", "time-of-day-means"):
            adj = diurnal_adjust(d, method)
            assert np.mean(adj.seasonal) == pytest.approx(1.0, abs=1e-10)
            assert np.all(adj.adjusted > 0)
            assert np.sum(np.log(adj.adjusted)) == pytest.approx(
                np.sum(np.log(adj.raw_durations)) - np.sum(np.log(adj.seasonal)), rel=1e-12
            )

    def test_single_hour_rejected(self):
        from qlsacd.ingest import DurationSeries

        n = 60
        times = np.datetime64("2023-08-15T10:00:00", "ns") + (
            np.arange(1, n + 1) * 1e9
        ).astype("int64").astype("timedelta64[ns]")
        d = DurationSeries(
            origin_time=np.datetime64("2023-08-15T10:00:00", "ns"),
            origin_price=100.0,
            event_times=times,
            mid_prices=np.full(n, 100.0),
            raw_durations=np.ones(n),
            returns=np.zeros(n),
            seasonal=np.ones(n),
            adjusted=np.ones(n),
            kappa=0.01,
        )
        with pytest.raises(DomainError, match="distinct hours"):
            diurnal_adjust(d)


class TestDescriptiveStats:
    def test_constant_vector(self):
        st = descriptive_stats(np.full(10, 3.0))
        assert st["Standard deviation"] == 0.0
        assert st["Coefficient of variation"] == 0.0
        assert st["Minimum"] == st["Mean"] == st["50th percentile (median)"] == 3.0

    def test_hand_arithmetic(self):
        st = descriptive_stats(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
        assert st["Mean"] == 3.0
        assert st["50th percentile (median)"] == 3.0
        assert st["Standard deviation"] == pytest.approx(math.sqrt(2.5), rel=1e-12)
        assert st["n"] == 5

    def test_label_row_set(self):
        st = descriptive_stats(np.array([1.0, 2.0, 4.0]))
        assert list(st.keys()) == STAT_LABELS

    def test_type7_percentiles(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        st = descriptive_stats(x)
        assert st["10th percentile"] == pytest.approx(np.quantile(x, 0.1))


class TestDurationCsv:
    def test_roundtrip(self, tmp_path):
        path = make_tick_csv(tmp_path / "ticks.csv", n_events=300, seed=4)
        ticks, _ = read_ticks_csv(path)
        d = diurnal_adjust(compute_price_durations(ticks, kappa=1e-9))
        out = tmp_path / "dur.csv"
        write_durations_csv(d, out)
        header = out.read_text().splitlines()[0]
        assert header == ",".join(DURATION_HEADER)
        d2 = read_durations_csv(out, kappa=d.kappa)
        np.testing.assert_array_equal(d2.adjusted, d.adjusted)
        np.testing.assert_array_equal(d2.raw_durations, d.raw_durations)
        np.testing.assert_array_equal(d2.returns, d.returns)
        np.testing.assert_array_equal(d2.event_times, d.event_times)
        assert d2.origin_price == pytest.approx(d.origin_price, rel=1e-12)
