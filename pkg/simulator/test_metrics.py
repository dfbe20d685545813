import pytest
import numpy as np
import pandas as pd

from control import GREEN_START, TRANSITION_START, ControllerSpec, SignalEvent
from engine import run_scenario
from exceptions import MalformedLogError, RankDeficiencyError
from metrics import (
    SimResult, StepSample, TripRecord, aggregate_efficiency, delay_per_km, delay_quantiles, group_delays,
    initial_red_durations, max_red_duration, network_mean_speed, polyfit4, polyval4, quartic_peak, record_fundamentals,
    seed_summary, signal_stats, trips_frame, TRIP_COLUMNS,
)
from netgrid import build_grid


def _trip(vehicle_id, delay, entitled=False, length=1000.0, spawn=100.0, free_flow=72.0, completed=True):
    return TripRecord(
        vehicle_id=vehicle_id, entrance="Bn00>J0000", exit="J0000>Bs00", route_length_m=length,
        entitled=entitled, vot=0.0, spawn_s=spawn, depart_s=spawn,
        arrive_s=spawn + free_flow + delay if completed else None, free_flow_s=free_flow,
    )


def _result(trips, stream=None, warmup=0, record=3600):
    return SimResult(trips=trips, stream=stream or [], events=[],
                     metadata={"warmup": warmup, "record": record, "speed_limit": 13.89})


@pytest.mark.unit
class TestDelay:
    """Per-trip and per-group delay"""

    def test_delay_per_km(self):
        """100 s of delay over one kilometre is 100 s/km"""
        assert delay_per_km(_trip(0, 100.0)) == pytest.approx(100.0)
        assert delay_per_km(_trip(0, 100.0, length=500.0)) == pytest.approx(200.0)

    def test_incomplete_trip(self):
        """Delay is undefined until a trip completes"""
        trip = _trip(0, 0.0, completed=False)
        assert trip.delay_s is None
        with pytest.raises(ValueError):
            delay_per_km(trip)

    def test_group_delays(self):
        """Entitled and non-entitled groups are averaged separately"""
        trips = [_trip(0, 10.0, True), _trip(1, 30.0, True), _trip(2, 50.0), _trip(3, 70.0),
                 _trip(4, 0.0, completed=False)]
        delays = group_delays(_result(trips))
        assert delays["delta_pp"] == pytest.approx(20.0)
        assert delays["delta_npp"] == pytest.approx(60.0)
        assert delays["delta_avg"] == pytest.approx(40.0)
        assert delays["sd_pp"] == pytest.approx(np.std([10.0, 30.0], ddof=1))
        assert (delays["n_pp"], delays["n_npp"]) == (2, 2)

    def test_group_decomposition(self):
        """The overall mean is the count-weighted mean of the two groups"""
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 60))
            trips = [_trip(i, float(rng.uniform(0, 200)), entitled=bool(rng.random() < 0.3),
                           length=float(rng.choice([300.0, 700.0, 1200.0]))) for i in range(n)]
            delays = group_delays(_result(trips))
            parts = [delays[k] * delays[c] for k, c in (("delta_pp", "n_pp"), ("delta_npp", "n_npp"))
                     if delays[c] > 0]
            assert delays["delta_avg"] * n == pytest.approx(sum(parts), rel=1e-9)

    def test_empty_group_is_nan(self):
        """A group with no completed trips reports NaN"""
        delays = group_delays(_result([_trip(0, 10.0)]))
        assert np.isnan(delays["delta_pp"])
        assert delays["sd_npp"] == 0.0

    def test_quantiles(self):
        """Quantile rows exist for both groups and all trips"""
        trips = [_trip(i, float(i), entitled=i % 2 == 0) for i in range(10)]
        frame = delay_quantiles(_result(trips))
        assert list(frame["group"]) == ["entitled", "not_entitled", "all"]
        row = frame.set_index("group").loc["all"]
        assert row["count"] == 10
        assert row["q50"] == pytest.approx(4.5)


@pytest.mark.unit
class TestEfficiency:
    """Window aggregates"""

    def test_empty_window(self):
        """No trips means full completion and no delay"""
        metrics = aggregate_efficiency(_result([]))
        assert metrics["completion_rate"] == 1.0
        assert metrics["throughput"] == 0.0
        assert metrics["mean_delay"] == 0.0

    def test_throughput_and_travel_time(self):
        """Residual trips count up to the end of the window"""
        trips = [_trip(0, 28.0, spawn=0.0), _trip(1, 0.0, spawn=3500.0, completed=False)]
        stream = [StepSample(clock=c, on_network=1, queued=2, exits=0) for c in range(1, 3601)]
        metrics = aggregate_efficiency(_result(trips, stream))
        assert metrics["throughput"] == pytest.approx(1.0)
        assert metrics["completion_rate"] == pytest.approx(0.5)
        assert metrics["mean_queue"] == pytest.approx(2.0)
        assert metrics["total_travel_time"] == pytest.approx(100.0 + 100.0)

    def test_mean_speed_without_snapshots(self):
        """A result without distance snapshots reports the speed limit"""
        assert network_mean_speed(_result([])) == pytest.approx(13.89)


@pytest.mark.unit
class TestFundamentals:
    """Interval aggregation of the engine stream"""

    def setup_method(self):
        self.stream = [
            StepSample(clock=c, on_network=10, queued=0, exits=1 if c > 0 else 0,
                       cumulative_distance=100.0 * c if c % 300 == 0 else None)
            for c in range(0, 601)
        ]

    def test_constant_stream(self):
        """Ten vehicles at 10 m/s with one exit a second"""
        samples = record_fundamentals(self.stream, 300)
        assert [s.t for s in samples] == [300.0, 600.0]
        assert samples[0].accumulation == pytest.approx(10.0)
        assert samples[0].flow == pytest.approx(3600.0)
        assert samples[0].mean_speed == pytest.approx(10.0)

    def test_mean_speed_over_window(self):
        """Distance over vehicle time across the whole window"""
        result = _result([], self.stream, warmup=0, record=600)
        assert network_mean_speed(result) == pytest.approx(10.0)

    def test_interval_must_divide(self):
        """Partial intervals are refused"""
        with pytest.raises(ValueError):
            record_fundamentals(self.stream, 250)

    def test_empty_network_speed(self):
        """An empty interval reports the speed limit"""
        stream = [StepSample(clock=c, on_network=0, queued=0, exits=0, cumulative_distance=0.0)
                  for c in range(0, 11)]
        samples = record_fundamentals(stream, 10, speed_limit=13.89)
        assert samples[0].mean_speed == pytest.approx(13.89)


@pytest.mark.unit
class TestQuarticFit:
    """Fourth-order polynomial fits"""

    def test_recovers_quartic(self):
        """Exact data gives the generating coefficients"""
        coefficients = np.array([1.0, -2.0, 0.5, 0.1, -0.01])
        xs = np.linspace(0, 10, 30)
        fitted = polyfit4(list(zip(xs, polyval4(coefficients, xs))))
        assert fitted == pytest.approx(coefficients, abs=1e-6)

    def test_lower_degree_data(self):
        """A parabola gets zero cubic and quartic terms"""
        xs = np.arange(10, dtype=float)
        fitted = polyfit4(list(zip(xs, 3.0 - (xs - 4.0) ** 2)))
        assert len(fitted) == 5
        assert fitted[3:] == pytest.approx([0.0, 0.0], abs=1e-8)

    def test_rank_deficient(self):
        """Fewer than five distinct x values cannot be fitted"""
        with pytest.raises(RankDeficiencyError):
            polyfit4([(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (3.0, 0.0), (4.0, 1.0)])

    def test_least_squares_optimal(self):
        """Perturbing any fitted coefficient never lowers the squared error"""
        rng = np.random.default_rng(12)
        xs = np.linspace(0.0, 80.0, 40)
        ys = 40.0 * xs - 0.3 * xs ** 2 + rng.normal(0.0, 25.0, xs.size)
        fitted = polyfit4(list(zip(xs, ys)))

        def sse(coefficients):
            return float(np.sum((polyval4(coefficients, xs) - ys) ** 2))

        best = sse(fitted)
        scales = np.array([1.0, 1e-1, 1e-3, 1e-5, 1e-7])
        for _ in range(200):
            assert sse(fitted + rng.normal(0.0, 1.0, 5) * scales) >= best

    def test_peak(self):
        """The maximum of a downward parabola sits at its vertex"""
        x, value = quartic_peak([-1.0, 4.0, -1.0, 0.0, 0.0], 0.0, 4.0)
        assert x == pytest.approx(2.0)
        assert value == pytest.approx(3.0)


@pytest.mark.unit
class TestSignalStats:
    """Switch counts and green/red durations from an event log"""

    def setup_method(self):
        self.events = [
            SignalEvent(0, "J0000", GREEN_START, 0),
            SignalEvent(30, "J0000", TRANSITION_START, 0),
            SignalEvent(33, "J0000", GREEN_START, 1),
            SignalEvent(50, "J0000", TRANSITION_START, 1),
            SignalEvent(53, "J0000", GREEN_START, 0),
        ]

    def test_durations(self):
        """Greens run from green_start to transition_start, reds the other way"""
        stats = signal_stats(self.events, (0.0, 3600.0), n_intersections=1)
        assert stats["switches"] == 2
        assert stats["switches_per_intersection_hour"] == pytest.approx(2.0)
        assert sorted(stats["green_durations"]) == [(0, 30), (1, 17)]
        assert stats["red_durations"] == [(0, 23)]
        assert max_red_duration(self.events) == 23

    def test_initial_red(self):
        """The red before a phase's first green counts from clock 0 on request"""
        assert initial_red_durations(self.events) == [(1, 33.0)]
        assert max_red_duration(self.events, include_initial=True) == 33

    def test_non_alternating(self):
        """Two green starts in a row are rejected"""
        events = self.events[:1] + [SignalEvent(10, "J0000", GREEN_START, 1)]
        with pytest.raises(MalformedLogError):
            signal_stats(events, (0.0, 3600.0))


@pytest.mark.unit
class TestFrames:
    """Tabular views"""

    def test_trips_frame_columns(self):
        """Trip tables use the fixed column order"""
        frame = trips_frame(_result([_trip(0, 10.0)]))
        assert list(frame.columns) == TRIP_COLUMNS
        assert frame.loc[0, "delay_s"] == pytest.approx(10.0)

    def test_seed_summary_order_independent(self):
        """Shuffled seed rows summarise identically"""
        frame = pd.DataFrame({"controller": ["a"] * 3 + ["b"] * 3, "seed": [0, 1, 2] * 2,
                              "throughput": [1.0, 2.0, 3.0, 4.0, 4.0, 4.0]})
        summary = seed_summary(frame, ["controller"], ["throughput"])
        shuffled = seed_summary(frame.sample(frac=1.0, random_state=3), ["controller"], ["throughput"])
        pd.testing.assert_frame_equal(summary, shuffled)
        row = summary.set_index("controller").loc["a"]
        assert row["throughput_mean"] == pytest.approx(2.0)
        assert row["throughput_std"] == pytest.approx(1.0)
        assert row["throughput_se"] == pytest.approx(1.0 / np.sqrt(3))
        assert summary.set_index("controller").loc["b", "throughput_std"] == 0.0


@pytest.mark.integration
class TestSwitchRate:
    """Switch counts of a running fixed-cycle signal"""

    def test_fixed_cycle_switches(self):
        """20 s and 10 s greens with 3 s transitions make a 72 s cycle and 200 switches an hour"""
        network = build_grid(1, 1, 100.0, 2, 13.89)
        result = run_scenario(network, [], ControllerSpec.fixed_cycle(20, 10), warmup=0, record=3600)
        stats = signal_stats(result.events, (0.0, 3600.0), n_intersections=1)
        assert stats["switches"] == 200
        assert stats["switches_per_intersection_hour"] == pytest.approx(200.0)
        assert sorted({d for _, d in stats["green_durations"]}) == [10, 20]
