"""
Metrics

Efficiency, delay, fundamental-diagram and signal statistics computed
from immutable simulation results.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import math
import logging

import numpy as np
import pandas as pd

from exceptions import MalformedLogError, RankDeficiencyError

logger = logging.getLogger(__name__)

TRIP_COLUMNS = ["vehicle_id", "entrance", "exit", "route_length_m", "entitled", "vot",
                "spawn_s", "depart_s", "arrive_s", "delay_s"]
EVENT_COLUMNS = ["clock_s", "intersection_id", "event", "phase_id"]
EFFICIENCY_METRICS = ["throughput", "completion_rate", "mean_queue", "mean_delay", "total_travel_time"]
FUNDAMENTAL_COLUMNS = ["seed", "t", "accumulation", "flow", "speed"]
SIGNAL_COLUMNS = ["controller", "phase", "duration_s", "color"]


@dataclass(frozen=True)
class TripRecord:
    vehicle_id: int
    entrance: str
    exit: str
    route_length_m: float
    entitled: bool
    vot: float
    spawn_s: float
    depart_s: Optional[float]
    arrive_s: Optional[float]
    free_flow_s: float

    @property
    def completed(self) -> bool:
        return self.arrive_s is not None

    @property
    def delay_s(self) -> Optional[float]:
        """Total delay including any wait at the entrance"""
        if self.arrive_s is None:
            return None
        return self.arrive_s - self.spawn_s - self.free_flow_s


@dataclass(frozen=True)
class StepSample:
    clock: int
    on_network: int
    queued: int
    exits: int
    cumulative_distance: Optional[float] = None


@dataclass(frozen=True)
class FundamentalSample:
    t: float
    accumulation: float
    flow: float
    mean_speed: float


@dataclass
class SimResult:
    trips: List[TripRecord]
    stream: List[StepSample]
    events: list
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def warmup(self) -> float:
        return float(self.metadata.get("warmup", 0))

    @property
    def record(self) -> float:
        return float(self.metadata["record"])

    @property
    def speed_limit(self) -> float:
        return float(self.metadata.get("speed_limit", 13.89))


def delay_per_km(trip: TripRecord) -> float:
    """Delay per travelled kilometre of a completed trip [s/km]"""
    if trip.arrive_s is None:
        raise ValueError(f"Trip {trip.vehicle_id} has not completed")
    return trip.delay_s / (trip.route_length_m / 1000.0)


def completed_trips(result: SimResult) -> List[TripRecord]:
    return [t for t in result.trips if t.completed]


def group_delays(result: SimResult) -> Dict[str, float]:
    """Mean/std delay per km for all, entitled and non-entitled completed trips"""
    delays = np.array([delay_per_km(t) for t in completed_trips(result)], dtype=float)
    entitled = np.array([t.entitled for t in completed_trips(result)], dtype=bool)

    def stats(values: np.ndarray) -> Tuple[float, float]:
        if values.size == 0:
            return float("nan"), float("nan")
        return float(values.mean()), float(values.std(ddof=1)) if values.size > 1 else 0.0

    avg, sd_avg = stats(delays)
    pp, sd_pp = stats(delays[entitled]) if delays.size else (float("nan"), float("nan"))
    npp, sd_npp = stats(delays[~entitled]) if delays.size else (float("nan"), float("nan"))
    return {
        "delta_avg": avg, "sd_avg": sd_avg,
        "delta_pp": pp, "sd_pp": sd_pp,
        "delta_npp": npp, "sd_npp": sd_npp,
        "n_pp": int(entitled.sum()), "n_npp": int((~entitled).sum()),
    }


def delay_quantiles(result: SimResult, quantiles: Sequence[float] = (0.1, 0.25, 0.5, 0.75, 0.9)) -> pd.DataFrame:
    """Delay-per-km quantiles by entitlement group"""
    frame = pd.DataFrame(
        {"group": ["entitled" if t.entitled else "not_entitled" for t in completed_trips(result)],
         "delay_per_km": [delay_per_km(t) for t in completed_trips(result)]}
    )
    rows = []
    for group in ("entitled", "not_entitled", "all"):
        values = frame["delay_per_km"] if group == "all" else frame.loc[frame["group"] == group, "delay_per_km"]
        row = {"group": group, "count": int(values.size), "mean": float(values.mean()) if values.size else float("nan")}
        for q in quantiles:
            row[f"q{int(round(q * 100)):02d}"] = float(values.quantile(q)) if values.size else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def aggregate_efficiency(result: SimResult) -> Dict[str, float]:
    """Throughput, completion rate, mean queue, mean delay and total travel time of the window"""
    hours = result.record / 3600.0
    end = result.warmup + result.record
    trips = result.trips
    completed = [t for t in trips if t.completed]

    window_samples = [s for s in result.stream if s.clock > result.warmup]
    mean_queue = float(np.mean([s.queued for s in window_samples])) if window_samples else 0.0

    total_travel_time = 0.0
    for t in trips:
        if t.completed:
            total_travel_time += t.arrive_s - t.depart_s
        elif t.depart_s is not None:
            total_travel_time += end - t.depart_s
        else:
            total_travel_time += max(0.0, end - t.spawn_s)

    return {
        "throughput": len(completed) / hours,
        "completion_rate": len(completed) / len(trips) if trips else 1.0,
        "mean_queue": mean_queue,
        "mean_delay": float(np.mean([delay_per_km(t) for t in completed])) if completed else 0.0,
        "total_travel_time": total_travel_time,
    }


def network_mean_speed(result: SimResult) -> float:
    """Total distance / total vehicle time over the recording window"""
    snapshots = [s for s in result.stream if s.cumulative_distance is not None]
    window = [s for s in result.stream if s.clock > result.warmup]
    vehicle_time = float(sum(s.on_network for s in window))
    if len(snapshots) < 2 or vehicle_time == 0:
        return result.speed_limit
    distance = snapshots[-1].cumulative_distance - snapshots[0].cumulative_distance
    return distance / vehicle_time


def record_fundamentals(stream: Sequence[StepSample], interval: int, speed_limit: float = 13.89,
                        start: int = 0) -> List[FundamentalSample]:
    """Accumulation, flow and space-mean speed per interval of an engine stream"""
    by_clock = {s.clock: s for s in stream}
    horizon = max(by_clock) - start if by_clock else 0
    if interval <= 0 or horizon % interval != 0:
        raise ValueError(f"Interval {interval} must divide the horizon {horizon}")

    samples = []
    for t0 in range(start, start + horizon, interval):
        t1 = t0 + interval
        steps = [by_clock[c] for c in range(t0 + 1, t1 + 1)]
        d0 = by_clock[t0].cumulative_distance if t0 in by_clock else 0.0
        d1 = by_clock[t1].cumulative_distance
        if d0 is None or d1 is None:
            raise ValueError(f"Stream lacks distance snapshots at {t0} and {t1}")
        vehicle_time = float(sum(s.on_network for s in steps))
        distance = d1 - d0
        samples.append(FundamentalSample(
            t=float(t1),
            accumulation=vehicle_time / interval,
            flow=sum(s.exits for s in steps) * 3600.0 / interval,
            # Empty network reports the speed limit by convention
            mean_speed=distance / vehicle_time if vehicle_time > 0 else speed_limit,
        ))
    return samples


def polyfit4(points: Sequence[Tuple[float, float]]) -> np.ndarray:
    """Least-squares quartic, coefficients in ascending powers"""
    x = np.asarray([p[0] for p in points], dtype=float)
    y = np.asarray([p[1] for p in points], dtype=float)
    if np.unique(x).size < 5:
        raise RankDeficiencyError(
            f"Quartic fit needs at least 5 distinct x values, got {np.unique(x).size}",
            details={"distinct_x": int(np.unique(x).size)}
        )
    # Polynomial.fit maps x onto [-1, 1] before solving
    fitted = np.polynomial.Polynomial.fit(x, y, 4)
    coefficients = fitted.convert().coef
    return np.pad(coefficients, (0, 5 - coefficients.size))


def polyval4(coefficients: Sequence[float], x) -> np.ndarray:
    return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), np.asarray(coefficients, dtype=float))


def quartic_peak(coefficients: Sequence[float], x_min: float, x_max: float, resolution: int = 2001) -> Tuple[float, float]:
    """(x, value) of the fitted curve's maximum over the sampled range"""
    xs = np.linspace(x_min, x_max, resolution)
    values = polyval4(coefficients, xs)
    i = int(np.argmax(values))
    return float(xs[i]), float(values[i])


def _validate_alternation(events: Sequence) -> Dict[str, list]:
    per_intersection: Dict[str, list] = {}
    for ev in sorted(events, key=lambda e: (e.intersection_id, e.clock)):
        sequence = per_intersection.setdefault(ev.intersection_id, [])
        if sequence and sequence[-1].event == ev.event:
            raise MalformedLogError(
                f"Non-alternating events at {ev.intersection_id} clock={ev.clock}",
                details={"intersection_id": ev.intersection_id, "clock": ev.clock, "event": ev.event}
            )
        sequence.append(ev)
    return per_intersection


def signal_stats(events: Sequence, horizon: Tuple[float, float], n_intersections: Optional[int] = None) -> Dict[str, Any]:
    """Phase switches per intersection-hour and green/red duration distributions"""
    start, end = horizon
    per_intersection = _validate_alternation(events)
    n = n_intersections or len(per_intersection)
    hours = (end - start) / 3600.0

    switches = sum(
        1 for seq in per_intersection.values() for ev in seq
        if ev.event == "transition_start" and start <= ev.clock < end
    )

    green: List[Tuple[int, float]] = []
    red: List[Tuple[int, float]] = []
    for seq in per_intersection.values():
        last_green: Optional[Any] = None
        red_since: Dict[int, float] = {}
        for ev in seq:
            if ev.event == "green_start":
                if ev.phase_id in red_since and red_since[ev.phase_id] >= start and ev.clock <= end:
                    red.append((ev.phase_id, ev.clock - red_since.pop(ev.phase_id)))
                else:
                    red_since.pop(ev.phase_id, None)
                last_green = ev
            else:
                if last_green is not None and last_green.phase_id == ev.phase_id \
                        and last_green.clock >= start and ev.clock <= end:
                    green.append((ev.phase_id, ev.clock - last_green.clock))
                red_since[ev.phase_id] = ev.clock
                last_green = None

    return {
        "switches_per_intersection_hour": switches / (n * hours) if n and hours > 0 else 0.0,
        "switches": switches,
        "green_durations": green,
        "red_durations": red,
        "mean_green": float(np.mean([d for _, d in green])) if green else 0.0,
        "mean_red": float(np.mean([d for _, d in red])) if red else 0.0,
    }


def initial_red_durations(events: Sequence) -> List[Tuple[int, float]]:
    """Red from clock 0 to the first green of every phase not green at the start"""
    durations = []
    for seq in _validate_alternation(events).values():
        seen = set()
        for ev in seq:
            if ev.event != "green_start" or ev.phase_id in seen:
                continue
            seen.add(ev.phase_id)
            if ev.clock > 0:
                durations.append((ev.phase_id, float(ev.clock)))
    return durations


def max_red_duration(events: Sequence, include_initial: bool = False) -> float:
    """Longest red of any phase; include_initial adds the red before each phase's first green"""
    stats = signal_stats(events, (0.0, math.inf), n_intersections=1)
    durations = [d for _, d in stats["red_durations"]]
    if include_initial:
        durations += [d for _, d in initial_red_durations(events)]
    return max(durations, default=0.0)


def trips_frame(result: SimResult) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "vehicle_id": t.vehicle_id, "entrance": t.entrance, "exit": t.exit,
                "route_length_m": t.route_length_m, "entitled": bool(t.entitled), "vot": t.vot,
                "spawn_s": t.spawn_s, "depart_s": t.depart_s, "arrive_s": t.arrive_s, "delay_s": t.delay_s,
            }
            for t in result.trips
        ],
        columns=TRIP_COLUMNS,
    )


def events_frame(events: Sequence) -> pd.DataFrame:
    return pd.DataFrame(
        [{"clock_s": e.clock, "intersection_id": e.intersection_id, "event": e.event, "phase_id": e.phase_id}
         for e in events],
        columns=EVENT_COLUMNS,
    )


def signals_frame(controller: str, stats: Dict[str, Any]) -> pd.DataFrame:
    rows = [{"controller": controller, "phase": p, "duration_s": d, "color": "green"} for p, d in stats["green_durations"]]
    rows += [{"controller": controller, "phase": p, "duration_s": d, "color": "red"} for p, d in stats["red_durations"]]
    return pd.DataFrame(rows, columns=SIGNAL_COLUMNS)


def fundamentals_frame(seed: int, samples: Sequence[FundamentalSample]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"seed": seed, "t": s.t, "accumulation": s.accumulation, "flow": s.flow, "speed": s.mean_speed}
         for s in samples],
        columns=FUNDAMENTAL_COLUMNS,
    )


def seed_summary(frame: pd.DataFrame, keys: Sequence[str], metrics: Sequence[str]) -> pd.DataFrame:
    """Mean, std and standard error per metric across seeds, independent of row order"""
    ordered = frame.sort_values(list(keys) + (["seed"] if "seed" in frame.columns else []))
    grouped = ordered.groupby(list(keys), sort=True) if keys else None
    rows = []
    groups = grouped if grouped is not None else [((), ordered)]
    for key, group in groups:
        key = key if isinstance(key, tuple) else (key,)
        row = dict(zip(keys, key))
        row["seeds"] = int(len(group))
        for metric in metrics:
            values = group[metric].astype(float)
            row[f"{metric}_mean"] = float(values.mean())
            row[f"{metric}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            row[f"{metric}_se"] = row[f"{metric}_std"] / math.sqrt(len(values)) if len(values) > 0 else 0.0
        rows.append(row)
    return pd.DataFrame(rows)
