"""
Optimization

Multi-seed grid search over controller parameters, delay-response sweeps
for (gamma, tau), constrained Priority Pass parameter selection and
city-scale extrapolation.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache, partial
from itertools import product
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np
import pandas as pd
import psutil

from config import get_config, is_test_environment
from control import FIXED_CYCLE, MAX_PRESSURE, PRIORITY_PASS, ControllerSpec
from demand import DemandConfig, FlowSchedule, spawn_schedule
from engine import DynamicsParams, run_scenario
from exceptions import InfeasibleSelectionError, ProfileGapError
from logging_config import PerformanceLogger
from market import (
    MARKET, Consumer, DelayResponse, MarketScenario, RESPONSE_COLUMNS, allocate,
    consumers_for_vehicles, system_benefit_Cr, user_benefit_cr, welfare_summary,
)
from metrics import (
    SimResult, aggregate_efficiency, fundamentals_frame, group_delays, network_mean_speed, record_fundamentals,
    seed_summary,
)
from netgrid import Network, build_grid
from run_cache import ResultCache, evaluation_key, get_result_cache

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()

OBJECTIVES: Dict[str, Tuple[str, str]] = {
    "total_travel_time": ("total_travel_time", "min"),
    "throughput": ("throughput", "max"),
    "queue": ("mean_queue", "min"),
    "delay": ("mean_delay", "min"),
    "user_benefit": ("c_r", "max"),
    "system_benefit": ("C_r", "max"),
}
BENEFIT_OBJECTIVES = ("user_benefit", "system_benefit")
PARAMETERS = {
    FIXED_CYCLE: ("t_f1", "t_f2"),
    MAX_PRESSURE: ("t_min", "t_auc"),
    PRIORITY_PASS: ("gamma", "tau"),
}
METRIC_COLUMNS = [
    "throughput", "completion_rate", "mean_queue", "mean_delay", "total_travel_time", "mean_speed",
    "delta_avg", "delta_pp", "delta_npp", "sd_pp", "sd_npp", "mean_trip_km",
]
UNIT_GRID = tuple(round(0.1 * i, 1) for i in range(11))
REFINE_STEP = 0.05


@dataclass(frozen=True)
class MarketSpec:
    """Picklable market scenario for worker processes"""
    wages: Tuple[Tuple[float, float], ...]
    p_urgency: float = 0.5
    minimum_wage: float = 15.0
    population_size: int = 10000

    @classmethod
    def from_scenario(cls, scenario: MarketScenario) -> 'MarketSpec':
        wages = tuple((float(w), float(p)) for w, p in
                      scenario.wages[["wage_usd_per_h", "probability"]].itertuples(index=False))
        return cls(wages=wages, p_urgency=scenario.p_urgency, minimum_wage=scenario.minimum_wage,
                   population_size=scenario.population_size)

    def to_scenario(self) -> MarketScenario:
        table = pd.DataFrame(list(self.wages), columns=["wage_usd_per_h", "probability"])
        return MarketScenario(wages=table, p_urgency=self.p_urgency, minimum_wage=self.minimum_wage,
                              population_size=self.population_size)


@dataclass(frozen=True)
class Scenario:
    """Network, demand and dynamics of one experiment"""
    rows: int = 3
    cols: int = 3
    link_length: float = 100.0
    lanes_per_dir: int = 2
    speed_limit: float = 13.89
    flow: float = 250.0
    schedule: Optional[Tuple[Tuple[float, float], ...]] = None
    warmup: int = 600
    record: int = 3600
    saturation_headway: float = 2.0
    effective_vehicle_length: float = 7.5
    exclude_uturn: bool = True
    sample_interval: int = 300
    t_max: int = 120
    t_trans: int = 3

    def network(self) -> Network:
        return _network(self.rows, self.cols, self.link_length, self.lanes_per_dir, self.speed_limit)

    def dynamics(self) -> DynamicsParams:
        return DynamicsParams(saturation_headway=self.saturation_headway,
                              effective_vehicle_length=self.effective_vehicle_length)

    def demand(self, seed: int, gamma: float = 0.0) -> DemandConfig:
        schedule = FlowSchedule(self.schedule) if self.schedule else None
        return DemandConfig(flow_per_entrance=self.flow, entitlement_share=gamma,
                            duration=self.warmup + self.record, seed=seed, schedule=schedule,
                            exclude_uturn=self.exclude_uturn)

    def with_flow(self, flow: float) -> 'Scenario':
        return Scenario(**{**asdict(self), "flow": float(flow)})

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def network_inflow(self) -> float:
        """Total inflow over all entrances [veh/h]"""
        return self.flow * 2 * (self.rows + self.cols)


@lru_cache(maxsize=16)
def _network(rows: int, cols: int, link_length: float, lanes: int, speed_limit: float) -> Network:
    return build_grid(rows, cols, link_length, lanes, speed_limit)


def default_jobs() -> int:
    configured = get_config().runner.jobs
    if configured:
        return configured
    if is_test_environment():
        return 1
    return psutil.cpu_count(logical=False) or 1


def controller_spec(kind: str, point: Dict[str, float], scenario: Scenario,
                    base: Optional[Dict[str, float]] = None) -> ControllerSpec:
    """Controller for a parameter point; Priority Pass takes t_min/t_auc from base"""
    merged = {**(base or {}), **point}
    if kind == FIXED_CYCLE:
        return ControllerSpec.fixed_cycle(int(merged["t_f1"]), int(merged["t_f2"]), scenario.t_trans)
    if kind == MAX_PRESSURE:
        return ControllerSpec.max_pressure(int(merged["t_min"]), int(merged["t_auc"]), scenario.t_max, scenario.t_trans)
    return ControllerSpec.priority_pass(float(merged["tau"]), int(merged["t_min"]), int(merged["t_auc"]),
                                        scenario.t_max, scenario.t_trans)


@dataclass(frozen=True)
class EvaluationTask:
    scenario: Scenario
    kind: str
    point: Tuple[Tuple[str, float], ...]
    seed: int
    base: Tuple[Tuple[str, float], ...] = ()
    market: Optional[MarketSpec] = None

    @property
    def point_dict(self) -> Dict[str, float]:
        return dict(self.point)

    @property
    def gamma(self) -> float:
        return float(self.point_dict.get("gamma", dict(self.base).get("gamma", 0.0)))

    def cache_key(self) -> str:
        return evaluation_key(
            {**self.scenario.as_dict(), "kind": self.kind, "base": dict(self.base),
             "market": asdict(self.market) if self.market else None},
            self.point_dict, self.seed,
        )


def simulate_task(task: EvaluationTask) -> SimResult:
    """Run one (point, seed) and return the full result"""
    scenario = task.scenario
    network = scenario.network()
    vehicles = spawn_schedule(scenario.demand(task.seed, task.gamma), network)
    if task.market is not None:
        consumers = consumers_for_vehicles(vehicles, task.market.to_scenario(), task.seed)
        for vehicle, consumer in zip(vehicles, consumers):
            vehicle.vot = consumer.vot
    spec = controller_spec(task.kind, task.point_dict, scenario, dict(task.base))
    return run_scenario(network, vehicles, spec, scenario.warmup, scenario.record, seed=task.seed,
                        dynamics=scenario.dynamics(), sample_interval=scenario.sample_interval)


def result_metrics(result: SimResult) -> Dict[str, float]:
    """Flat efficiency and delay metrics of one run"""
    metrics = aggregate_efficiency(result)
    metrics["mean_speed"] = network_mean_speed(result)
    groups = group_delays(result)
    for name in ("delta_avg", "delta_pp", "delta_npp", "sd_pp", "sd_npp"):
        metrics[name] = groups[name]
    # Empty groups take the run-wide delay
    for name, sd in (("delta_pp", "sd_pp"), ("delta_npp", "sd_npp")):
        if math.isnan(metrics[name]):
            metrics[name] = metrics["delta_avg"] if not math.isnan(metrics["delta_avg"]) else 0.0
            metrics[sd] = 0.0
    if math.isnan(metrics["delta_avg"]):
        metrics["delta_avg"] = 0.0
    completed = [t for t in result.trips if t.completed]
    metrics["mean_trip_km"] = float(np.mean([t.route_length_m for t in completed]) / 1000.0) if completed else 0.0
    entitled = [t.vot for t in result.trips if t.entitled]
    others = [t.vot for t in result.trips if not t.entitled]
    metrics["u_pp"] = float(np.mean(entitled)) if entitled else 0.0
    metrics["u_npp"] = float(np.mean(others)) if others else 0.0
    return metrics


def evaluate(task: EvaluationTask) -> Dict[str, float]:
    return result_metrics(simulate_task(task))


def _map(fn: Callable, tasks: Sequence, jobs: int) -> List:
    """Ordered results; a single job runs in-process"""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def evaluate_all(tasks: Sequence[EvaluationTask], jobs: Optional[int] = None,
                 cache: Optional[ResultCache] = None) -> List[Dict[str, float]]:
    """Evaluate tasks through the cache and the worker pool, in task order"""
    cache = cache if cache is not None else get_result_cache()
    jobs = jobs or default_jobs()
    keys = [t.cache_key() for t in tasks]
    missing = [i for i, k in enumerate(keys) if k not in cache]
    fresh = _map(evaluate, [tasks[i] for i in missing], jobs)
    for i, metrics in zip(missing, fresh):
        cache.set(keys[i], metrics)
    # A small cache may have evicted entries computed above
    return [cache.get_or_set(key, partial(evaluate, task)) for key, task in zip(keys, tasks)]


def run_seeds(scenario: Scenario, kind: str, point: Dict[str, float], seeds: Sequence[int],
              base: Optional[Dict[str, float]] = None, market: Optional[MarketSpec] = None,
              jobs: Optional[int] = None) -> List[SimResult]:
    """Full results of one point for every seed"""
    tasks = [EvaluationTask(scenario, kind, tuple(sorted(point.items())), s,
                            tuple(sorted((base or {}).items())), market) for s in seeds]
    return _map(simulate_task, tasks, jobs or default_jobs())


@dataclass
class SearchSpace:
    kind: str
    grids: Dict[str, Sequence[float]]
    objective: str = "total_travel_time"
    seeds: Sequence[int] = tuple(range(10))
    flows: Sequence[float] = (250.0,)

    def __post_init__(self):
        if self.kind not in PARAMETERS:
            raise ValueError(f"Unknown controller kind {self.kind}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"Unknown objective {self.objective}")
        if not self.grids or any(len(v) == 0 for v in self.grids.values()):
            raise ValueError("Every parameter grid must be nonempty")
        if len(self.seeds) < 1 or len(self.flows) < 1:
            raise ValueError("At least one seed and one flow are required")

    @property
    def names(self) -> List[str]:
        return sorted(self.grids)

    def points(self) -> List[Dict[str, float]]:
        names = self.names
        return [dict(zip(names, values)) for values in product(*(sorted(self.grids[n]) for n in names))]

    @classmethod
    def benchmark(cls, kind: str, objective: str = "total_travel_time", seeds: Sequence[int] = tuple(range(10)),
                  flows: Sequence[float] = (250.0,), lo: int = 1, hi: int = 40) -> 'SearchSpace':
        values = list(range(lo, hi + 1))
        return cls(kind, {name: values for name in PARAMETERS[kind]}, objective, seeds, flows)


@dataclass
class SweepResult:
    table: pd.DataFrame
    summary: pd.DataFrame
    best: Dict[str, Any]
    objective: str
    stats: Dict[str, Any] = field(default_factory=dict)


def _add_benefits(table: pd.DataFrame, reference: pd.DataFrame, scenario: Scenario) -> pd.DataFrame:
    merged = table.merge(reference[["flow", "seed", "delta_avg"]].rename(columns={"delta_avg": "delta_base"}),
                         on=["flow", "seed"], how="left")
    merged["c_r"] = [
        user_benefit_cr(r.delta_base, r.delta_pp, r.delta_npp, r.gamma, r.u_pp, r.u_npp)
        for r in merged.itertuples(index=False)
    ]
    merged["C_r"] = [
        system_benefit_Cr(r.c_r, scenario.with_flow(r.flow).network_inflow, r.mean_trip_km)
        for r in merged.itertuples(index=False)
    ]
    return merged


def pick_best(summary: pd.DataFrame, names: Sequence[str], objective: str) -> Dict[str, Any]:
    """Extremal seed-mean; ties to lower travel time, then lexicographic parameters"""
    column, direction = OBJECTIVES[objective]
    columns = list(dict.fromkeys([f"{column}_mean", "total_travel_time_mean"]))
    per_point = summary.groupby(list(names), sort=True)[columns].mean().reset_index()
    sign = 1.0 if direction == "min" else -1.0
    per_point["_rank"] = sign * per_point[f"{column}_mean"]
    ordered = per_point.sort_values(["_rank", "total_travel_time_mean"] + list(names), kind="mergesort")
    best = ordered.iloc[0]
    return {
        "point": {n: best[n].item() if hasattr(best[n], "item") else best[n] for n in names},
        "objective": objective,
        "value": float(best[f"{column}_mean"]),
    }


def grid_search(space: SearchSpace, scenario: Scenario, base: Optional[Dict[str, float]] = None,
                market: Optional[MarketSpec] = None, jobs: Optional[int] = None,
                cache: Optional[ResultCache] = None) -> SweepResult:
    """Evaluate every grid point with every seed and flow"""
    start_time = time.time()
    cache = cache if cache is not None else get_result_cache()
    base = base or {}
    points = space.points()
    tasks = [
        EvaluationTask(scenario.with_flow(flow), space.kind, tuple(sorted(p.items())), seed,
                       tuple(sorted(base.items())), market)
        for p in points for flow in space.flows for seed in space.seeds
    ]
    metrics = evaluate_all(tasks, jobs, cache)
    rows = []
    for task, m in zip(tasks, metrics):
        rows.append({**task.point_dict, "flow": task.scenario.flow, "seed": task.seed, **m})
    table = pd.DataFrame(rows)
    if "gamma" not in table.columns:
        table["gamma"] = float(base.get("gamma", 0.0))

    if space.objective in BENEFIT_OBJECTIVES:
        reference_point = {"t_min": base.get("t_min"), "t_auc": base.get("t_auc")}
        if None in reference_point.values():
            raise ValueError("Benefit objectives need t_min and t_auc in base")
        ref_tasks = [
            EvaluationTask(scenario.with_flow(flow), MAX_PRESSURE, tuple(sorted(reference_point.items())), seed)
            for flow in space.flows for seed in space.seeds
        ]
        reference = pd.DataFrame([
            {"flow": t.scenario.flow, "seed": t.seed, **m}
            for t, m in zip(ref_tasks, evaluate_all(ref_tasks, jobs, cache))
        ])
        table = _add_benefits(table, reference, scenario)

    table = table.sort_values(space.names + ["flow", "seed"], kind="mergesort").reset_index(drop=True)
    metric_names = [c for c in table.columns if c not in space.names + ["flow", "seed"]]
    summary = seed_summary(table, space.names + ["flow"], metric_names)
    best = pick_best(summary, space.names, space.objective)
    duration = time.time() - start_time
    perf_logger.log_stage(f"grid_search {space.kind}", duration, len(tasks))
    logger.info(f"Best {space.kind} point {best['point']} ({space.objective}={best['value']:.3f})")
    return SweepResult(table=table, summary=summary, best=best, objective=space.objective, stats=cache.get_stats())


def refine_grid(incumbent: float, step: float = REFINE_STEP, radius: float = 0.1,
                lo: float = 0.0, hi: float = 1.0) -> List[float]:
    """Finer values around an incumbent, clipped to [lo, hi]"""
    count = int(round(radius / step))
    values = {round(incumbent + k * step, 4) for k in range(-count, count + 1)}
    return sorted(v for v in values if lo - 1e-9 <= v <= hi + 1e-9)


def build_delay_response(scenario: Scenario, flows: Sequence[float], gammas: Sequence[float],
                         taus: Sequence[float], seeds: Sequence[int], t_min: int, t_auc: int,
                         jobs: Optional[int] = None, cache: Optional[ResultCache] = None,
                         market: Optional[MarketSpec] = None) -> Tuple[DelayResponse, pd.DataFrame]:
    """Priority Pass sweep over (gamma, tau) with the Max-Pressure reference at each flow"""
    base = {"t_min": t_min, "t_auc": t_auc}
    space = SearchSpace(PRIORITY_PASS, {"gamma": list(gammas), "tau": list(taus)}, "total_travel_time",
                        seeds, flows)
    sweep = grid_search(space, scenario, base=base, market=market, jobs=jobs, cache=cache)

    ref_tasks = [
        EvaluationTask(scenario.with_flow(flow), MAX_PRESSURE, tuple(sorted(base.items())), seed)
        for flow in flows for seed in seeds
    ]
    reference = pd.DataFrame([
        {"flow": t.scenario.flow, "seed": t.seed, **m}
        for t, m in zip(ref_tasks, evaluate_all(ref_tasks, jobs, cache))
    ])
    ref_means = reference.groupby("flow")[["throughput", "mean_speed", "delta_avg"]].mean()

    means = sweep.table.groupby(["flow", "gamma", "tau"], sort=True)[
        ["delta_avg", "delta_pp", "delta_npp", "sd_pp", "sd_npp", "throughput", "mean_speed"]
    ].mean().reset_index()
    means["mp_throughput"] = means["flow"].map(ref_means["throughput"])
    means["mp_mean_speed"] = means["flow"].map(ref_means["mean_speed"])
    means["delta_base"] = means["flow"].map(ref_means["delta_avg"])
    reference["tau"] = np.nan
    reference["gamma"] = np.nan
    raw = pd.concat([sweep.table.assign(controller=PRIORITY_PASS), reference.assign(controller=MAX_PRESSURE)],
                    ignore_index=True)
    return DelayResponse(means[RESPONSE_COLUMNS]), raw


@dataclass
class PrioritySelection:
    gamma: float
    tau: float
    price: Optional[float]
    c_r: float
    C_r: float
    flow: float
    throughput_loss: float
    speed_loss: float
    efficiency_budget: float
    candidates: pd.DataFrame

    def as_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma, "tau": self.tau, "price": self.price, "c_r": self.c_r, "C_r": self.C_r,
            "flow": self.flow, "throughput_loss": self.throughput_loss, "speed_loss": self.speed_loss,
            "efficiency_budget": self.efficiency_budget,
            "slack_throughput": self.efficiency_budget - self.throughput_loss,
            "slack_speed": self.efficiency_budget - self.speed_loss,
        }


def efficiency_losses(point: Dict[str, float]) -> Tuple[float, float]:
    """Relative throughput and speed loss against Max-Pressure, floored at 0"""
    def loss(value: float, reference: float) -> float:
        if reference <= 0:
            return 0.0
        return max(0.0, (reference - value) / reference)
    return loss(point["throughput"], point["mp_throughput"]), loss(point["mean_speed"], point["mp_mean_speed"])


def select_priority_params(response: DelayResponse, consumers: Sequence[Consumer], flow: float,
                           network_inflow: float, mean_trip_km: float, efficiency_budget: float = 0.05,
                           mode: str = MARKET, retention: float = 0.0,
                           nearest_flow: bool = False) -> PrioritySelection:
    """Maximise the system benefit subject to c_r > 0 and the efficiency budget"""
    flow = response.resolve_flow(flow, nearest_flow)
    gammas, taus = response.grid(flow)
    rows = []
    for gamma, tau in product(gammas, taus):
        point = response.lookup(gamma, tau, flow)
        thr_loss, speed_loss = efficiency_losses(point)
        if gamma == 0.0:
            rows.append({"gamma": gamma, "tau": tau, "price": None, "c_r": 0.0, "C_r": 0.0,
                         "throughput_loss": thr_loss, "speed_loss": speed_loss, "admissible": True})
            continue
        allocation = allocate(consumers, mode, gamma, response, tau, flow, retention)
        summary = welfare_summary(consumers, allocation, point)
        c_r = summary["c_r_adjusted"]
        rows.append({
            "gamma": gamma, "tau": tau,
            "price": allocation.price if allocation.buyers else None,
            "c_r": c_r,
            "C_r": system_benefit_Cr(c_r, network_inflow, mean_trip_km),
            "throughput_loss": thr_loss, "speed_loss": speed_loss,
            "admissible": bool(c_r > 0 and thr_loss < efficiency_budget and speed_loss < efficiency_budget),
        })
    candidates = pd.DataFrame(rows)
    admissible = candidates[candidates["admissible"]]
    if admissible.empty:
        raise InfeasibleSelectionError(
            f"No (gamma, tau) point at flow {flow} satisfies the trade-off constraints",
            details={"flow": flow, "efficiency_budget": efficiency_budget}
        )
    best = admissible.assign(_neg=-admissible["C_r"]).sort_values(["_neg", "gamma", "tau"], kind="mergesort").iloc[0]
    return PrioritySelection(
        gamma=float(best["gamma"]), tau=float(best["tau"]),
        price=None if best["price"] is None or pd.isna(best["price"]) else float(best["price"]),
        c_r=float(best["c_r"]), C_r=float(best["C_r"]), flow=flow,
        throughput_loss=float(best["throughput_loss"]), speed_loss=float(best["speed_loss"]),
        efficiency_budget=efficiency_budget, candidates=candidates,
    )


@dataclass(frozen=True)
class CityParams:
    intersections: int = 2862
    trips_per_day: float = 5958060.0
    mean_trip_km: float = 5.0


def _check_hours(frame: pd.DataFrame, name: str) -> None:
    hours = sorted(frame["hour"].astype(int).tolist())
    if hours != list(range(24)):
        missing = sorted(set(range(24)) - set(hours))
        raise ProfileGapError(f"{name} does not cover every hour once", details={"missing": missing, "table": name})


def hourly_flows(profile: pd.DataFrame, peak_flow: float) -> pd.DataFrame:
    """Per-entrance case-study flow per hour, peak hour mapped to peak_flow"""
    _check_hours(profile, "daily profile")
    shares = profile.sort_values("hour")
    return pd.DataFrame({"hour": shares["hour"].astype(int),
                         "flow": shares["share"] / shares["share"].max() * peak_flow}).reset_index(drop=True)


def city_hourly_table(response: DelayResponse, consumers: Sequence[Consumer], profile: pd.DataFrame,
                      peak_flow: float, city: CityParams, scenario: Scenario,
                      efficiency_budget: float = 0.05, mode: str = MARKET, retention: float = 0.0) -> pd.DataFrame:
    """Optimum per hour at the nearest recorded flow"""
    flows = hourly_flows(profile, peak_flow)
    selections: Dict[float, PrioritySelection] = {}
    rows = []
    for hour, flow in flows.itertuples(index=False):
        recorded = response.resolve_flow(flow, nearest_flow=True)
        if recorded not in selections:
            mean_km = float(np.mean([c.route_length_km for c in consumers])) if consumers else 0.0
            selections[recorded] = select_priority_params(
                response, consumers, recorded, scenario.with_flow(recorded).network_inflow, mean_km,
                efficiency_budget, mode, retention,
            )
        sel = selections[recorded]
        rows.append({
            "hour": int(hour), "flow": float(flow), "recorded_flow": recorded,
            "gamma": sel.gamma, "tau": sel.tau, "price": sel.price or 0.0,
            "benefit_per_user": sel.c_r * city.mean_trip_km,
        })
    return pd.DataFrame(rows)


def extrapolate_city(hourly: pd.DataFrame, profile: pd.DataFrame, city: CityParams,
                     retention: float = 1.0) -> Tuple[Dict[str, float], pd.DataFrame]:
    """Daily welfare and revenue from per-hour benefit, price and entitlement share"""
    _check_hours(hourly, "hourly table")
    _check_hours(profile, "daily profile")
    shares = profile.set_index(profile["hour"].astype(int))["share"]
    table = hourly.sort_values("hour").reset_index(drop=True).copy()
    table["trips"] = table["hour"].astype(int).map(shares / shares.sum()) * city.trips_per_day
    table["buyers"] = table["gamma"] * table["trips"]
    table["welfare"] = table["benefit_per_user"] * table["trips"]
    table["revenue"] = table["buyers"] * table["price"] * retention
    buyers = float(table["buyers"].sum())
    summary = {
        "welfare_per_day": float(table["welfare"].sum()),
        "revenue_per_day": float(table["revenue"].sum()),
        "mean_price": float((table["buyers"] * table["price"]).sum() / buyers) if buyers > 0 else 0.0,
        "prioritized_count": buyers,
        "trips_per_day": city.trips_per_day,
        "intersections": city.intersections,
        "retention": retention,
    }
    return summary, table


def run_fundamentals(scenario: Scenario, specs: Dict[str, Tuple[str, Dict[str, float]]], seeds: Sequence[int],
                     interval: int = 300, gamma: float = 0.0, market: Optional[MarketSpec] = None,
                     jobs: Optional[int] = None) -> pd.DataFrame:
    """Fundamental samples per controller and seed over the whole horizon"""
    frames = []
    for name, (kind, point) in specs.items():
        base = {"gamma": gamma} if kind == PRIORITY_PASS else {}
        ramp = Scenario(**{**scenario.as_dict(), "warmup": 0})
        results = run_seeds(ramp, kind, point, seeds, base=base, market=market, jobs=jobs)
        for seed, result in zip(seeds, results):
            samples = record_fundamentals(result.stream, interval, speed_limit=scenario.speed_limit)
            frame = fundamentals_frame(seed, samples)
            frame.insert(0, "controller", name)
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)
