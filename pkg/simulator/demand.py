"""
Demand Generation

Poisson arrivals per entrance, uniform route choice, and the entitlement
flag of every vehicle (Bernoulli share or an allocation from the market).
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import bisect
import logging

import numpy as np
import pandas as pd

from exceptions import AllocationSizeMismatchError, OutputIOError
from netgrid import Network, Route, route_table, shortest_route

logger = logging.getLogger(__name__)

ENTITLEMENT_STREAM = 999
ARRIVAL_STREAM_BASE = 1000

RAMP_START_FLOW = 50.0
RAMP_FACTOR = 1.0863
RAMP_STAGE_S = 1000.0
RAMP_DURATION_S = 30000.0

VEHICLE_CSV_COLUMNS = ["vehicle_id", "entrance", "exit", "spawn_time", "entitled", "vot"]


@dataclass(slots=True)
class Vehicle:
    vehicle_id: int
    route: Route
    spawn_time: float
    entitled: bool = False
    vot: float = 0.0
    depart_time: Optional[float] = None
    arrival_time: Optional[float] = None

    @property
    def entrance(self) -> str:
        return self.route.origin

    @property
    def exit(self) -> str:
        return self.route.destination


@dataclass(frozen=True)
class FlowSchedule:
    """Piecewise-constant flow per entrance: (start_s, veh/h) pieces"""
    pieces: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        starts = [p[0] for p in self.pieces]
        if not self.pieces or starts[0] != 0.0 or starts != sorted(starts):
            raise ValueError("Flow schedule must start at 0 and be ordered")
        if any(p[1] < 0 for p in self.pieces):
            raise ValueError("Flows must be non-negative")

    @classmethod
    def constant(cls, flow: float) -> 'FlowSchedule':
        return cls(((0.0, float(flow)),))

    @classmethod
    def ramp(cls, start_flow: float = RAMP_START_FLOW, factor: float = RAMP_FACTOR,
             stage_s: float = RAMP_STAGE_S, duration: float = RAMP_DURATION_S) -> 'FlowSchedule':
        stages = int(np.ceil(duration / stage_s))
        return cls(tuple((k * stage_s, start_flow * factor ** k) for k in range(stages)))

    @classmethod
    def hourly(cls, flows: Sequence[float]) -> 'FlowSchedule':
        return cls(tuple((h * 3600.0, float(f)) for h, f in enumerate(flows)))

    def flow_at(self, t: float) -> float:
        starts = [p[0] for p in self.pieces]
        return self.pieces[bisect.bisect_right(starts, t) - 1][1]

    def next_boundary(self, t: float) -> float:
        starts = [p[0] for p in self.pieces]
        i = bisect.bisect_right(starts, t)
        return starts[i] if i < len(starts) else float("inf")


@dataclass
class DemandConfig:
    flow_per_entrance: float
    entitlement_share: float
    duration: float
    seed: int
    schedule: Optional[FlowSchedule] = None
    exclude_uturn: bool = True

    def __post_init__(self):
        if self.flow_per_entrance < 0:
            raise ValueError("flow_per_entrance must be non-negative")
        if not 0.0 <= self.entitlement_share <= 1.0:
            raise ValueError("entitlement_share must lie in [0, 1]")
        if self.schedule is None:
            self.schedule = FlowSchedule.constant(self.flow_per_entrance)


def _arrival_times(rng: np.random.Generator, schedule: FlowSchedule, duration: float) -> List[float]:
    times = []
    t = 0.0
    while t < duration:
        flow = schedule.flow_at(t)
        boundary = schedule.next_boundary(t)
        if flow <= 0:
            t = boundary
            continue
        t_next = t + rng.exponential(3600.0 / flow)
        if t_next >= boundary:
            # Memoryless: restart at the piece boundary with the new rate
            t = boundary
            continue
        if t_next >= duration:
            break
        times.append(t_next)
        t = t_next
    return times


def spawn_schedule(config: DemandConfig, network: Network,
                   routes: Optional[Dict[str, List[Route]]] = None) -> List[Vehicle]:
    """Generate the full vehicle list of a scenario, reproducible from the seed"""
    routes = routes or route_table(network, exclude_uturn=config.exclude_uturn)
    spawned: List[Tuple[float, int, Route]] = []
    for index, entrance in enumerate(network.entrances):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, ARRIVAL_STREAM_BASE + index]))
        options = routes[entrance]
        for t in _arrival_times(rng, config.schedule, config.duration):
            spawned.append((t, index, options[int(rng.integers(len(options)))]))

    spawned.sort(key=lambda item: (item[0], item[1]))
    vehicles = [Vehicle(vehicle_id=i, route=route, spawn_time=t) for i, (t, _, route) in enumerate(spawned)]

    rng_entitlement = np.random.default_rng(np.random.SeedSequence([config.seed, ENTITLEMENT_STREAM]))
    draws = rng_entitlement.random(len(vehicles))
    for vehicle, draw in zip(vehicles, draws):
        vehicle.entitled = bool(draw < config.entitlement_share)

    logger.debug(f"Spawn schedule seed={config.seed}: {len(vehicles)} vehicles")
    return vehicles


def assign_entitlement(vehicles: List[Vehicle], allocation) -> List[Vehicle]:
    """Overwrite entitled flags with an allocation's buyer set (and VOTs when it carries them)"""
    known = {v.vehicle_id for v in vehicles}
    unknown = set(allocation.buyers) - known
    if unknown:
        raise AllocationSizeMismatchError(
            f"Allocation refers to {len(unknown)} unknown vehicles",
            details={"unknown": sorted(unknown)[:10]}
        )
    vots = getattr(allocation, "vots", None) or {}
    for vehicle in vehicles:
        vehicle.entitled = vehicle.vehicle_id in allocation.buyers
        if vehicle.vehicle_id in vots:
            vehicle.vot = vots[vehicle.vehicle_id]
    return vehicles


def vehicles_to_frame(vehicles: Iterable[Vehicle]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "vehicle_id": v.vehicle_id,
                "entrance": v.entrance,
                "exit": v.exit,
                "spawn_time": v.spawn_time,
                "entitled": bool(v.entitled),
                "vot": v.vot,
            }
            for v in vehicles
        ],
        columns=VEHICLE_CSV_COLUMNS,
    )


def export_vehicles(vehicles: Iterable[Vehicle], path: str) -> None:
    try:
        vehicles_to_frame(vehicles).to_csv(path, index=False)
    except OSError as e:
        raise OutputIOError(f"Failed to write vehicle list {path}: {e}", details={"path": path})


def import_vehicles(path: str, network: Network) -> List[Vehicle]:
    """Read a vehicle list written by export_vehicles"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise OutputIOError(f"Failed to read vehicle list {path}: {e}", details={"path": path})
    missing = set(VEHICLE_CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise OutputIOError(f"Vehicle list {path} lacks columns {sorted(missing)}", details={"path": path})

    route_cache: Dict[Tuple[str, str], Route] = {}
    vehicles = []
    for row in frame.itertuples(index=False):
        key = (row.entrance, row.exit)
        if key not in route_cache:
            route_cache[key] = shortest_route(network, row.entrance, row.exit)
        vehicles.append(Vehicle(
            vehicle_id=int(row.vehicle_id),
            route=route_cache[key],
            spawn_time=float(row.spawn_time),
            entitled=bool(row.entitled),
            vot=float(row.vot),
        ))
    return vehicles
