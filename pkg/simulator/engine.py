"""
Simulation Engine

Discrete-time link-queue dynamics on a grid network. Vehicles travel a link
at free-flow speed, wait in a lane-group queue at the stop line and cross
the intersection when their movement phase is green, the lane group has
discharge budget and the downstream link has room.
"""

from collections import deque
from dataclasses import dataclass, replace
from typing import Deque, Dict, List, Optional, Sequence
import logging
import math
import time

from config import get_config
from control import (
    GREEN_START, N_PHASES, ControllerSpec, SignalController, SignalEvent,
    build_controllers, observe_phases,
)
from demand import Vehicle
from metrics import SimResult, StepSample, TripRecord
from netgrid import DirectedLink, Network
from logging_config import PerformanceLogger

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()


@dataclass(frozen=True)
class DynamicsParams:
    saturation_headway: float = 2.0
    effective_vehicle_length: float = 7.5
    step: float = 1.0

    def __post_init__(self):
        if self.saturation_headway <= 0 or self.effective_vehicle_length <= 0:
            raise ValueError("saturation_headway and effective_vehicle_length must be positive")
        if self.step != 1.0:
            raise ValueError("Only a 1 s time step is supported")

    @classmethod
    def from_config(cls) -> 'DynamicsParams':
        defaults = get_config().dynamics
        return cls(saturation_headway=defaults.saturation_headway,
                   effective_vehicle_length=defaults.effective_vehicle_length)


class TripState:
    """A vehicle while it is on the network"""
    __slots__ = ("vehicle", "leg", "entered", "ready", "phase", "group")

    def __init__(self, vehicle: Vehicle):
        self.vehicle = vehicle
        self.leg = -1
        self.entered = 0.0
        self.ready = 0.0
        self.phase: Optional[int] = None
        self.group: Optional[str] = None


class LaneGroup:
    __slots__ = ("lanes", "phases", "queue", "budget", "rate", "cap")

    def __init__(self, lanes: int, phases: frozenset, headway: float):
        self.lanes = lanes
        self.phases = phases
        self.queue: Deque[TripState] = deque()
        self.budget = 0.0
        self.rate = lanes / headway
        self.cap = max(1.0, self.rate)


class LinkState:
    __slots__ = ("link", "capacity", "in_transit", "groups", "occupancy", "phase_n", "phase_e")

    def __init__(self, link: DirectedLink, groups: Dict[str, LaneGroup], vehicle_length: float):
        self.link = link
        self.capacity = max(1, math.floor(link.length * link.lane_count / vehicle_length))
        self.in_transit: Deque[TripState] = deque()
        self.groups = groups
        self.occupancy = 0
        self.phase_n = [0] * N_PHASES
        self.phase_e = [0] * N_PHASES

    @property
    def queued(self) -> int:
        return sum(len(g.queue) for g in self.groups.values())


class SimState:
    """Mutable state of one run"""

    def __init__(self, network: Network, vehicles: Sequence[Vehicle], dynamics: DynamicsParams):
        self.network = network
        self.dynamics = dynamics
        self.clock = 0
        self.links: Dict[str, LinkState] = {}
        for link in network.links:
            self.links[link.link_id] = LinkState(link, self._lane_groups(link), dynamics.effective_vehicle_length)
        self.pending: Deque[Vehicle] = deque(sorted(vehicles, key=lambda v: (v.spawn_time, v.vehicle_id)))
        self.entrance_queues: Dict[str, Deque[Vehicle]] = {e: deque() for e in network.entrances}
        self.spawned = 0
        self.virtual = 0
        self.on_network = 0
        self.completed: List[Vehicle] = []
        self.queued_total = 0
        self.exits_this_step = 0
        self.distance_completed = 0.0
        self.events: List[SignalEvent] = []

    def _lane_groups(self, link: DirectedLink) -> Dict[str, LaneGroup]:
        if link.kind == "exit":
            return {}
        phases: Dict[str, set] = {}
        for (lin, _), group in self.network.movement_group.items():
            if lin == link.link_id:
                phases.setdefault(group, set())
        for movement, phase in self.network.movement_phase.items():
            if movement[0] == link.link_id:
                phases[self.network.movement_group[movement]].add(phase)
        return {
            name: LaneGroup(lanes, frozenset(phases.get(name, ())), self.dynamics.saturation_headway)
            for name, lanes in self.network.lane_groups(link.link_id).items()
        }

    def census(self) -> Dict[str, int]:
        return {
            "spawned": self.spawned,
            "completed": len(self.completed),
            "on_network": self.on_network,
            "virtual_queue": self.virtual,
        }

    def check_conservation(self) -> None:
        if self.spawned != len(self.completed) + self.on_network + self.virtual:
            raise AssertionError(f"Vehicle census broken at clock {self.clock}: {self.census()}")
        for ls in self.links.values():
            if ls.occupancy > ls.capacity:
                raise AssertionError(f"Link {ls.link.link_id} over capacity at clock {self.clock}")

    def cumulative_distance(self) -> float:
        """Distance driven so far by all vehicles, including partial links"""
        total = self.distance_completed
        for ls in self.links.values():
            length = ls.link.length
            speed = ls.link.free_flow_speed
            for trip in ls.in_transit:
                total += min(length, speed * (self.clock - trip.entered))
            total += length * (ls.occupancy - len(ls.in_transit))
        return total


def _enter_link(state: SimState, trip: TripState, link_id: str, at: float) -> None:
    ls = state.links[link_id]
    trip.leg += 1
    trip.entered = at
    trip.ready = at + ls.link.free_flow_time
    links = trip.vehicle.route.links
    if trip.leg + 1 < len(links):
        movement = (link_id, links[trip.leg + 1])
        trip.phase = state.network.movement_phase[movement]
        trip.group = state.network.movement_group[movement]
        ls.phase_n[trip.phase] += 1
        if trip.vehicle.entitled:
            ls.phase_e[trip.phase] += 1
    else:
        trip.phase = None
        trip.group = None
    ls.occupancy += 1
    ls.in_transit.append(trip)


def _leave_link(state: SimState, ls: LinkState, trip: TripState) -> None:
    ls.occupancy -= 1
    state.distance_completed += ls.link.length
    if trip.phase is not None:
        ls.phase_n[trip.phase] -= 1
        if trip.vehicle.entitled:
            ls.phase_e[trip.phase] -= 1


def _discharge(state: SimState, green: Dict[str, Optional[int]], reset: set) -> None:
    network = state.network
    for inter in network.intersections:
        phase = green.get(inter.node_id)
        for lid in inter.incoming:
            ls = state.links[lid]
            for group in ls.groups.values():
                if inter.node_id in reset:
                    group.budget = 0.0
                if phase is None or phase not in group.phases:
                    continue
                group.budget = min(group.budget + group.rate, group.cap)
                while group.budget >= 1.0 and group.queue:
                    trip = group.queue[0]
                    # Head-of-line blocking: a red head vehicle holds the group
                    if trip.phase != phase:
                        break
                    out_id = trip.vehicle.route.links[trip.leg + 1]
                    if state.links[out_id].occupancy >= state.links[out_id].capacity:
                        break
                    group.queue.popleft()
                    group.budget -= 1.0
                    state.queued_total -= 1
                    _leave_link(state, ls, trip)
                    _enter_link(state, trip, out_id, float(state.clock))


def _arrive(state: SimState) -> None:
    clock = state.clock
    for ls in state.links.values():
        dq = ls.in_transit
        while dq and dq[0].ready <= clock:
            trip = dq.popleft()
            if ls.link.kind == "exit":
                _leave_link(state, ls, trip)
                trip.vehicle.arrival_time = trip.ready
                state.on_network -= 1
                state.exits_this_step += 1
                state.completed.append(trip.vehicle)
            else:
                ls.groups[trip.group].queue.append(trip)
                state.queued_total += 1


def _spawn(state: SimState) -> None:
    clock = state.clock
    while state.pending and state.pending[0].spawn_time <= clock:
        vehicle = state.pending.popleft()
        state.entrance_queues[vehicle.entrance].append(vehicle)
        state.spawned += 1
        state.virtual += 1
    for entrance, queue in state.entrance_queues.items():
        ls = state.links[entrance]
        while queue and ls.occupancy < ls.capacity:
            vehicle = queue.popleft()
            # Unblocked vehicles enter at their spawn instant, blocked ones now
            depart = vehicle.spawn_time if vehicle.spawn_time > clock - 1 else float(clock)
            vehicle.depart_time = depart
            _enter_link(state, TripState(vehicle), entrance, depart)
            state.virtual -= 1
            state.on_network += 1


def step(state: SimState, controllers: Sequence[SignalController]) -> None:
    """Advance one second: signals, discharge, link arrivals, insertions"""
    state.clock += 1
    state.exits_this_step = 0
    green: Dict[str, Optional[int]] = {}
    reset = set()
    for ctrl in controllers:
        obs = observe_phases(state.network, state, ctrl.intersection_id) if ctrl.needs_observation else None
        decision = ctrl.tick(state.clock, obs)
        green[ctrl.intersection_id] = decision.green_phase
        for event in decision.events:
            state.events.append(event)
            if event.event == GREEN_START:
                reset.add(ctrl.intersection_id)
    _discharge(state, green, reset)
    _arrive(state)
    _spawn(state)


def _trip_record(vehicle: Vehicle) -> TripRecord:
    return TripRecord(
        vehicle_id=vehicle.vehicle_id,
        entrance=vehicle.entrance,
        exit=vehicle.exit,
        route_length_m=vehicle.route.length,
        entitled=bool(vehicle.entitled),
        vot=float(vehicle.vot),
        spawn_s=vehicle.spawn_time,
        depart_s=vehicle.depart_time,
        arrive_s=vehicle.arrival_time,
        free_flow_s=vehicle.route.free_flow_time,
    )


def run_scenario(network: Network, vehicles: Sequence[Vehicle], controller_spec: ControllerSpec,
                 warmup: int, record: int, seed: int = 0, dynamics: Optional[DynamicsParams] = None,
                 sample_interval: int = 300, check_conservation: bool = False) -> SimResult:
    """Simulate warmup + record seconds and collect the recording-window result"""
    if warmup < 0 or record <= 0:
        raise ValueError("warmup must be non-negative and record positive")
    dynamics = dynamics or DynamicsParams.from_config()
    start_time = time.time()

    # Runs never mutate the caller's vehicles
    fleet = [replace(v, depart_time=None, arrival_time=None) for v in vehicles]
    state = SimState(network, fleet, dynamics)
    controllers = build_controllers(network, controller_spec)
    for ctrl in controllers:
        state.events.extend(ctrl.initial_events())

    end = warmup + record
    stream: List[StepSample] = []
    snapshot_clocks = {warmup, end} | set(range(warmup, end + 1, sample_interval))
    if warmup == 0:
        stream.append(StepSample(clock=0, on_network=0, queued=0, exits=0, cumulative_distance=0.0))

    while state.clock < end:
        step(state, controllers)
        if check_conservation:
            state.check_conservation()
        clock = state.clock
        if clock == warmup:
            # Window origin; its counts are not part of the window
            stream.append(StepSample(clock=warmup, on_network=state.on_network, queued=state.queued_total,
                                     exits=0, cumulative_distance=state.cumulative_distance()))
        elif clock > warmup:
            stream.append(StepSample(
                clock=clock,
                on_network=state.on_network,
                queued=state.queued_total,
                exits=state.exits_this_step,
                cumulative_distance=state.cumulative_distance() if clock in snapshot_clocks else None,
            ))

    window = [v for v in fleet if warmup <= v.spawn_time < end]
    multi_violations = sum(getattr(c.state, "multi_violator_events", 0) for c in controllers)
    if multi_violations:
        logger.warning(f"{multi_violations} ticks had several phases past the max-red bound")

    duration = time.time() - start_time
    perf_logger.log_run(controller_spec.kind, seed, duration, len(fleet))
    return SimResult(
        trips=[_trip_record(v) for v in window],
        stream=stream,
        events=list(state.events),
        metadata={
            **controller_spec.as_dict(),
            "seed": seed,
            "warmup": warmup,
            "record": record,
            "speed_limit": network.speed_limit,
            "intersections": len(network.intersections),
            "census": state.census(),
            "multi_violator_events": multi_violations,
        },
    )
