"""
Signal Controllers

Fixed-cycle control with chessboard offsets, and the auction controller
that serves both Max-Pressure (tau = 0) and the Priority Pass. Each
intersection runs its own state machine; controllers never share state.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

from netgrid import Network

logger = logging.getLogger(__name__)

GREEN = "green"
TRANSITION = "transition"

GREEN_START = "green_start"
TRANSITION_START = "transition_start"

FIXED_CYCLE = "fixed_cycle"
MAX_PRESSURE = "max_pressure"
PRIORITY_PASS = "priority_pass"
CONTROLLER_KINDS = (FIXED_CYCLE, MAX_PRESSURE, PRIORITY_PASS)

N_PHASES = 4


@dataclass(frozen=True)
class SignalEvent:
    clock: int
    intersection_id: str
    event: str
    phase_id: int


@dataclass
class SignalDecision:
    green_phase: Optional[int]
    events: List[SignalEvent] = field(default_factory=list)
    auction_held: bool = False


@dataclass(frozen=True)
class AuctionParams:
    tau: float
    t_min: int
    t_auc: int
    t_max: int = 120
    t_trans: int = 3

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        for name in ("t_min", "t_auc", "t_max", "t_trans"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FixedCycleParams:
    t_f1: int
    t_f2: int
    t_trans: int = 3
    phase_order: Tuple[int, ...] = (0, 1, 2, 3)

    def __post_init__(self):
        for name in ("t_f1", "t_f2"):
            value = getattr(self, name)
            if not 1 <= value <= 40:
                raise ValueError(f"{name} must lie in [1, 40], got {value}")
        if self.t_trans <= 0:
            raise ValueError("t_trans must be positive")
        if sorted(self.phase_order) != list(range(N_PHASES)):
            raise ValueError("phase_order must be a permutation of the four phases")

    def green_duration(self, phase_id: int) -> int:
        # Through & left phases (P1, P3) get t_f1, right-turn phases t_f2
        return self.t_f1 if phase_id in (0, 2) else self.t_f2

    @property
    def cycle_length(self) -> int:
        return sum(self.green_duration(p) for p in self.phase_order) + N_PHASES * self.t_trans

    @property
    def chessboard_offset(self) -> float:
        return (self.t_f1 + self.t_f2) / 2.0


@dataclass(frozen=True)
class PhaseObservation:
    n: Tuple[int, ...]
    e: Tuple[int, ...]

    def __post_init__(self):
        if len(self.n) != len(self.e):
            raise ValueError("n and e must cover the same phases")
        for n_p, e_p in zip(self.n, self.e):
            if not 0 <= e_p <= n_p:
                raise ValueError("Observation requires 0 <= e_p <= n_p")

    @classmethod
    def empty(cls, phases: int = N_PHASES) -> 'PhaseObservation':
        return cls(n=(0,) * phases, e=(0,) * phases)


@dataclass
class ControllerState:
    intersection_id: str
    current_phase: int = 0
    phase_status: str = GREEN
    green_elapsed: int = 0
    transition_remaining: int = 0
    red_elapsed: List[int] = field(default_factory=lambda: [0] * N_PHASES)
    pending_target_phase: Optional[int] = None
    serving_max_red: bool = False
    multi_violator_events: int = 0


def compute_bid(obs: PhaseObservation, phase: int, tau: float) -> float:
    """Bid of a movement phase: blend of queued and entitled vehicles"""
    return (1.0 - tau) * obs.n[phase] + tau * obs.e[phase]


def _most_waiting(state: ControllerState, candidates: Sequence[int]) -> int:
    # Highest red_elapsed, then lowest phase index
    return min(candidates, key=lambda p: (-state.red_elapsed[p], p))


def _start_transition(state: ControllerState, target: int, clock: int, max_red: bool) -> SignalEvent:
    event = SignalEvent(clock, state.intersection_id, TRANSITION_START, state.current_phase)
    state.phase_status = TRANSITION
    state.pending_target_phase = target
    state.serving_max_red = max_red
    return event


def _note_violators(state: ControllerState, target: int, clock: int, params: AuctionParams) -> None:
    # Phases that will overshoot t_max by more than a second while the target serves its minimum green
    horizon = params.t_trans + params.t_min
    others = [p for p in range(len(state.red_elapsed))
              if p not in (target, state.current_phase) and state.red_elapsed[p] + horizon > params.t_max + 1]
    if others:
        state.multi_violator_events += 1
        logger.warning(
            f"Multiple max-red violations at {state.intersection_id} clock={clock}: "
            f"serving phase {target}, pending {others}"
        )


def auction_tick(state: ControllerState, obs: PhaseObservation, params: AuctionParams,
                 clock: int) -> SignalDecision:
    """Advance one intersection's auction state machine by one second"""
    phases = range(len(state.red_elapsed))

    if state.phase_status == TRANSITION:
        state.transition_remaining -= 1
        for p in phases:
            if p != state.pending_target_phase:
                state.red_elapsed[p] += 1
        if state.transition_remaining > 0:
            if not state.serving_max_red:
                violators = [p for p in phases
                             if p != state.pending_target_phase and state.red_elapsed[p] >= params.t_max]
                if violators:
                    state.pending_target_phase = _most_waiting(state, violators)
                    _note_violators(state, state.pending_target_phase, clock, params)
                    state.serving_max_red = True
            return SignalDecision(green_phase=None)
        state.current_phase = state.pending_target_phase
        state.pending_target_phase = None
        state.phase_status = GREEN
        state.green_elapsed = 0
        state.red_elapsed[state.current_phase] = 0
        event = SignalEvent(clock, state.intersection_id, GREEN_START, state.current_phase)
        return SignalDecision(green_phase=state.current_phase, events=[event])

    state.green_elapsed += 1
    for p in phases:
        if p != state.current_phase:
            state.red_elapsed[p] += 1

    if state.green_elapsed < params.t_min:
        return SignalDecision(green_phase=state.current_phase)

    violators = [p for p in phases if p != state.current_phase and state.red_elapsed[p] >= params.t_max]
    if violators:
        target = _most_waiting(state, violators)
        _note_violators(state, target, clock, params)
        event = _start_transition(state, target, clock, max_red=True)
        state.transition_remaining = params.t_trans
        return SignalDecision(green_phase=None, events=[event])

    if (state.green_elapsed - params.t_min) % params.t_auc != 0:
        return SignalDecision(green_phase=state.current_phase)

    bids = [compute_bid(obs, p, params.tau) for p in phases]
    best = max(bids)
    if bids[state.current_phase] >= best:
        return SignalDecision(green_phase=state.current_phase, auction_held=True)

    winner = _most_waiting(state, [p for p in phases if bids[p] == best])
    # A phase that would pass t_max during the winner's minimum green is served first
    horizon = params.t_trans + params.t_min
    imminent = [p for p in phases
                if p != state.current_phase and state.red_elapsed[p] + horizon > params.t_max]
    target = _most_waiting(state, imminent) if imminent else winner
    if imminent:
        _note_violators(state, target, clock, params)
    event = _start_transition(state, target, clock, max_red=bool(imminent))
    state.transition_remaining = params.t_trans
    return SignalDecision(green_phase=None, events=[event], auction_held=True)


def fixed_cycle_phase(params: FixedCycleParams, offset: float, clock: int) -> Tuple[int, str]:
    """(phase, status) of a fixed-cycle signal; a transition reports the phase it ends"""
    position = (clock - offset) % params.cycle_length
    start = 0.0
    for phase in params.phase_order:
        green_end = start + params.green_duration(phase)
        if position < green_end:
            return phase, GREEN
        if position < green_end + params.t_trans:
            return phase, TRANSITION
        start = green_end + params.t_trans
    return params.phase_order[-1], TRANSITION


def fixed_cycle_tick(state: ControllerState, params: FixedCycleParams, offset: float,
                     clock: int) -> SignalDecision:
    """Advance a fixed-cycle signal to `clock` and report any change as events"""
    phase, status = fixed_cycle_phase(params, offset, clock)
    events = []
    if (phase, status) != (state.current_phase, state.phase_status):
        kind = GREEN_START if status == GREEN else TRANSITION_START
        events.append(SignalEvent(clock, state.intersection_id, kind, phase))
    if status == GREEN and (phase != state.current_phase or state.phase_status != GREEN):
        state.green_elapsed = 0
    elif status == GREEN:
        state.green_elapsed += 1
    state.current_phase, state.phase_status = phase, status
    return SignalDecision(green_phase=phase if status == GREEN else None, events=events)


def observe_phases(network: Network, sim_state, intersection_id: str) -> PhaseObservation:
    """Vehicle and entitled counts per phase on the full incoming links of an intersection"""
    n = [0] * N_PHASES
    e = [0] * N_PHASES
    for link_id in network.intersection(intersection_id).incoming:
        link_state = sim_state.links[link_id]
        for p in range(N_PHASES):
            n[p] += link_state.phase_n[p]
            e[p] += link_state.phase_e[p]
    return PhaseObservation(n=tuple(n), e=tuple(e))


class SignalController(ABC):
    """One intersection's signal logic as seen by the engine"""

    needs_observation = False

    def __init__(self, intersection_id: str):
        self.intersection_id = intersection_id
        self.state = ControllerState(intersection_id=intersection_id)

    @abstractmethod
    def initial_events(self) -> List[SignalEvent]:
        pass

    @abstractmethod
    def tick(self, clock: int, obs: Optional[PhaseObservation]) -> SignalDecision:
        pass

    @property
    def green_phase(self) -> Optional[int]:
        return self.state.current_phase if self.state.phase_status == GREEN else None


class AuctionController(SignalController):
    needs_observation = True

    def __init__(self, intersection_id: str, params: AuctionParams):
        super().__init__(intersection_id)
        self.params = params

    def initial_events(self) -> List[SignalEvent]:
        return [SignalEvent(0, self.intersection_id, GREEN_START, self.state.current_phase)]

    def tick(self, clock: int, obs: Optional[PhaseObservation]) -> SignalDecision:
        return auction_tick(self.state, obs or PhaseObservation.empty(), self.params, clock)


class FixedCycleController(SignalController):

    def __init__(self, intersection_id: str, params: FixedCycleParams, offset: float = 0.0):
        super().__init__(intersection_id)
        self.params = params
        self.offset = offset
        phase, status = fixed_cycle_phase(params, offset, 0)
        self.state.current_phase, self.state.phase_status = phase, status

    def initial_events(self) -> List[SignalEvent]:
        kind = GREEN_START if self.state.phase_status == GREEN else TRANSITION_START
        return [SignalEvent(0, self.intersection_id, kind, self.state.current_phase)]

    def tick(self, clock: int, obs: Optional[PhaseObservation]) -> SignalDecision:
        return fixed_cycle_tick(self.state, self.params, self.offset, clock)


@dataclass(frozen=True)
class ControllerSpec:
    """Controller kind and parameters applied to every intersection"""
    kind: str
    params: object

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"Unknown controller kind {self.kind}")
        expected = FixedCycleParams if self.kind == FIXED_CYCLE else AuctionParams
        if not isinstance(self.params, expected):
            raise ValueError(f"{self.kind} requires {expected.__name__}")

    @classmethod
    def max_pressure(cls, t_min: int, t_auc: int, t_max: int = 120, t_trans: int = 3) -> 'ControllerSpec':
        return cls(MAX_PRESSURE, AuctionParams(tau=0.0, t_min=t_min, t_auc=t_auc, t_max=t_max, t_trans=t_trans))

    @classmethod
    def priority_pass(cls, tau: float, t_min: int, t_auc: int, t_max: int = 120,
                      t_trans: int = 3) -> 'ControllerSpec':
        return cls(PRIORITY_PASS, AuctionParams(tau=tau, t_min=t_min, t_auc=t_auc, t_max=t_max, t_trans=t_trans))

    @classmethod
    def fixed_cycle(cls, t_f1: int, t_f2: int, t_trans: int = 3) -> 'ControllerSpec':
        return cls(FIXED_CYCLE, FixedCycleParams(t_f1=t_f1, t_f2=t_f2, t_trans=t_trans))

    def as_dict(self) -> Dict:
        params = dict(self.params.__dict__)
        params.pop("phase_order", None)
        return {"controller": self.kind, **params}


def build_controllers(network: Network, spec: ControllerSpec) -> List[SignalController]:
    """One independent controller per intersection, in network order"""
    if spec.kind == FIXED_CYCLE:
        return [
            FixedCycleController(
                i.node_id, spec.params,
                offset=spec.params.chessboard_offset if i.is_black_cell else 0.0
            )
            for i in network.intersections
        ]
    params = spec.params
    if spec.kind == MAX_PRESSURE and params.tau != 0.0:
        params = AuctionParams(tau=0.0, t_min=params.t_min, t_auc=params.t_auc,
                               t_max=params.t_max, t_trans=params.t_trans)
    return [AuctionController(i.node_id, params) for i in network.intersections]
