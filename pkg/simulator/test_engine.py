import pytest

from control import GREEN_START, ControllerSpec, SignalController, SignalDecision, build_controllers
from demand import DemandConfig, Vehicle, spawn_schedule
from engine import DynamicsParams, SimState, run_scenario, step
from metrics import group_delays
from netgrid import build_grid, shortest_route


def _fleet(network, count, spawn_time=0.5, origin="Bn00>J0000", destination="J0000>Bs00"):
    route = shortest_route(network, origin, destination)
    return [Vehicle(vehicle_id=i, route=route, spawn_time=spawn_time) for i in range(count)]


@pytest.mark.unit
class TestDynamics:
    """Link-queue dynamics on a single intersection"""

    def setup_method(self):
        self.network = build_grid(1, 1, 100.0, 2, 13.89)
        self.spec = ControllerSpec.max_pressure(t_min=5, t_auc=3)

    def test_link_capacity(self):
        """100 m, two lanes and 7.5 m per vehicle hold 26 vehicles"""
        state = SimState(self.network, [], DynamicsParams())
        assert state.links["Bn00>J0000"].capacity == 26

    def test_single_vehicle_close_to_free_flow(self):
        """A lone vehicle on a green approach only loses the step discretisation"""
        result = run_scenario(self.network, _fleet(self.network, 1), self.spec, warmup=0, record=120)
        trip = result.trips[0]
        assert trip.completed
        assert trip.depart_s == pytest.approx(0.5)
        assert 0.0 <= trip.delay_s < 3.0

    def test_full_entrance_keeps_virtual_queue(self):
        """Vehicles that cannot enter wait outside and depart on a later clock"""
        vehicles = _fleet(self.network, 60)
        state = SimState(self.network, vehicles, DynamicsParams())
        controllers = build_controllers(self.network, self.spec)
        step(state, controllers)
        assert state.links["Bn00>J0000"].occupancy == 26
        assert state.virtual == 34
        state.check_conservation()

    def test_blocked_vehicles_depart_late(self):
        """Blocked vehicles get an integer depart time after their spawn"""
        result = run_scenario(self.network, _fleet(self.network, 60), self.spec, warmup=0, record=900,
                              check_conservation=True)
        departs = sorted(t.depart_s for t in result.trips)
        assert departs[:26] == [0.5] * 26
        assert all(d > 0.5 and float(d).is_integer() for d in departs[26:])
        assert all(t.completed for t in result.trips)

    def test_caller_vehicles_untouched(self):
        """Runs work on copies of the vehicle list"""
        vehicles = _fleet(self.network, 3)
        run_scenario(self.network, vehicles, self.spec, warmup=0, record=120)
        assert all(v.depart_time is None and v.arrival_time is None for v in vehicles)

    def test_invalid_window(self):
        """Negative warmup or empty record windows are rejected"""
        with pytest.raises(ValueError):
            run_scenario(self.network, [], self.spec, warmup=-1, record=100)
        with pytest.raises(ValueError):
            run_scenario(self.network, [], self.spec, warmup=0, record=0)

    def test_only_unit_step(self):
        """The engine advances in 1 s steps"""
        with pytest.raises(ValueError):
            DynamicsParams(step=0.5)


@pytest.mark.integration
class TestRunScenario:
    """Full runs on the 3x3 grid"""

    def setup_method(self):
        self.network = build_grid(3, 3, 100.0, 2, 13.89)
        self.vehicles = spawn_schedule(DemandConfig(300, 0.3, 1500, seed=5), self.network)

    def test_conservation_every_step(self):
        """Spawned vehicles are always completed, on the network or waiting outside"""
        result = run_scenario(self.network, self.vehicles, ControllerSpec.fixed_cycle(10, 5),
                              warmup=300, record=1200, check_conservation=True)
        census = result.metadata["census"]
        assert census["spawned"] == census["completed"] + census["on_network"] + census["virtual_queue"]

    def test_deterministic(self):
        """Same inputs give identical trips and events"""
        spec = ControllerSpec.priority_pass(0.5, 10, 5)
        a = run_scenario(self.network, self.vehicles, spec, warmup=300, record=1200)
        b = run_scenario(self.network, self.vehicles, spec, warmup=300, record=1200)
        assert a.trips == b.trips
        assert a.events == b.events

    def test_zero_tau_matches_max_pressure(self):
        """Priority Pass with tau 0 reproduces Max-Pressure exactly"""
        pp = run_scenario(self.network, self.vehicles, ControllerSpec.priority_pass(0.0, 10, 5),
                          warmup=300, record=1200)
        mp = run_scenario(self.network, self.vehicles, ControllerSpec.max_pressure(10, 5),
                          warmup=300, record=1200)
        assert pp.trips == mp.trips
        assert pp.events == mp.events

    def test_window_and_stream(self):
        """Trips are the window's spawns and the stream starts at the window origin"""
        result = run_scenario(self.network, self.vehicles, ControllerSpec.max_pressure(10, 5),
                              warmup=300, record=1200, sample_interval=300)
        assert all(300 <= t.spawn_s < 1500 for t in result.trips)
        assert result.stream[0].clock == 300
        assert len(result.stream) == 1201
        snapshots = [s.clock for s in result.stream if s.cumulative_distance is not None]
        assert snapshots == [300, 600, 900, 1200, 1500]

    def test_initial_events(self):
        """Every auction intersection starts green on phase 0 at clock 0"""
        result = run_scenario(self.network, [], ControllerSpec.max_pressure(10, 5), warmup=0, record=60)
        initial = [e for e in result.events if e.clock == 0]
        assert len(initial) == 9
        assert all(e.event == GREEN_START and e.phase_id == 0 for e in initial)

    @pytest.mark.slow
    def test_entitled_vehicles_are_faster(self):
        """Under tau 1 entitled vehicles see less delay per km than the rest"""
        vehicles = spawn_schedule(DemandConfig(400, 0.2, 4200, seed=1), self.network)
        result = run_scenario(self.network, vehicles, ControllerSpec.priority_pass(1.0, 10, 5),
                              warmup=600, record=3600)
        delays = group_delays(result)
        assert delays["delta_pp"] < delays["delta_npp"]


class _HoldPhase(SignalController):
    """Keeps one phase green for the whole run"""

    def __init__(self, intersection_id, phase):
        super().__init__(intersection_id)
        self.phase = phase

    def initial_events(self):
        return []

    def tick(self, clock, obs):
        return SignalDecision(green_phase=self.phase)


def _southbound(network, spawn_times, first_id=0):
    route = shortest_route(network, "Bn00>J0000", "J0000>Bs00")
    return [Vehicle(vehicle_id=first_id + i, route=route, spawn_time=t) for i, t in enumerate(spawn_times)]


@pytest.mark.unit
class TestLinkQueueInvariants:
    """Discharge, arrival and ordering rules stepped one second at a time"""

    def setup_method(self):
        # Three lanes per direction give a two-lane through group, one vehicle per second at 2 s headway
        self.network = build_grid(1, 1, 100.0, 3, 13.89)
        self.entrance = "Bn00>J0000"
        self.through = self.network.movement_phase[(self.entrance, "J0000>Bs00")]

    def _state(self, vehicles, phase):
        return SimState(self.network, vehicles, DynamicsParams()), [_HoldPhase("J0000", phase)]

    def _run(self, state, controllers, steps):
        for _ in range(steps):
            step(state, controllers)
            state.check_conservation()

    def test_saturation_discharge(self):
        """A standing queue on green discharges ten vehicles in ten seconds"""
        state, controllers = self._state(_southbound(self.network, [0.5] * 30), self.through)
        self._run(state, controllers, 8)
        ls = state.links[self.entrance]
        assert ls.queued == 30
        self._run(state, controllers, 10)
        assert ls.queued == 20

    def test_no_discharge_on_red(self):
        """Nothing leaves an approach whose phase is not green"""
        red = (self.through + 2) % 4
        state, controllers = self._state(_southbound(self.network, [0.5] * 12), red)
        self._run(state, controllers, 60)
        assert state.links[self.entrance].queued == 12
        assert state.links["J0000>Bs00"].occupancy == 0
        assert state.completed == []

    def test_free_flow_arrival(self):
        """100 m at 13.89 m/s puts a vehicle entering at 0.5 s in the queue on clock 8"""
        state, controllers = self._state(_southbound(self.network, [0.5]), (self.through + 2) % 4)
        ls = state.links[self.entrance]
        self._run(state, controllers, 7)
        assert (len(ls.in_transit), ls.queued) == (1, 0)
        self._run(state, controllers, 1)
        assert (len(ls.in_transit), ls.queued) == (0, 1)

    def test_fifo(self):
        """Vehicles of one lane group leave in the order they arrived"""
        state, controllers = self._state(_southbound(self.network, [0.5 + 0.25 * k for k in range(25)]),
                                         self.through)
        self._run(state, controllers, 120)
        finished = [v.vehicle_id for v in state.completed]
        assert len(finished) == 25
        assert finished == sorted(finished)
        arrivals = [v.arrival_time for v in state.completed]
        assert arrivals == sorted(arrivals)

    def test_no_teleportation(self):
        """Nobody completes a route faster than free flow"""
        state, controllers = self._state(_southbound(self.network, [0.5] * 30), self.through)
        self._run(state, controllers, 120)
        assert len(state.completed) == 30
        for vehicle in state.completed:
            assert vehicle.arrival_time - vehicle.depart_time >= vehicle.route.free_flow_time - 1e-9

    def test_load_monotone_in_demand(self):
        """Doubling the arrivals never leaves fewer vehicles on the network"""
        base = [0.5 + 2.0 * k for k in range(15)]
        extra = [1.5 + 2.0 * k for k in range(15)]
        light, light_ctrl = self._state(_southbound(self.network, base), self.through)
        heavy, heavy_ctrl = self._state(
            _southbound(self.network, base) + _southbound(self.network, extra, first_id=100), self.through)
        for _ in range(150):
            step(light, light_ctrl)
            step(heavy, heavy_ctrl)
            assert heavy.on_network >= light.on_network
        assert len(heavy.completed) == 30

    def test_delays_non_negative(self):
        """Completed trips never report negative delay"""
        network = build_grid(3, 3, 100.0, 2, 13.89)
        vehicles = spawn_schedule(DemandConfig(400, 0.2, 900, seed=3), network)
        result = run_scenario(network, vehicles, ControllerSpec.max_pressure(10, 5), warmup=0, record=900)
        delays = [t.delay_s for t in result.trips if t.completed]
        assert delays
        assert min(delays) >= 0.0

    def test_dynamics_default_from_environment(self, mocker):
        """Runs without explicit dynamics take the configured defaults"""
        from_config = mocker.patch.object(DynamicsParams, "from_config", return_value=DynamicsParams())
        run_scenario(self.network, [], ControllerSpec.max_pressure(5, 3), warmup=0, record=10)
        from_config.assert_called_once()
        run_scenario(self.network, [], ControllerSpec.max_pressure(5, 3), warmup=0, record=10,
                     dynamics=DynamicsParams(saturation_headway=3.0))
        from_config.assert_called_once()
