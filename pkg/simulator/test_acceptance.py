"""
Long reproduction checks on the 3x3 case-study grid.

Deselect with -m "not slow".
"""

import pytest
import os

import numpy as np
import pandas as pd
from scipy import stats

from config import get_config
from control import FIXED_CYCLE, MAX_PRESSURE, PRIORITY_PASS, ControllerSpec
from demand import DemandConfig, spawn_schedule
from engine import run_scenario
from market import (
    MARKET, MARKET_REDISTRIBUTE, RESPONSE_COLUMNS, DelayResponse, MarketScenario, alignment_correlations,
    allocate, inverse_demand, load_wage_table, net_population_benefit, synth_population,
)
from metrics import events_frame, max_red_duration, polyfit4, polyval4, quartic_peak, trips_frame
from netgrid import build_grid, route_table
from optimize import CityParams, build_delay_response, extrapolate_city, run_fundamentals, select_priority_params
from scenario_config import load_config

WAGES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data",
                     "wages_nyc_synthetic.csv")
FLOWS = (100.0, 250.0, 450.0)
SEEDS = tuple(range(10))


def _network():
    return build_grid(3, 3, 100.0, 2, 13.89)


def _run(network, flow, seed, spec):
    vehicles = spawn_schedule(DemandConfig(flow, 0.2, 4200, seed=seed), network)
    return run_scenario(network, vehicles, spec, warmup=600, record=3600, seed=seed, check_conservation=True)


def _flat_response(delta_pp=30.0, delta_npp=70.0, delta_base=60.0):
    row = {"flow": 250.0, "gamma": 0.0, "tau": 0.8, "delta_avg": delta_base, "delta_pp": delta_pp,
           "delta_npp": delta_npp, "sd_pp": 1.0, "sd_npp": 1.0, "throughput": 1000.0, "mean_speed": 8.0,
           "mp_throughput": 1000.0, "mp_mean_speed": 8.0, "delta_base": delta_base}
    rows = [{**row, "gamma": g, "tau": t} for g in (0.0, 1.0) for t in (0.0, 1.0)]
    return DelayResponse(pd.DataFrame(rows, columns=RESPONSE_COLUMNS))


@pytest.mark.slow
@pytest.mark.acceptance
class TestSimulationGuarantees:
    """Exact properties over ten seeds and three demand levels"""

    def setup_method(self):
        self.network = _network()
        auction = get_config().auction
        self.t_max, self.t_trans = auction.t_max, auction.t_trans
        # Three phases red since clock 0 may hit t_max together and are served one after another
        self.startup_bound = self.t_max + self.t_trans + 2 * (10 + self.t_trans) + 1

    @pytest.mark.parametrize("flow", FLOWS)
    def test_zero_tau_reproduces_max_pressure(self, flow):
        """tau 0 gives identical signal and trip logs; no red outlasts the max-red bound"""
        for seed in SEEDS:
            pp = _run(self.network, flow, seed, ControllerSpec.priority_pass(0.0, 10, 5))
            mp = _run(self.network, flow, seed, ControllerSpec.max_pressure(10, 5))
            pd.testing.assert_frame_equal(events_frame(pp.events), events_frame(mp.events))
            pd.testing.assert_frame_equal(trips_frame(pp), trips_frame(mp))
            for result in (pp, mp):
                assert max_red_duration(result.events, include_initial=True) <= self.startup_bound
                if result.metadata["multi_violator_events"] == 0:
                    assert max_red_duration(result.events) <= self.t_max + self.t_trans + 1

    @pytest.mark.parametrize("flow", FLOWS)
    def test_priority_pass_max_red(self, flow):
        """Full priority still serves every phase within the bound"""
        for seed in SEEDS[:3]:
            result = _run(self.network, flow, seed, ControllerSpec.priority_pass(1.0, 10, 5))
            if result.metadata["multi_violator_events"] == 0:
                assert max_red_duration(result.events) <= self.t_max + self.t_trans + 1

    def test_deterministic(self):
        """Same seed, same bytes"""
        spec = ControllerSpec.priority_pass(0.8, 10, 5)
        first = _run(self.network, 250.0, 7, spec)
        second = _run(self.network, 250.0, 7, spec)
        assert trips_frame(first).to_csv(index=False) == trips_frame(second).to_csv(index=False)
        assert events_frame(first.events).to_csv(index=False) == events_frame(second.events).to_csv(index=False)
        census = first.metadata["census"]
        assert census["spawned"] == census["completed"] + census["on_network"] + census["virtual_queue"]


@pytest.mark.slow
@pytest.mark.acceptance
class TestWelfareMachinery:
    """Pricing, transfers and alignment on large synthetic populations"""

    def setup_method(self):
        self.market = MarketScenario(wages=load_wage_table(WAGES), p_urgency=0.5)
        network = _network()
        self.lengths = [r.length_km for routes in route_table(network).values() for r in routes]

    def test_inverse_demand_brute_force(self):
        """1000 random populations agree with exhaustive price enumeration"""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 101))
            prices = np.round(rng.uniform(0, 3, size=n), 2).tolist()
            gamma = float(rng.uniform(0, 1))
            k = int(np.floor(gamma * n + 0.5))
            if k == 0:
                assert inverse_demand(prices, gamma) == float("inf")
                continue
            oracle = max(c for c in prices if sum(1 for r in prices if r >= c) >= k)
            assert inverse_demand(prices, gamma) == oracle

    def test_redistribution_dominates_market(self):
        """Returning revenue to non-buyers never lowers the population's net benefit"""
        response = _flat_response()
        point = response.lookup(0.2, 0.8, 250.0)
        for seed in range(5):
            consumers = synth_population(self.market, self.lengths, seed)
            plain = allocate(consumers, MARKET, 0.2, response, 0.8, 250.0)
            shared = allocate(consumers, MARKET_REDISTRIBUTE, 0.2, response, 0.8, 250.0)
            assert sum(shared.transfers.values()) == pytest.approx(0.0, abs=1e-6)
            gap = net_population_benefit(consumers, shared, point) - net_population_benefit(consumers, plain, point)
            assert gap == pytest.approx(len(plain.buyers) * plain.price, rel=1e-9)
            assert gap >= 0.0

    def test_market_follows_urgency_more_than_income(self):
        """Entitlements correlate more with urgency than with wage"""
        response = _flat_response()
        for seed in range(5):
            consumers = synth_population(self.market, self.lengths, seed, size=10000)
            allocation = allocate(consumers, MARKET, 0.2, response, 0.8, 250.0)
            correlations = alignment_correlations(consumers, allocation)
            assert correlations["urgency"] > correlations["wage"]

    def test_city_identity(self):
        """16.03 $ per user and 5,958,060 daily trips give about 95.5 million $ a day"""
        hourly = pd.DataFrame({"hour": range(24), "gamma": 0.0, "price": 0.0, "benefit_per_user": 16.03})
        profile = pd.read_csv(os.path.join(os.path.dirname(WAGES), "daily_profile.csv"))
        summary, _ = extrapolate_city(hourly, profile, CityParams())
        assert summary["welfare_per_day"] == pytest.approx(95.51e6, rel=1e-3)
        assert summary["welfare_per_day"] == pytest.approx(95.53e6, rel=1e-3)


CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
GAMMAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
TAUS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@pytest.fixture(scope="module")
def priority_sweep():
    """Priority Pass over (gamma, tau) at 250 veh/h with its Max-Pressure reference, ten seeds"""
    loaded = load_config(os.path.join(CONFIGS, "fig3_optimization.json"))
    scenario = loaded.scenario(flow=250.0)
    response, raw = build_delay_response(scenario, [250.0], GAMMAS, TAUS, loaded.model.seeds, t_min=10, t_auc=5)
    return loaded, scenario, response, raw


@pytest.fixture(scope="module")
def ramp_samples():
    """Fundamental samples of all three controllers over the demand ramp, ten seeds"""
    loaded = load_config(os.path.join(CONFIGS, "fig4_efficiency.json"))
    controllers = loaded.model.controllers
    specs = {c.label: (c.kind, c.point()) for c in controllers}
    samples = run_fundamentals(loaded.scenario(), specs, loaded.model.seeds, 300, gamma=0.2)
    kinds = {c.kind: c.label for c in controllers}
    return samples, kinds


def _selection(loaded, scenario, response):
    consumers = synth_population(loaded.market_scenario(), _route_lengths(scenario), seed=0)
    mean_km = float(np.mean([c.route_length_km for c in consumers]))
    selection = select_priority_params(response, consumers, 250.0, scenario.network_inflow, mean_km,
                                       efficiency_budget=0.05, mode=MARKET)
    return consumers, selection


def _route_lengths(scenario):
    return [r.length_km for routes in route_table(scenario.network()).values() for r in routes]


@pytest.mark.slow
@pytest.mark.acceptance
class TestPriorityTrends:
    """Delay and welfare trends of the (gamma, tau) sweep"""

    def test_entitled_delay_falls_with_tau(self, priority_sweep):
        """Seed-mean entitled delay drops with tau and stays clearly below the rest from tau 0.4"""
        _, _, _, raw = priority_sweep
        rows = raw[(raw["controller"] == PRIORITY_PASS) & (raw["gamma"] == 0.2)]
        means = rows.groupby("tau")["delta_pp"].mean().reindex(TAUS)
        assert stats.spearmanr(TAUS, means.to_numpy()).correlation <= -0.8
        for tau in TAUS:
            if tau < 0.4:
                continue
            at = rows[rows["tau"] == tau]
            pooled_se = np.sqrt(at["delta_pp"].var(ddof=1) / len(at) + at["delta_npp"].var(ddof=1) / len(at))
            assert at["delta_npp"].mean() - at["delta_pp"].mean() >= pooled_se

    def test_selected_point_prioritizes(self, priority_sweep):
        """At the selected point entitled vehicles lose at least 20% less time per km than without priority"""
        loaded, scenario, response, _ = priority_sweep
        _, selection = _selection(loaded, scenario, response)
        point = response.lookup(selection.gamma, selection.tau, 250.0)
        assert point["delta_pp"] <= 0.8 * point["delta_base"]

    def test_selected_region(self, priority_sweep):
        """The selection lands near 20% entitled and strong priority with positive benefit"""
        loaded, scenario, response, _ = priority_sweep
        consumers, selection = _selection(loaded, scenario, response)
        assert 0.05 <= selection.gamma <= 0.45
        assert 0.5 <= selection.tau <= 1.0
        assert selection.c_r > 0
        assert selection.throughput_loss < selection.efficiency_budget
        assert selection.speed_loss < selection.efficiency_budget

        point = response.lookup(selection.gamma, selection.tau, 250.0)
        plain = allocate(consumers, MARKET, selection.gamma, response, selection.tau, 250.0)
        shared = allocate(consumers, MARKET_REDISTRIBUTE, selection.gamma, response, selection.tau, 250.0)
        assert net_population_benefit(consumers, shared, point) >= net_population_benefit(consumers, plain, point)


@pytest.mark.slow
@pytest.mark.acceptance
class TestFundamentalDiagrams:
    """Flow and speed against accumulation over the demand ramp"""

    def test_priority_keeps_efficiency(self, ramp_samples):
        """Pooled Priority Pass flow and speed fits stay within 5% of Max-Pressure's"""
        samples, labels = ramp_samples
        mp = samples[samples["controller"] == labels[MAX_PRESSURE]]
        pp = samples[samples["controller"] == labels[PRIORITY_PASS]]
        lo = max(mp["accumulation"].min(), pp["accumulation"].min())
        hi = min(mp["accumulation"].max(), pp["accumulation"].max())
        xs = np.unique(pp["accumulation"][(pp["accumulation"] >= lo) & (pp["accumulation"] <= hi)])
        for curve in ("flow", "speed"):
            reference = polyval4(polyfit4(list(zip(mp["accumulation"], mp[curve]))), xs)
            candidate = polyval4(polyfit4(list(zip(pp["accumulation"], pp[curve]))), xs)
            # Relative change is only meaningful away from an empty network
            meaningful = reference >= 0.1 * reference.max()
            change = np.abs(candidate[meaningful] - reference[meaningful]) / reference[meaningful]
            assert change.size > 0
            assert change.max() <= 0.05, curve

    def test_max_pressure_outflows_fixed_cycle(self, ramp_samples):
        """The fitted Max-Pressure flow peak beats the fixed cycle in at least nine of ten seeds"""
        samples, labels = ramp_samples
        wins = 0
        for seed in SEEDS:
            peaks = []
            for kind in (MAX_PRESSURE, FIXED_CYCLE):
                part = samples[(samples["controller"] == labels[kind]) & (samples["seed"] == seed)]
                coefficients = polyfit4(list(zip(part["accumulation"], part["flow"])))
                peaks.append(quartic_peak(coefficients, float(part["accumulation"].min()),
                                          float(part["accumulation"].max()))[1])
            wins += peaks[0] > peaks[1]
        assert wins >= 9
