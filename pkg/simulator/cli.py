#!/usr/bin/env python3
"""
Priority Pass simulator command line.

    python simulator/cli.py simulate --config configs/baseline.json
    python simulator/cli.py network dump --config configs/baseline.json
"""

from typing import Dict, List, Optional, Sequence
import argparse
import json
import logging
import os
import sys
import time

import numpy as np
import pandas as pd

from config import get_config
from control import MAX_PRESSURE, PRIORITY_PASS
from demand import assign_entitlement, spawn_schedule
from engine import run_scenario
from exceptions import ConfigInvalidError, SimulatorBaseException, handle_simulator_exception
from exports import (
    CITY_HOURLY_COLUMNS, DELAY_GROUP_COLUMNS, EFFICIENCY_COLUMNS, FUNDAMENTAL_FIT_COLUMNS, RELATIVE_COLUMNS,
    ensure_dir, require_artifact, write_csv, write_json, write_manifest,
)
from logging_config import PerformanceLogger, setup_logging
from market import (
    ALLOCATION_MODES, DelayResponse, allocate, allocation_frame, alignment_correlations,
    consumers_for_vehicles, delay_breakdown, synth_population, welfare_summary,
)
from metrics import (
    EVENT_COLUMNS, FUNDAMENTAL_COLUMNS, SIGNAL_COLUMNS, TRIP_COLUMNS, delay_quantiles, events_frame,
    group_delays, polyfit4, polyval4, quartic_peak, signal_stats, signals_frame, trips_frame,
)
from netgrid import network_dump, route_table
from optimize import (
    UNIT_GRID, CityParams, SearchSpace, build_delay_response, city_hourly_table, controller_spec,
    extrapolate_city, grid_search, refine_grid, result_metrics, run_fundamentals, run_seeds,
    select_priority_params,
)
from run_cache import clear_result_cache
from scenario_config import LoadedConfig, load_config

logger = logging.getLogger(__name__)
perf_logger = PerformanceLogger()


def _output_dir(args, loaded: LoadedConfig) -> str:
    if args.out:
        return ensure_dir(args.out)
    if loaded.model.output_dir:
        return ensure_dir(loaded.resolve(loaded.model.output_dir))
    return ensure_dir(os.path.join(get_config().runner.output_dir, loaded.model.name))


def _seeds(args, loaded: LoadedConfig) -> List[int]:
    if args.seed_override:
        try:
            return [int(s) for s in args.seed_override.split(",") if s.strip()]
        except ValueError:
            raise ConfigInvalidError("--seed-override must be a comma-separated list of integers",
                                     error_code="CONFIG_INVALID", details={"value": args.seed_override})
    return list(loaded.model.seeds)


def _controllers(loaded: LoadedConfig):
    if not loaded.model.controllers:
        raise ConfigInvalidError("controllers: at least one controller is required for this command",
                                 error_code="CONFIG_INVALID", details={"section": "controllers", "line": 1})
    return loaded.model.controllers


def _auction_timing(loaded: LoadedConfig) -> Dict[str, int]:
    """t_min/t_auc from the sweep section or the first auction controller"""
    sweep = loaded.model.sweep
    if sweep and sweep.t_min and sweep.t_auc:
        return {"t_min": sweep.t_min, "t_auc": sweep.t_auc}
    for c in loaded.model.controllers:
        if c.kind in (MAX_PRESSURE, PRIORITY_PASS):
            return {"t_min": c.t_min, "t_auc": c.t_auc}
    raise ConfigInvalidError("sweep: t_min and t_auc are required (or an auction controller)",
                             error_code="CONFIG_INVALID", details={"section": "sweep"})


def _manifest(out: str, command: str, loaded: LoadedConfig, seeds: Sequence[int], extra: Optional[Dict] = None):
    scenario = loaded.scenario()
    write_manifest(out, command, loaded.text, loaded.sha256, seeds,
                   {"saturation_headway": scenario.saturation_headway,
                    "effective_vehicle_length": scenario.effective_vehicle_length, "step": 1.0,
                    "t_max": scenario.t_max, "t_trans": scenario.t_trans}, extra)


def cmd_simulate(args, loaded: LoadedConfig) -> int:
    out = _output_dir(args, loaded)
    seeds = _seeds(args, loaded)
    scenario = loaded.scenario()
    market = loaded.market_spec()
    efficiency, signals, summaries, groups = [], [], [], []
    for ctrl in _controllers(loaded):
        base = {"gamma": ctrl.gamma} if ctrl.kind == PRIORITY_PASS else {}
        results = run_seeds(scenario, ctrl.kind, ctrl.point(), seeds, base=base, market=market, jobs=args.jobs)
        for seed, result in zip(seeds, results):
            write_csv(trips_frame(result), out, f"trips_{ctrl.label}_seed{seed}.csv", TRIP_COLUMNS)
            write_csv(events_frame(result.events), out, f"events_{ctrl.label}_seed{seed}.csv", EVENT_COLUMNS)
            m = result_metrics(result)
            efficiency.append({"controller": ctrl.label, "seed": seed, **{k: m[k] for k in EFFICIENCY_COLUMNS[2:]}})
            stats = signal_stats(result.events, (scenario.warmup, scenario.warmup + scenario.record),
                                 len(scenario.network().intersections))
            signals.append(signals_frame(ctrl.label, stats))
            summaries.append({"controller": ctrl.label, "seed": seed,
                              "switches_per_intersection_hour": stats["switches_per_intersection_hour"],
                              "mean_green": stats["mean_green"], "mean_red": stats["mean_red"],
                              "multi_violator_events": result.metadata["multi_violator_events"]})
            if ctrl.kind == PRIORITY_PASS:
                q = delay_quantiles(result)
                q.insert(0, "seed", seed)
                q.insert(0, "controller", ctrl.label)
                groups.append(q)
    write_csv(pd.DataFrame(efficiency), out, "efficiency.csv", EFFICIENCY_COLUMNS)
    write_csv(pd.concat(signals, ignore_index=True), out, "signals.csv", SIGNAL_COLUMNS)
    write_csv(pd.DataFrame(summaries), out, "signal_summary.csv")
    if groups:
        write_csv(pd.concat(groups, ignore_index=True), out, "delay_groups.csv", DELAY_GROUP_COLUMNS)
    _manifest(out, "simulate", loaded, seeds)
    return 0


def cmd_sweep(args, loaded: LoadedConfig) -> int:
    out = _output_dir(args, loaded)
    seeds = _seeds(args, loaded)
    sweep = loaded.require("sweep")
    scenario = loaded.scenario()
    flows = loaded.flows()
    market = loaded.market_spec()

    if sweep.kind == PRIORITY_PASS:
        timing = _auction_timing(loaded)
        gammas = sorted(sweep.grids.get("gamma", UNIT_GRID))
        taus = sorted(sweep.grids.get("tau", UNIT_GRID))
        response, raw = build_delay_response(scenario, flows, gammas, taus, seeds, timing["t_min"],
                                             timing["t_auc"], jobs=args.jobs, market=market)
        if sweep.refine:
            point = response.table.assign(gap=response.table["delta_npp"] - response.table["delta_pp"])
            incumbent = point.sort_values(["gap", "gamma", "tau"], ascending=[False, True, True]).iloc[0]
            gammas = sorted(set(gammas) | set(refine_grid(float(incumbent["gamma"]))))
            taus = sorted(set(taus) | set(refine_grid(float(incumbent["tau"]))))
            response, raw = build_delay_response(scenario, flows, gammas, taus, seeds, timing["t_min"],
                                                 timing["t_auc"], jobs=args.jobs, market=market)
        response.to_csv(os.path.join(out, "delay_response.csv"))
        write_csv(raw, out, "sweep.csv")
    else:
        if sweep.grids:
            grids = sweep.grids
        else:
            lo, hi = sweep.bounds or (1, 40)
            names = ("t_f1", "t_f2") if sweep.kind == "fixed_cycle" else ("t_min", "t_auc")
            grids = {name: list(range(lo, hi + 1)) for name in names}
        space = SearchSpace(sweep.kind, grids, sweep.objective, seeds, flows)
        result = grid_search(space, scenario, jobs=args.jobs)
        write_csv(result.table, out, "sweep.csv")
        write_csv(result.summary, out, "sweep_summary.csv")
        write_json({"controller": sweep.kind, **result.best, "cache": result.stats}, out, "optimum.json")
    _manifest(out, "sweep", loaded, seeds)
    return 0


def _population(loaded: LoadedConfig, p_urgency: Optional[float] = None):
    scenario = loaded.scenario()
    lengths = [r.length_km for routes in route_table(scenario.network(), scenario.exclude_uturn).values()
               for r in routes]
    market = loaded.model.market
    return synth_population(loaded.market_scenario(p_urgency), lengths, market.seed)


def _response(loaded: LoadedConfig, reference: str) -> DelayResponse:
    return DelayResponse.read_csv(require_artifact(loaded.resolve(reference), "sweep"))


def cmd_optimize(args, loaded: LoadedConfig) -> int:
    out = _output_dir(args, loaded)
    opt = loaded.require("optimize")
    response = _response(loaded, opt.response)
    consumers = _population(loaded)
    market = loaded.model.market
    flow = response.resolve_flow(opt.flow, opt.nearest_flow)
    scenario = loaded.scenario(flow)
    mean_km = float(np.mean([c.route_length_km for c in consumers]))
    selection = select_priority_params(response, consumers, flow, scenario.network_inflow, mean_km,
                                       opt.efficiency_budget, market.mode, market.retention)
    write_csv(selection.candidates, out, "candidates.csv")
    write_json({**selection.as_dict(), "mode": market.mode, "retention": market.retention}, out, "optimum.json")
    logger.info(f"Selected gamma={selection.gamma} tau={selection.tau} C_r={selection.C_r:.2f} $/h")
    _manifest(out, "optimize", loaded, _seeds(args, loaded))
    return 0


def cmd_market(args, loaded: LoadedConfig) -> int:
    out = _output_dir(args, loaded)
    seeds = _seeds(args, loaded)
    market = loaded.require("market")
    opt = loaded.require("optimize")
    response = _response(loaded, opt.response)
    pp = next((c for c in _controllers(loaded) if c.kind == PRIORITY_PASS), None)
    if pp is None:
        raise ConfigInvalidError("controllers: a priority_pass controller is required for market",
                                 error_code="CONFIG_INVALID", details={"section": "controllers"})
    flow = response.resolve_flow(opt.flow, opt.nearest_flow)
    point = response.lookup(pp.gamma, pp.tau, flow)

    consumers = _population(loaded)
    welfare = []
    for mode in ALLOCATION_MODES:
        allocation = allocate(consumers, mode, pp.gamma, response, pp.tau, flow, market.retention)
        welfare.append({"mode": mode, **welfare_summary(consumers, allocation, point)})
        if mode == market.mode:
            write_csv(allocation_frame(consumers, allocation), out, "allocation.csv")
            write_json(alignment_correlations(consumers, allocation), out, "alignment.json")
    write_csv(pd.DataFrame(welfare), out, "welfare.csv")

    # Re-simulate with the market's buyers and compare against the unprioritised baseline
    scenario = loaded.scenario(flow)
    network = scenario.network()
    market_scenario = loaded.market_scenario()
    spec = controller_spec(PRIORITY_PASS, pp.point(), scenario)
    baseline_spec = controller_spec(MAX_PRESSURE, pp.point(), scenario)
    rows, breakdowns = [], []
    for seed in seeds:
        vehicles = spawn_schedule(scenario.demand(seed), network)
        riders = consumers_for_vehicles(vehicles, market_scenario, seed)
        allocation = allocate(riders, market.mode, pp.gamma, response, pp.tau, flow, market.retention)
        assign_entitlement(vehicles, allocation)
        prioritized = run_scenario(network, vehicles, spec, scenario.warmup, scenario.record, seed,
                                   scenario.dynamics(), scenario.sample_interval)
        baseline = run_scenario(network, vehicles, baseline_spec, scenario.warmup, scenario.record, seed,
                                scenario.dynamics(), scenario.sample_interval)
        after, before = group_delays(prioritized), group_delays(baseline)
        entitled = {t.vehicle_id for t in prioritized.trips if t.entitled}
        base_entitled = [t.delay_s / (t.route_length_m / 1000.0) for t in baseline.trips
                         if t.completed and t.vehicle_id in entitled]
        reference = float(np.mean(base_entitled)) if base_entitled else float("nan")
        rows.append({"seed": seed, "buyers": len(allocation.buyers), "price": allocation.price,
                     "delta_pp": after["delta_pp"], "delta_npp": after["delta_npp"],
                     "delta_pp_baseline": reference, "delta_base": before["delta_avg"],
                     "reduction": 1.0 - after["delta_pp"] / reference if reference else float("nan")})
        part = delay_breakdown(prioritized.trips, riders)
        part.insert(0, "seed", seed)
        breakdowns.append(part)
    write_csv(pd.DataFrame(rows), out, "prioritization.csv")
    write_csv(pd.concat(breakdowns, ignore_index=True), out, "delay_breakdown.csv")
    _manifest(out, "market", loaded, seeds, {"gamma": pp.gamma, "tau": pp.tau, "flow": flow})
    return 0


def cmd_city(args, loaded: LoadedConfig) -> int:
    out = _output_dir(args, loaded)
    city = loaded.require("city")
    params = loaded.city_params()
    profile = loaded.daily_profile(city.profile)
    summaries, tables = {}, []

    if city.per_user_benefit is not None:
        hourly = pd.DataFrame({"hour": range(24), "flow": 0.0, "recorded_flow": 0.0,
                               "gamma": city.gamma or 0.0, "tau": 0.0, "price": city.price or 0.0,
                               "benefit_per_user": city.per_user_benefit})
        summary, table = extrapolate_city(hourly, profile, params, city.retention)
        summaries["given"] = summary
        tables.append(table.assign(scenario="given"))
    else:
        if city.resimulate_hours:
            scenario = loaded.scenario()
            timing = _auction_timing(loaded)
            hours = (profile.sort_values("hour")["share"] / profile["share"].max() * city.peak_flow).round().unique()
            response, _ = build_delay_response(scenario, sorted(hours.tolist()), UNIT_GRID, UNIT_GRID,
                                               _seeds(args, loaded), timing["t_min"], timing["t_auc"], jobs=args.jobs)
        else:
            if city.response is None:
                raise ConfigInvalidError("city.response: a delay response is required without per_user_benefit",
                                         error_code="CONFIG_INVALID", details={"section": "city.response"})
            response = _response(loaded, city.response)
        market = loaded.require("market")
        scenarios = city.scenarios or []
        named = [(s.name, s.p_urgency) for s in scenarios] or [("default", market.p_urgency)]
        budget = loaded.model.optimize.efficiency_budget if loaded.model.optimize else 0.05
        for name, p in named:
            consumers = _population(loaded, p)
            hourly = city_hourly_table(response, consumers, profile, city.peak_flow, params, loaded.scenario(),
                                       budget, market.mode, market.retention)
            summary, table = extrapolate_city(hourly, profile, params, city.retention)
            summaries[name] = {**summary, "p_urgency": p}
            tables.append(table.assign(scenario=name))

    write_json(summaries, out, "city.json")
    write_csv(pd.concat(tables, ignore_index=True), out, "city_hourly.csv", CITY_HOURLY_COLUMNS)
    _manifest(out, "city", loaded, _seeds(args, loaded))
    return 0


def _relative_curves(fits: Dict[str, np.ndarray], lo: float, hi: float, points: int = 50) -> pd.DataFrame:
    xs = np.linspace(lo, hi, points)
    pp_flow, mp_flow = polyval4(fits[("pp", "flow")], xs), polyval4(fits[("mp", "flow")], xs)
    pp_speed, mp_speed = polyval4(fits[("pp", "speed")], xs), polyval4(fits[("mp", "speed")], xs)
    return pd.DataFrame({
        "accumulation": xs,
        "flow_change": (pp_flow - mp_flow) / np.where(mp_flow != 0, mp_flow, np.nan),
        "speed_change": (pp_speed - mp_speed) / np.where(mp_speed != 0, mp_speed, np.nan),
    })


def cmd_fundamental(args, loaded: LoadedConfig) -> int:
    out = _output_dir(args, loaded)
    seeds = _seeds(args, loaded)
    fundamental = loaded.model.fundamental
    interval = fundamental.interval if fundamental else 300
    gamma = fundamental.gamma if fundamental else 0.2
    scenario = loaded.scenario()
    specs = {c.label: (c.kind, c.point()) for c in _controllers(loaded)}
    samples = run_fundamentals(scenario, specs, seeds, interval, gamma=gamma, market=loaded.market_spec(),
                               jobs=args.jobs)
    write_csv(samples, out, "fundamentals.csv", ["controller"] + FUNDAMENTAL_COLUMNS)

    fits, pooled = [], {}
    kinds = {c.label: c.kind for c in _controllers(loaded)}
    for label in specs:
        frame = samples[samples["controller"] == label]
        for seed in seeds + ["all"]:
            part = frame if seed == "all" else frame[frame["seed"] == seed]
            for curve in ("flow", "speed"):
                coefficients = polyfit4(list(zip(part["accumulation"], part[curve])))
                x, value = quartic_peak(coefficients, float(part["accumulation"].min()),
                                        float(part["accumulation"].max()))
                fits.append({"controller": label, "seed": seed, "curve": curve,
                             **{f"c{i}": float(c) for i, c in enumerate(coefficients)},
                             "peak_x": x, "peak_value": value})
                if seed == "all" and kinds[label] in (MAX_PRESSURE, PRIORITY_PASS):
                    pooled[("mp" if kinds[label] == MAX_PRESSURE else "pp", curve)] = coefficients
    write_csv(pd.DataFrame(fits), out, "fundamental_fits.csv", FUNDAMENTAL_FIT_COLUMNS)
    if len(pooled) == 4:
        auction = samples[samples["controller"].map(kinds).isin([MAX_PRESSURE, PRIORITY_PASS])]
        relative = _relative_curves(pooled, float(auction["accumulation"].min()), float(auction["accumulation"].max()))
        write_csv(relative, out, "fundamental_relative.csv", RELATIVE_COLUMNS)
    _manifest(out, "fundamental", loaded, seeds, {"interval": interval})
    return 0


def cmd_network(args, loaded: LoadedConfig) -> int:
    dump = network_dump(loaded.scenario().network())
    if args.out:
        write_json(dump, ensure_dir(args.out), "network.json")
    else:
        json.dump(dump, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "optimize": cmd_optimize,
    "market": cmd_market,
    "city": cmd_city,
    "fundamental": cmd_fundamental,
    "network": cmd_network,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="priority-pass", description="Priority Pass grid traffic simulator")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, help="Scenario config (JSON)")
        sub.add_argument("--jobs", type=int, default=None, help="Parallel evaluations (default: physical cores)")
        sub.add_argument("--out", default=None, help="Output directory")
        sub.add_argument("--seed-override", default=None, help="Comma-separated seeds replacing the config's")
        sub.add_argument("--fresh", action="store_true", help="Drop cached evaluations before running")

    for name in ("simulate", "sweep", "optimize", "market", "city", "fundamental"):
        common(subparsers.add_parser(name))
    network = subparsers.add_parser("network")
    network.add_argument("action", choices=["dump"])
    common(network)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    start_time = time.time()
    try:
        loaded = load_config(args.config)
        if args.fresh:
            clear_result_cache()
        code = COMMANDS[args.command](args, loaded)
    except SimulatorBaseException as e:
        code, payload = handle_simulator_exception(e)
        logger.error(f"{args.command} failed: {e.message}")
        sys.stderr.write(json.dumps(payload, default=str) + "\n")
        return code
    perf_logger.log_stage(args.command, time.time() - start_time)
    return code


if __name__ == "__main__":
    sys.exit(main())
