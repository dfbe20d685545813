"""
Priority Pass Market

Consumer synthesis (wage x urgency), reservation prices from a simulated
delay response, inverse-demand pricing, allocation modes and welfare
accounting.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd

from exceptions import EmptySupportError, MissingResponseEntryError, OutputIOError

logger = logging.getLogger(__name__)

FREE_TOP_VOT = "free_top_vot"
MARKET = "market"
MARKET_REDISTRIBUTE = "market_redistribute"
ALLOCATION_MODES = (FREE_TOP_VOT, MARKET, MARKET_REDISTRIBUTE)

URGENCY_STREAM = 2000
WAGE_STREAM = 2001

WAGE_COLUMNS = ["wage_usd_per_h", "probability"]
ALLOCATION_COLUMNS = ["consumer_id", "vot", "reservation_price", "bought", "paid", "transfer"]
RESPONSE_COLUMNS = [
    "flow", "gamma", "tau", "delta_avg", "delta_pp", "delta_npp", "sd_pp", "sd_npp",
    "throughput", "mean_speed", "mp_throughput", "mp_mean_speed", "delta_base",
]
BREAKDOWN_COLUMNS = ["dimension", "bucket", "group", "count", "mean_delay_per_km"]


@dataclass(frozen=True)
class Consumer:
    consumer_id: int
    hourly_wage: float
    urgency_level: int
    route_length_km: float

    @property
    def vot(self) -> float:
        return self.urgency_level * self.hourly_wage


@dataclass
class MarketScenario:
    wages: pd.DataFrame
    p_urgency: float = 0.5
    minimum_wage: float = 15.0
    population_size: int = 10000

    def __post_init__(self):
        missing = set(WAGE_COLUMNS) - set(self.wages.columns)
        if missing:
            raise ValueError(f"Wage table lacks columns {sorted(missing)}")
        if not 0.0 < self.p_urgency < 1.0:
            raise ValueError(f"p_urgency must lie in (0, 1), got {self.p_urgency}")
        total = float(self.wages["probability"].sum())
        if not math.isclose(total, 1.0, abs_tol=1e-6):
            raise ValueError(f"Wage probabilities must sum to 1, got {total}")
        if (self.wages["probability"] < 0).any():
            raise ValueError("Wage probabilities must be non-negative")


def load_wage_table(path: str) -> pd.DataFrame:
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise OutputIOError(f"Failed to read wage table {path}: {e}", details={"path": path})
    missing = set(WAGE_COLUMNS) - set(table.columns)
    if missing:
        raise OutputIOError(f"Wage table {path} lacks columns {sorted(missing)}", details={"path": path})
    return table[WAGE_COLUMNS].astype(float)


def _eligible_wages(scenario: MarketScenario) -> Tuple[np.ndarray, np.ndarray]:
    table = scenario.wages
    eligible = table[(table["wage_usd_per_h"] >= scenario.minimum_wage) & (table["probability"] > 0)]
    if eligible.empty:
        raise EmptySupportError(
            f"No wage mass at or above the minimum wage {scenario.minimum_wage}",
            details={"minimum_wage": scenario.minimum_wage}
        )
    probabilities = eligible["probability"].to_numpy(dtype=float)
    return eligible["wage_usd_per_h"].to_numpy(dtype=float), probabilities / probabilities.sum()


def synth_population(scenario: MarketScenario, route_lengths_km: Sequence[float], seed: int,
                     size: Optional[int] = None) -> List[Consumer]:
    """Sample wages (above the minimum wage) and geometric urgency levels; routes uniformly"""
    wages, probabilities = _eligible_wages(scenario)
    n = scenario.population_size if size is None else size
    rng = np.random.default_rng(np.random.SeedSequence([seed, URGENCY_STREAM]))
    sampled_wages = rng.choice(wages, size=n, p=probabilities)
    levels = rng.geometric(scenario.p_urgency, size=n)
    lengths = np.asarray(route_lengths_km, dtype=float)
    picks = rng.integers(len(lengths), size=n)
    return [
        Consumer(consumer_id=i, hourly_wage=float(w), urgency_level=int(l), route_length_km=float(lengths[r]))
        for i, (w, l, r) in enumerate(zip(sampled_wages, levels, picks))
    ]


def consumers_for_vehicles(vehicles: Iterable, scenario: MarketScenario, seed: int) -> List[Consumer]:
    """One consumer per simulated vehicle, sharing its id and route length"""
    vehicles = list(vehicles)
    wages, probabilities = _eligible_wages(scenario)
    rng = np.random.default_rng(np.random.SeedSequence([seed, WAGE_STREAM]))
    sampled_wages = rng.choice(wages, size=len(vehicles), p=probabilities)
    levels = rng.geometric(scenario.p_urgency, size=len(vehicles))
    return [
        Consumer(consumer_id=v.vehicle_id, hourly_wage=float(w), urgency_level=int(l),
                 route_length_km=v.route.length_km)
        for v, w, l in zip(vehicles, sampled_wages, levels)
    ]


class DelayResponse:
    """Delay per km by (flow, gamma, tau) measured from sweeps"""

    def __init__(self, table: pd.DataFrame):
        missing = set(RESPONSE_COLUMNS) - set(table.columns)
        if missing:
            raise ValueError(f"Delay response lacks columns {sorted(missing)}")
        self.table = table[RESPONSE_COLUMNS].sort_values(["flow", "gamma", "tau"]).reset_index(drop=True)
        self._index = {
            (round(r.flow, 6), round(r.gamma, 6), round(r.tau, 6)): i
            for i, r in enumerate(self.table.itertuples(index=False))
        }

    @classmethod
    def read_csv(cls, path: str) -> 'DelayResponse':
        try:
            return cls(pd.read_csv(path))
        except (OSError, pd.errors.ParserError) as e:
            raise OutputIOError(f"Failed to read delay response {path}: {e}", details={"path": path})

    def to_csv(self, path: str) -> None:
        self.table.to_csv(path, index=False)

    @property
    def flows(self) -> List[float]:
        return sorted(self.table["flow"].unique().tolist())

    def grid(self, flow: float) -> Tuple[List[float], List[float]]:
        rows = self.table[np.isclose(self.table["flow"], flow)]
        return sorted(rows["gamma"].unique().tolist()), sorted(rows["tau"].unique().tolist())

    def resolve_flow(self, flow: Optional[float], nearest_flow: bool = False) -> float:
        flows = self.flows
        if flow is None:
            if len(flows) != 1:
                raise MissingResponseEntryError("Flow must be given for a multi-flow response",
                                                details={"flows": flows})
            return flows[0]
        if nearest_flow:
            return min(flows, key=lambda f: (abs(f - flow), f))
        for f in flows:
            if math.isclose(f, flow):
                return f
        raise MissingResponseEntryError(f"No response recorded at flow {flow}", details={"flows": flows})

    def _row(self, flow: float, gamma: float, tau: float) -> pd.Series:
        key = (round(flow, 6), round(gamma, 6), round(tau, 6))
        if key not in self._index:
            raise MissingResponseEntryError(
                f"No response entry at flow={flow} gamma={gamma} tau={tau}",
                details={"flow": flow, "gamma": gamma, "tau": tau}
            )
        return self.table.iloc[self._index[key]]

    def lookup(self, gamma: float, tau: float, flow: Optional[float] = None,
               nearest_flow: bool = False) -> Dict[str, float]:
        """Bilinear interpolation on (gamma, tau) at a recorded flow"""
        flow = self.resolve_flow(flow, nearest_flow)
        gammas, taus = self.grid(flow)

        def bracket(values: List[float], x: float, name: str) -> Tuple[float, float]:
            if x < values[0] - 1e-9 or x > values[-1] + 1e-9:
                raise MissingResponseEntryError(f"{name}={x} outside the recorded grid",
                                                details={name: x, "range": [values[0], values[-1]]})
            for v in values:
                if math.isclose(v, x, abs_tol=1e-9):
                    return v, v
            hi = next(v for v in values if v > x)
            lo = max(v for v in values if v < x)
            return lo, hi

        g0, g1 = bracket(gammas, gamma, "gamma")
        t0, t1 = bracket(taus, tau, "tau")
        wg = 0.0 if g1 == g0 else (gamma - g0) / (g1 - g0)
        wt = 0.0 if t1 == t0 else (tau - t0) / (t1 - t0)
        corners = [
            ((1 - wg) * (1 - wt), self._row(flow, g0, t0)),
            ((1 - wg) * wt, self._row(flow, g0, t1)),
            (wg * (1 - wt), self._row(flow, g1, t0)),
            (wg * wt, self._row(flow, g1, t1)),
        ]
        values = {}
        for column in RESPONSE_COLUMNS[3:]:
            values[column] = float(sum(w * row[column] for w, row in corners if w > 0.0))
        values.update({"flow": flow, "gamma": gamma, "tau": tau})
        return values


@dataclass
class EntitlementAllocation:
    mode: str
    price: float
    buyers: FrozenSet[int]
    transfers: Dict[int, float]
    municipal_revenue: float = 0.0
    reservation_prices: Dict[int, float] = field(default_factory=dict)
    vots: Dict[int, float] = field(default_factory=dict)
    gamma_target: float = 0.0

    @property
    def gamma_realized(self) -> float:
        return len(self.buyers) / len(self.transfers) if self.transfers else 0.0

    @property
    def payments(self) -> float:
        if self.mode == FREE_TOP_VOT:
            return 0.0
        return len(self.buyers) * self.price


def reservation_price(consumer: Consumer, response: DelayResponse, gamma: float, tau: float,
                      flow: Optional[float] = None, nearest_flow: bool = False) -> float:
    """Money value of the delay saved by buying rather than not buying"""
    point = response.lookup(gamma, tau, flow, nearest_flow)
    return _reservation_price(consumer, point)


def _reservation_price(consumer: Consumer, point: Mapping[str, float]) -> float:
    return (point["delta_npp"] - point["delta_pp"]) / 3600.0 * consumer.vot * consumer.route_length_km


def _target_count(n: int, gamma_target: float) -> int:
    # round half up
    return int(math.floor(gamma_target * n + 0.5))


def inverse_demand(reservation_prices: Sequence[float], gamma_target: float) -> float:
    """Price at which the round(gamma*n) highest reservation prices buy"""
    if not 0.0 <= gamma_target <= 1.0:
        raise ValueError(f"gamma_target must lie in [0, 1], got {gamma_target}")
    prices = sorted(reservation_prices, reverse=True)
    if not prices:
        raise ValueError("inverse_demand needs at least one consumer")
    k = _target_count(len(prices), gamma_target)
    if k == 0:
        return math.inf
    return prices[k - 1]


def buyers_at(reservation_prices: Mapping[int, float], price: float) -> FrozenSet[int]:
    return frozenset(cid for cid, rp in reservation_prices.items() if rp >= price)


def user_benefit_cr(delta_avg: float, delta_pp: float, delta_npp: float, gamma: float,
                    u_pp: float, u_npp: float) -> float:
    """Average per-user benefit in $/km"""
    return (gamma * (delta_avg - delta_pp) * u_pp + (1.0 - gamma) * (delta_avg - delta_npp) * u_npp) / 3600.0


def system_benefit_Cr(c_r: float, flow: float, mean_trip_km: float) -> float:
    """System benefit in $/h"""
    return c_r * flow * mean_trip_km


def allocate(consumers: Sequence[Consumer], mode: str, gamma_target: float,
             response: Optional[DelayResponse] = None, tau: Optional[float] = None,
             flow: Optional[float] = None, retention: float = 0.0,
             nearest_flow: bool = False) -> EntitlementAllocation:
    """Hand out entitlements by VOT (free) or sell them at the inverse-demand price"""
    if mode not in ALLOCATION_MODES:
        raise ValueError(f"Unknown allocation mode {mode}")
    if not 0.0 <= retention <= 1.0:
        raise ValueError(f"retention must lie in [0, 1], got {retention}")
    vots = {c.consumer_id: c.vot for c in consumers}

    if mode == FREE_TOP_VOT:
        k = math.ceil(gamma_target * len(consumers) - 1e-9)
        ranked = sorted(consumers, key=lambda c: (-c.vot, c.consumer_id))
        buyers = frozenset(c.consumer_id for c in ranked[:k])
        return EntitlementAllocation(
            mode=mode, price=0.0, buyers=buyers, transfers={c.consumer_id: 0.0 for c in consumers},
            vots=vots, gamma_target=gamma_target,
        )

    if response is None or tau is None:
        raise ValueError(f"{mode} allocation needs a delay response and tau")
    point = response.lookup(gamma_target, tau, flow, nearest_flow)
    prices = {c.consumer_id: _reservation_price(c, point) for c in consumers}
    price = inverse_demand(list(prices.values()), gamma_target)
    buyers = buyers_at(prices, price)
    revenue = len(buyers) * price if buyers else 0.0

    transfers = {cid: (-price if cid in buyers else 0.0) for cid in prices}
    municipal = revenue
    non_buyers = [cid for cid in prices if cid not in buyers]
    if mode == MARKET_REDISTRIBUTE and non_buyers and revenue > 0:
        share = (1.0 - retention) * revenue / len(non_buyers)
        for cid in non_buyers:
            transfers[cid] = share
        municipal = retention * revenue
    if len(buyers) != _target_count(len(consumers), gamma_target):
        logger.debug(f"Ties at price {price:.4f}: {len(buyers)} buyers for target {gamma_target}")
    return EntitlementAllocation(
        mode=mode, price=price, buyers=buyers, transfers=transfers, municipal_revenue=municipal,
        reservation_prices=prices, vots=vots, gamma_target=gamma_target,
    )


def group_urgencies(consumers: Sequence[Consumer], allocation: EntitlementAllocation) -> Tuple[float, float]:
    """Mean VOT of buyers and of non-buyers"""
    pp = [c.vot for c in consumers if c.consumer_id in allocation.buyers]
    npp = [c.vot for c in consumers if c.consumer_id not in allocation.buyers]
    return (float(np.mean(pp)) if pp else 0.0, float(np.mean(npp)) if npp else 0.0)


def net_population_benefit(consumers: Sequence[Consumer], allocation: EntitlementAllocation,
                           point: Mapping[str, float]) -> float:
    """Sum of individual time savings against the baseline plus monetary transfers, in $"""
    total = 0.0
    for c in consumers:
        delta = point["delta_pp"] if c.consumer_id in allocation.buyers else point["delta_npp"]
        total += c.vot * (point["delta_base"] - delta) / 3600.0 * c.route_length_km
        total += allocation.transfers.get(c.consumer_id, 0.0)
    return total


def leaked_revenue(allocation: EntitlementAllocation) -> float:
    """Payments that leave the user population"""
    if allocation.mode == FREE_TOP_VOT:
        return 0.0
    return allocation.municipal_revenue


def mode_adjusted_cr(c_r: float, consumers: Sequence[Consumer], allocation: EntitlementAllocation) -> float:
    total_km = sum(c.route_length_km for c in consumers)
    if total_km <= 0:
        return c_r
    return c_r - leaked_revenue(allocation) / total_km


def welfare_summary(consumers: Sequence[Consumer], allocation: EntitlementAllocation,
                    point: Mapping[str, float]) -> Dict[str, float]:
    """Per-user benefit with measured group urgencies and population totals of one allocation"""
    gamma = allocation.gamma_realized
    u_pp, u_npp = group_urgencies(consumers, allocation)
    c_r = user_benefit_cr(point["delta_base"], point["delta_pp"], point["delta_npp"], gamma, u_pp, u_npp)
    return {
        "gamma": gamma,
        "price": allocation.price if allocation.buyers else 0.0,
        "buyers": len(allocation.buyers),
        "u_pp": u_pp,
        "u_npp": u_npp,
        "c_r": c_r,
        "c_r_adjusted": mode_adjusted_cr(c_r, consumers, allocation),
        "net_benefit": net_population_benefit(consumers, allocation, point),
        "municipal_revenue": allocation.municipal_revenue,
    }


def alignment_correlations(consumers: Sequence[Consumer], allocation: EntitlementAllocation) -> Dict[str, float]:
    """Spearman correlation of entitlement with urgency level and with wage"""
    frame = pd.DataFrame({
        "bought": [float(c.consumer_id in allocation.buyers) for c in consumers],
        "urgency": [c.urgency_level for c in consumers],
        "wage": [c.hourly_wage for c in consumers],
    })
    ranks = frame.rank(method="average")
    corr = ranks.corr(method="pearson")
    return {"urgency": float(corr.loc["bought", "urgency"]), "wage": float(corr.loc["bought", "wage"])}


def allocation_frame(consumers: Sequence[Consumer], allocation: EntitlementAllocation) -> pd.DataFrame:
    rows = []
    for c in consumers:
        bought = c.consumer_id in allocation.buyers
        transfer = allocation.transfers.get(c.consumer_id, 0.0)
        rows.append({
            "consumer_id": c.consumer_id,
            "vot": c.vot,
            "reservation_price": allocation.reservation_prices.get(c.consumer_id, float("nan")),
            "bought": bought,
            "paid": -transfer if bought else 0.0,
            "transfer": transfer,
        })
    return pd.DataFrame(rows, columns=ALLOCATION_COLUMNS)


def _wage_band(wage: float) -> str:
    lower = int(wage // 10) * 10
    return f"{lower}-{lower + 10}"


def delay_breakdown(trips: Iterable, consumers: Sequence[Consumer]) -> pd.DataFrame:
    """Mean delay per km by urgency level, wage band and route length, split by entitlement"""
    by_id = {c.consumer_id: c for c in consumers}
    rows = []
    for t in trips:
        if t.arrive_s is None or t.vehicle_id not in by_id:
            continue
        c = by_id[t.vehicle_id]
        rows.append({
            "urgency": str(c.urgency_level),
            "wage": _wage_band(c.hourly_wage),
            "route_length": f"{t.route_length_m / 1000.0:.1f}",
            "group": "entitled" if t.entitled else "not_entitled",
            "delay_per_km": t.delay_s / (t.route_length_m / 1000.0),
        })
    if not rows:
        return pd.DataFrame(columns=BREAKDOWN_COLUMNS)
    frame = pd.DataFrame(rows)
    parts = []
    for dimension in ("urgency", "wage", "route_length"):
        grouped = frame.groupby([dimension, "group"], sort=True)["delay_per_km"].agg(["count", "mean"]).reset_index()
        grouped.columns = ["bucket", "group", "count", "mean_delay_per_km"]
        grouped.insert(0, "dimension", dimension)
        parts.append(grouped)
    return pd.concat(parts, ignore_index=True)[BREAKDOWN_COLUMNS]
