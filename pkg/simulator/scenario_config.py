"""
Scenario Configuration

JSON experiment files validated with pydantic. Unknown keys are rejected and
every error names the offending section and its line in the file.
"""

from typing import Dict, List, Literal, Optional, Sequence, Tuple
import hashlib
import json
import logging
import os

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import get_config
from control import FIXED_CYCLE, MAX_PRESSURE, PRIORITY_PASS
from demand import FlowSchedule
from exceptions import ConfigInvalidError, OutputIOError
from market import ALLOCATION_MODES, MARKET, MarketScenario, load_wage_table
from optimize import CityParams, MarketSpec, Scenario, hourly_flows

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NetworkModel(StrictModel):
    rows: int = Field(3, ge=1)
    cols: int = Field(3, ge=1)
    link_length: float = Field(100.0, gt=0)
    lanes_per_dir: int = Field(2, ge=1)
    speed_limit: float = Field(13.89, gt=0)


class RampModel(StrictModel):
    start_flow: float = Field(50.0, gt=0)
    factor: float = Field(1.0863, gt=0)
    stage_s: float = Field(1000.0, gt=0)
    duration_s: float = Field(30000.0, gt=0)


class DemandModel(StrictModel):
    kind: Literal["fixed", "ramp", "profile"] = "fixed"
    flow: float = Field(250.0, ge=0)
    flows: Optional[List[float]] = None
    ramp: Optional[RampModel] = None
    profile: Optional[str] = None
    peak_flow: float = Field(450.0, gt=0)
    exclude_uturn: bool = True

    @model_validator(mode="after")
    def check_kind(self) -> 'DemandModel':
        if self.kind == "profile" and not self.profile:
            raise ValueError("profile demand needs a 'profile' file")
        return self


class SimulationModel(StrictModel):
    warmup: int = Field(600, ge=0)
    record: int = Field(3600, gt=0)
    sample_interval: int = Field(300, gt=0)


class DynamicsModel(StrictModel):
    saturation_headway: Optional[float] = Field(None, gt=0)
    effective_vehicle_length: Optional[float] = Field(None, gt=0)


class ControllerModel(StrictModel):
    name: Optional[str] = None
    kind: Literal["fixed_cycle", "max_pressure", "priority_pass"]
    t_f1: Optional[int] = Field(None, ge=1, le=40)
    t_f2: Optional[int] = Field(None, ge=1, le=40)
    t_min: Optional[int] = Field(None, ge=1)
    t_auc: Optional[int] = Field(None, ge=1)
    tau: Optional[float] = Field(None, ge=0, le=1)
    gamma: Optional[float] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def check_params(self) -> 'ControllerModel':
        required = {
            FIXED_CYCLE: ("t_f1", "t_f2"),
            MAX_PRESSURE: ("t_min", "t_auc"),
            PRIORITY_PASS: ("t_min", "t_auc", "tau", "gamma"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} controller needs {', '.join(missing)}")
        return self

    @property
    def label(self) -> str:
        return self.name or self.kind

    def point(self) -> Dict[str, float]:
        names = {
            FIXED_CYCLE: ("t_f1", "t_f2"),
            MAX_PRESSURE: ("t_min", "t_auc"),
            PRIORITY_PASS: ("t_min", "t_auc", "tau"),
        }[self.kind]
        return {name: getattr(self, name) for name in names}


class MarketModel(StrictModel):
    wage_table: str
    p_urgency: float = Field(0.5, gt=0, lt=1)
    minimum_wage: float = Field(15.0, ge=0)
    population_size: int = Field(10000, ge=1)
    mode: str = MARKET
    retention: float = Field(0.0, ge=0, le=1)
    seed: int = 0

    @model_validator(mode="after")
    def check_mode(self) -> 'MarketModel':
        if self.mode not in ALLOCATION_MODES:
            raise ValueError(f"mode must be one of {', '.join(ALLOCATION_MODES)}")
        return self


class SweepModel(StrictModel):
    kind: Literal["fixed_cycle", "max_pressure", "priority_pass"]
    grids: Dict[str, List[float]] = Field(default_factory=dict)
    bounds: Optional[Tuple[int, int]] = None
    objective: Literal["total_travel_time", "throughput", "queue", "delay",
                       "user_benefit", "system_benefit"] = "total_travel_time"
    t_min: Optional[int] = Field(None, ge=1)
    t_auc: Optional[int] = Field(None, ge=1)
    refine: bool = False


class OptimizeModel(StrictModel):
    response: str = "delay_response.csv"
    flow: float = Field(250.0, ge=0)
    efficiency_budget: float = Field(0.05, ge=0)
    nearest_flow: bool = False


class UrgencyScenarioModel(StrictModel):
    name: str
    p_urgency: float = Field(gt=0, lt=1)


class CityModel(StrictModel):
    intersections: int = Field(2862, ge=1)
    trips_per_day: float = Field(5958060.0, gt=0)
    mean_trip_km: float = Field(5.0, gt=0)
    retention: float = Field(1.0, ge=0, le=1)
    profile: str = "../data/daily_profile.csv"
    peak_flow: float = Field(450.0, gt=0)
    response: Optional[str] = None
    per_user_benefit: Optional[float] = None
    gamma: Optional[float] = Field(None, ge=0, le=1)
    price: Optional[float] = Field(None, ge=0)
    resimulate_hours: bool = False
    scenarios: List[UrgencyScenarioModel] = Field(default_factory=list)


class FundamentalModel(StrictModel):
    interval: int = Field(300, gt=0)
    gamma: float = Field(0.2, ge=0, le=1)


class ScenarioConfig(StrictModel):
    schema_version: int
    name: str = "scenario"
    network: NetworkModel
    demand: DemandModel = Field(default_factory=DemandModel)
    simulation: SimulationModel = Field(default_factory=SimulationModel)
    dynamics: DynamicsModel = Field(default_factory=DynamicsModel)
    controllers: List[ControllerModel] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    market: Optional[MarketModel] = None
    sweep: Optional[SweepModel] = None
    optimize: Optional[OptimizeModel] = None
    city: Optional[CityModel] = None
    fundamental: Optional[FundamentalModel] = None
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_version(self) -> 'ScenarioConfig':
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"schema_version {self.schema_version} is not supported (expected {SCHEMA_VERSION})")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self


class LoadedConfig:
    """A validated config plus the file it came from"""

    def __init__(self, model: ScenarioConfig, path: str, text: str):
        self.model = model
        self.path = os.path.abspath(path)
        self.text = text
        self.base_dir = os.path.dirname(self.path)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def resolve(self, reference: str) -> str:
        """Resolve a file reference relative to the config file"""
        if os.path.isabs(reference):
            return reference
        return os.path.normpath(os.path.join(self.base_dir, reference))

    def scenario(self, flow: Optional[float] = None) -> Scenario:
        m = self.model
        defaults = get_config()
        schedule = None
        if m.demand.kind == "ramp":
            ramp = m.demand.ramp or RampModel()
            schedule = FlowSchedule.ramp(ramp.start_flow, ramp.factor, ramp.stage_s, ramp.duration_s).pieces
        elif m.demand.kind == "profile":
            flows = hourly_flows(self.daily_profile(m.demand.profile), m.demand.peak_flow)
            schedule = FlowSchedule.hourly(flows["flow"].tolist()).pieces
        return Scenario(
            rows=m.network.rows, cols=m.network.cols, link_length=m.network.link_length,
            lanes_per_dir=m.network.lanes_per_dir, speed_limit=m.network.speed_limit,
            flow=float(flow if flow is not None else m.demand.flow), schedule=schedule,
            warmup=m.simulation.warmup, record=m.simulation.record,
            saturation_headway=m.dynamics.saturation_headway or defaults.dynamics.saturation_headway,
            effective_vehicle_length=m.dynamics.effective_vehicle_length or defaults.dynamics.effective_vehicle_length,
            exclude_uturn=m.demand.exclude_uturn, sample_interval=m.simulation.sample_interval,
            t_max=defaults.auction.t_max, t_trans=defaults.auction.t_trans,
        )

    def daily_profile(self, reference: str) -> pd.DataFrame:
        path = self.resolve(reference)
        try:
            profile = pd.read_csv(path)
        except (OSError, pd.errors.ParserError) as e:
            raise OutputIOError(f"Cannot read daily profile {path}: {e}", error_code="IO_ERROR",
                                details={"path": path})
        if not {"hour", "share"} <= set(profile.columns):
            raise ConfigInvalidError(f"{path}: daily profile needs columns hour, share",
                                     error_code="CONFIG_INVALID", details={"path": path})
        return profile

    def flows(self) -> List[float]:
        return list(self.model.demand.flows or [self.model.demand.flow])

    def market_scenario(self, p_urgency: Optional[float] = None) -> MarketScenario:
        if self.model.market is None:
            raise ConfigInvalidError("market: section required for this command", error_code="CONFIG_INVALID",
                                     details={"section": "market"})
        m = self.model.market
        try:
            return MarketScenario(wages=load_wage_table(self.resolve(m.wage_table)),
                                  p_urgency=p_urgency or m.p_urgency,
                                  minimum_wage=m.minimum_wage, population_size=m.population_size)
        except ValueError as e:
            raise ConfigInvalidError(f"market.wage_table: {e}", error_code="CONFIG_INVALID",
                                     details={"section": "market.wage_table"})

    def market_spec(self) -> Optional[MarketSpec]:
        if self.model.market is None:
            return None
        return MarketSpec.from_scenario(self.market_scenario())

    def city_params(self) -> CityParams:
        c = self.model.city or CityModel()
        return CityParams(intersections=c.intersections, trips_per_day=c.trips_per_day, mean_trip_km=c.mean_trip_km)

    def require(self, section: str):
        value = getattr(self.model, section)
        if value is None:
            raise ConfigInvalidError(f"{section}: section required for this command", error_code="CONFIG_INVALID",
                                     details={"section": section, "line": 1})
        return value


def _line_of(text: str, loc: Sequence) -> int:
    """1-based line of the deepest key of a location path present in the text"""
    offset = 0
    line_offset = 0
    for part in loc:
        if not isinstance(part, str):
            continue
        found = text.find(json.dumps(part), offset)
        if found < 0:
            break
        offset = found + 1
        line_offset = found
    return text.count("\n", 0, line_offset) + 1


def parse_config(text: str, path: str = "<string>") -> LoadedConfig:
    """Parse and validate a config document"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigInvalidError(
            f"{path}:{e.lineno}: invalid JSON ({e.msg})",
            error_code="CONFIG_INVALID", details={"line": e.lineno, "column": e.colno}
        )
    if not isinstance(raw, dict):
        raise ConfigInvalidError(f"{path}:1: top level must be an object", error_code="CONFIG_INVALID",
                                 details={"line": 1})
    try:
        model = ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [p for p in first["loc"] if p != "__root__"]
        section = ".".join(str(p) for p in loc) or "<root>"
        line = _line_of(text, loc)
        raise ConfigInvalidError(
            f"{path}:{line}: {section}: {first['msg']}",
            error_code="CONFIG_INVALID",
            details={"section": section, "line": line, "errors": len(e.errors())}
        )
    return LoadedConfig(model, path, text)


def load_config(path: str) -> LoadedConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise OutputIOError(f"Cannot read config {path}: {e}", error_code="IO_ERROR", details={"path": path})
    loaded = parse_config(text, path)
    logger.debug(f"Loaded config {path} ({loaded.sha256[:12]})")
    return loaded
