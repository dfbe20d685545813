"""
Artifact Exports

Fixed-column CSV files and the run manifest written into every output
directory.
"""

from typing import Any, Dict, Optional, Sequence
import json
import logging
import math
import os

import pandas as pd

from config import ENGINE_VERSION
from exceptions import MissingDependencyError, OutputIOError

logger = logging.getLogger(__name__)

EFFICIENCY_COLUMNS = ["controller", "seed", "throughput", "completion_rate", "mean_queue", "mean_delay",
                      "total_travel_time", "mean_speed"]
DELAY_GROUP_COLUMNS = ["controller", "seed", "group", "count", "mean", "q10", "q25", "q50", "q75", "q90"]
FUNDAMENTAL_FIT_COLUMNS = ["controller", "seed", "curve", "c0", "c1", "c2", "c3", "c4", "peak_x", "peak_value"]
RELATIVE_COLUMNS = ["accumulation", "flow_change", "speed_change"]
CITY_HOURLY_COLUMNS = ["scenario", "hour", "flow", "recorded_flow", "gamma", "tau", "price", "benefit_per_user",
                       "trips", "buyers", "welfare", "revenue"]


def ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OutputIOError(f"Cannot create output directory {path}: {e}", error_code="IO_ERROR",
                            details={"path": path})
    return path


def write_csv(frame: pd.DataFrame, directory: str, name: str, columns: Optional[Sequence[str]] = None) -> str:
    """Write a table with a fixed column order"""
    path = os.path.join(directory, name)
    if columns is not None:
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise ValueError(f"{name} is missing columns {missing}")
        frame = frame[list(columns)]
    try:
        frame.to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise OutputIOError(f"Failed to write {path}: {e}", error_code="IO_ERROR", details={"path": path})
    logger.debug(f"Wrote {path} ({len(frame)} rows)")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        return _jsonable(value.item())
    return value


def write_json(payload: Dict[str, Any], directory: str, name: str) -> str:
    path = os.path.join(directory, name)
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OutputIOError(f"Failed to write {path}: {e}", error_code="IO_ERROR", details={"path": path})
    return path


def write_manifest(directory: str, command: str, config_text: str, config_sha256: str,
                   seeds: Sequence[int], dynamics: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> str:
    """Everything needed to re-run the experiment that produced a directory"""
    manifest = {
        "command": command,
        "config": json.loads(config_text),
        "config_sha256": config_sha256,
        "engine_version": ENGINE_VERSION,
        "seeds": list(seeds),
        "dynamics": dynamics,
    }
    if extra:
        manifest.update(extra)
    return write_json(manifest, directory, "manifest.json")


def require_artifact(path: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise MissingDependencyError(
            f"Required artifact {path} not found; run '{produced_by}' first",
            error_code="MISSING_DEPENDENCY", details={"artifact": path, "produced_by": produced_by}
        )
    return path
