"""
Artifact writers for the projection laboratory.

Outputs are plain files: trajectories as CSV with the fixed column contract
`n,norm,index,step_dist`, everything else as JSON with sorted keys and a
schema version. No timestamps, so identical inputs give identical bytes.
"""
import json
import math
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from loguru import logger

from app.config import settings
from app.errors import InvalidParameter
from app.lab.iterates import Trajectory

TRAJECTORY_COLUMNS = ["n", "norm", "index", "step_dist"]


def to_jsonable(obj: Any) -> Any:
    """Recursively turn numpy / dataclass-ish values into JSON-safe Python values."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": settings.SCHEMA_VERSION, **to_jsonable(payload)}
    path.write_text(json.dumps(body, sort_keys=True, indent=2, allow_nan=False) + "\n")
    logger.debug(f"wrote {path}")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def write_trajectory_csv(path: Path, trajectory: Trajectory) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = trajectory.to_frame()[TRAJECTORY_COLUMNS]
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="", lineterminator="\n")
    logger.debug(f"wrote {path} ({len(frame)} rows)")
    return path


def read_trajectory_csv(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"index": "Int64"})
    if list(frame.columns) != TRAJECTORY_COLUMNS:
        raise InvalidParameter(f"unexpected trajectory columns {list(frame.columns)}")
    return frame
