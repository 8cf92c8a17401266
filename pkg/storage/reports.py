"""JSON report files and gnuplot column output."""

import json
import logging
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

from core.exceptions import ConfigurationError
from storage.archive import atomic_write_bytes

logger = logging.getLogger(__name__)


def to_builtin(value: Any) -> Any:
    """Recursively replace numpy scalars and arrays with Python objects."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def dumps_report(data: Any) -> str:
    """Deterministic JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(to_builtin(data), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json_report(path: Union[str, Path], data: Any) -> None:
    """Atomically write a JSON report."""
    atomic_write_bytes(path, dumps_report(data).encode("utf-8"))
    logger.info(f"Wrote report {path}")


def read_json(path: Union[str, Path]) -> Any:
    """Load a JSON document.

    Raises:
        ConfigurationError: If the file is missing or not valid JSON.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid JSON in {path}: {str(e)}")
    except IOError as e:
        raise ConfigurationError(f"Failed to read {path}: {str(e)}")


def write_gnuplot(path: Union[str, Path], frame: pd.DataFrame) -> None:
    """Whitespace-separated columns under a '#'-prefixed header line."""
    body = frame.to_csv(sep=" ", index=False, header=False, float_format="%.17g", lineterminator="\n")
    header = "# " + " ".join(str(c) for c in frame.columns) + "\n"
    atomic_write_bytes(path, (header + body).encode("utf-8"))
    logger.info(f"Wrote gnuplot columns {path}")


def load_pipeline_config(path: Union[str, Path]):
    """Read and validate a PipelineConfig JSON file.

    Raises:
        ConfigurationError: If the file is unreadable or the config invalid.
    """
    from utils.models import PipelineConfig
    from utils.validators import validate_pipeline_config

    cfg = PipelineConfig.from_dict(read_json(path))
    validate_pipeline_config(cfg)
    return cfg
