import os
from enum import Enum
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent


class Commands(Enum):
    """Command-line subcommand names."""
    DECOMPOSE = "decompose"
    PLAN = "plan"
    PRETRAIN = "pretrain"
    DSEE = "dsee"
    SWEEP = "sweep"
    REPORT = "report"


class SupportMethod(str, Enum):
    """How the frozen support of the sparse update is chosen."""
    DECOMPOSE = "decompose"
    MAGNITUDE = "magnitude"
    RANDOM = "random"


class PruningMode(str, Enum):
    """Kind of sparsity imposed on the pretrained weights."""
    UNSTRUCTURED = "unstructured"
    STRUCTURED = "structured"


class TaskKind(str, Enum):
    """Synthetic task generators."""
    MAJORITY = "majority"
    KEYCOPY = "keycopy"


class Projection(str, Enum):
    """Attention projections that can host an update."""
    Q = "q"
    K = "k"
    V = "v"
    O = "o"


class TuningMode(str, Enum):
    """Which parameters receive gradients."""
    ADAPTER = "adapter"
    FULL = "full"


LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
DSEE_SEED = os.getenv("DSEE_SEED")

SCHEMA_DIR = BASE_DIR / "docs" / "schemas"

# Archive format
ARCHIVE_MAGIC = b"DSEE"
ARCHIVE_VERSION = 1
ARCHIVE_ALIGNMENT = 64
MAX_TENSOR_NAME_BYTES = 256

# Numerical defaults
ORTHO_TOLERANCE = 1e-10
SOLVER_TOL = 1e-6
SOLVER_MAX_ITER = 100
POWER_ITERS = 2
OVERSAMPLE = 5
V_INIT_STD = 0.02
HEAD_L1_LAMBDA = 1e-4
PRETRAIN_TARGET_ACCURACY = 0.95
PRETRAIN_MIN_ACCURACY = 0.60

FLOPS_CONVENTION = (
    "flops = 2 x multiply-accumulates; softmax 5 ops/element; layer-norm 5 ops/element; "
    "gelu 8 ops/element; bias and residual adds 1 op/element; embeddings excluded; "
    "unstructured masks not credited"
)


def resolve_seed(seed: int) -> int:
    """Return the DSEE_SEED override when set, otherwise the configured seed."""
    override = os.getenv("DSEE_SEED", DSEE_SEED)
    if override is None or override == "":
        return seed
    return int(override)


def validate_config(config_path: Optional[str] = None):
    """Validate that required configuration is present."""
    if LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ValueError(f"LOG_LEVEL must be a logging level name, got {LOG_LEVEL!r}")

    if DSEE_SEED not in (None, ""):
        try:
            seed = int(DSEE_SEED)
        except ValueError:
            raise ValueError(f"DSEE_SEED must be an integer, got {DSEE_SEED!r}")
        if seed < 0 or seed >= 2**64:
            raise ValueError("DSEE_SEED must be an unsigned 64-bit integer")

    if config_path is not None and not Path(config_path).exists():
        raise FileNotFoundError(
            f"Config file not found at {config_path}. "
            "Please pass an existing JSON pipeline config."
        )
