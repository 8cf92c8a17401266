"""Data models and dataclasses for configs and reports."""

from dataclasses import dataclass, asdict, field, fields
from typing import Optional, Any, Dict, List, Tuple

import pandas as pd

from config import (
    SupportMethod,
    PruningMode,
    TaskKind,
    Projection,
    HEAD_L1_LAMBDA,
    V_INIT_STD,
    SOLVER_TOL,
    SOLVER_MAX_ITER,
    POWER_ITERS,
    PRETRAIN_TARGET_ACCURACY,
    PRETRAIN_MIN_ACCURACY,
)
from core.exceptions import ConfigurationError, ParameterError


def _from_mapping(cls, data: Dict[str, Any]):
    """Build a flat dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"{cls.__name__} expects an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys for {cls.__name__}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid {cls.__name__}: {str(e)}")


@dataclass
class ToyTransformerConfig:
    """Shape of the toy encoder."""
    vocab_size: int = 16
    seq_len: int = 6
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    n_layers: int = 2
    n_classes: int = 4

    def __post_init__(self):
        for name in ("vocab_size", "seq_len", "d_model", "n_heads", "d_ff", "n_layers", "n_classes"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ToyTransformerConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class AdapterConfig:
    """Sparsity-embedded low-rank update settings."""
    rank: int = 4
    n_keep: int = 8
    method: str = SupportMethod.DECOMPOSE.value
    targets: List[str] = field(default_factory=lambda: [p.value for p in Projection])
    decomposition_rank: Optional[int] = None
    decomposition_card: Optional[int] = None
    init_std: float = V_INIT_STD
    solver_tol: float = SOLVER_TOL
    solver_max_iter: int = SOLVER_MAX_ITER
    power_iters: int = POWER_ITERS

    def __post_init__(self):
        try:
            self.method = SupportMethod(self.method).value
            self.targets = [Projection(t).value for t in self.targets]
        except ValueError as e:
            raise ConfigurationError(str(e))

    @property
    def solver_rank(self) -> int:
        return self.rank if self.decomposition_rank is None else self.decomposition_rank

    @property
    def solver_card(self) -> int:
        return self.n_keep if self.decomposition_card is None else self.decomposition_card

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AdapterConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class PruningConfig:
    """Stage II settings.

    For unstructured mode `sparsity` is the masked fraction of the target matrices;
    for structured mode it is the fraction of heads removed per layer.
    """
    mode: str = PruningMode.UNSTRUCTURED.value
    sparsity: float = 0.5
    ffn_ratio: float = 0.0
    lambda_l1: float = HEAD_L1_LAMBDA
    mask_includes_sparse: bool = True
    mask_ffn: bool = False

    def __post_init__(self):
        try:
            self.mode = PruningMode(self.mode).value
        except ValueError as e:
            raise ConfigurationError(str(e))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PruningConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class OptimizerConfig:
    """AdamW hyper-parameters and stage schedule."""
    lr_stage1: float = 1e-2
    lr_stage3: float = 5e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs_stage1: int = 3
    epochs_stage3: int = 3
    batch_size: int = 32
    linear_decay: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimizerConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class PretrainConfig:
    """Dense pretraining of the host model on the source task."""
    lr: float = 3e-3
    max_epochs: int = 30
    weight_decay: float = 0.01
    batch_size: int = 32
    target_accuracy: float = PRETRAIN_TARGET_ACCURACY
    min_accuracy: float = PRETRAIN_MIN_ACCURACY

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PretrainConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class TaskConfig:
    """Synthetic source and target tasks."""
    kind: str = TaskKind.KEYCOPY.value
    n_train: int = 3072
    n_eval: int = 512
    key_position: int = 0
    pretrain_task_seed: int = 11
    finetune_task_seed: int = 23

    def __post_init__(self):
        try:
            self.kind = TaskKind(self.kind).value
        except ValueError as e:
            raise ConfigurationError(str(e))

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class SeedConfig:
    """Seeds for every random stream of a run."""
    model: int = 0
    adapter: int = 1
    shuffle: int = 2

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SeedConfig":
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass
class PipelineConfig:
    """Complete configuration of a DSEE run."""
    model: ToyTransformerConfig = field(default_factory=ToyTransformerConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    pruning: PruningConfig = field(default_factory=PruningConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    count_head_params: bool = False

    _SECTIONS = {
        "model": ToyTransformerConfig,
        "adapter": AdapterConfig,
        "pruning": PruningConfig,
        "optimizer": OptimizerConfig,
        "pretrain": PretrainConfig,
        "task": TaskConfig,
        "seeds": SeedConfig,
    }

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        data: Dict[str, Any] = {name: getattr(self, name).to_dict() for name in self._SECTIONS}
        data["count_head_params"] = self.count_head_params
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        """Create from dictionary."""
        if not isinstance(data, dict):
            raise ConfigurationError("Pipeline config must be a JSON object")
        unknown = sorted(set(data) - set(cls._SECTIONS) - {"count_head_params"})
        if unknown:
            raise ConfigurationError(f"Unknown keys for PipelineConfig: {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {}
        for name, section_cls in cls._SECTIONS.items():
            if name in data:
                try:
                    kwargs[name] = section_cls.from_dict(data[name])
                except ParameterError as e:
                    raise ConfigurationError(f"Invalid {name} section: {str(e)}")
        if "count_head_params" in data:
            kwargs["count_head_params"] = bool(data["count_head_params"])
        return cls(**kwargs)


@dataclass
class StageReport:
    """Outcome of one pipeline stage."""
    stage: str
    losses: List[float] = field(default_factory=list)
    eval_accuracy: float = 0.0
    steps: int = 0
    trainable_params: int = 0
    pretrained_sparsity: float = 0.0
    heads_per_layer: List[int] = field(default_factory=list)
    notes: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "stage": self.stage,
            "losses": [float(x) for x in self.losses],
            "eval_accuracy": float(self.eval_accuracy),
            "steps": int(self.steps),
            "trainable_params": int(self.trainable_params),
            "pretrained_sparsity": float(self.pretrained_sparsity),
            "heads_per_layer": [int(h) for h in self.heads_per_layer],
            "notes": dict(self.notes),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StageReport":
        """Create from dictionary."""
        return cls(
            stage=data["stage"],
            losses=list(data.get("losses", [])),
            eval_accuracy=data.get("eval_accuracy", 0.0),
            steps=data.get("steps", 0),
            trainable_params=data.get("trainable_params", 0),
            pretrained_sparsity=data.get("pretrained_sparsity", 0.0),
            heads_per_layer=list(data.get("heads_per_layer", [])),
            notes=dict(data.get("notes", {})),
        )


@dataclass
class SiteBudget:
    """Per-site row of a budget report."""
    name: str
    m: int
    n: int
    r: int
    card: int
    masked_fraction: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "name": self.name,
            "m": int(self.m),
            "n": int(self.n),
            "r": int(self.r),
            "card": int(self.card),
            "masked_fraction": float(self.masked_fraction),
        }


@dataclass
class BudgetReport:
    """Parameter, sparsity and FLOPs accounting record."""
    trainable_params: int
    total_params: int
    pretrained_sparsity: float
    nonzero_weights: int
    flops_dense: int
    flops_current: int
    flops_convention: str
    extra_params: int = 0
    sites: List[SiteBudget] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "trainable_params": int(self.trainable_params),
            "total_params": int(self.total_params),
            "pretrained_sparsity": float(self.pretrained_sparsity),
            "nonzero_weights": int(self.nonzero_weights),
            "flops_dense": int(self.flops_dense),
            "flops_current": int(self.flops_current),
            "flops_convention": self.flops_convention,
            "extra_params": int(self.extra_params),
            "sites": [site.to_dict() for site in self.sites],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BudgetReport":
        """Create from dictionary."""
        return cls(
            trainable_params=data["trainable_params"],
            total_params=data["total_params"],
            pretrained_sparsity=data["pretrained_sparsity"],
            nonzero_weights=data["nonzero_weights"],
            flops_dense=data["flops_dense"],
            flops_current=data["flops_current"],
            flops_convention=data["flops_convention"],
            extra_params=data.get("extra_params", 0),
            sites=[SiteBudget(**site) for site in data.get("sites", [])],
        )

    def to_frame(self) -> pd.DataFrame:
        """Per-site breakdown as a table."""
        return pd.DataFrame(
            [site.to_dict() for site in self.sites],
            columns=["name", "m", "n", "r", "card", "masked_fraction"],
        )


@dataclass
class Histogram:
    """Histogram of weight changes."""
    edges: List[float]
    counts: List[int]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Histogram":
        """Create from dictionary."""
        return cls(edges=list(data["edges"]), counts=list(data["counts"]))

    def to_frame(self) -> pd.DataFrame:
        """One row per bin: left edge, right edge, centre, count."""
        left = self.edges[:-1]
        right = self.edges[1:]
        return pd.DataFrame({
            "left": left,
            "right": right,
            "center": [(a + b) / 2.0 for a, b in zip(left, right)],
            "count": self.counts,
        })


@dataclass
class SweepPoint:
    """One sparsity level of the DSEE versus magnitude-pruning sweep."""
    sparsity: float
    dsee_accuracy: float
    baseline_accuracy: float
    dsee_trainable: int
    baseline_trainable: int

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "sparsity": float(self.sparsity),
            "dsee_accuracy": float(self.dsee_accuracy),
            "baseline_accuracy": float(self.baseline_accuracy),
            "dsee_trainable": int(self.dsee_trainable),
            "baseline_trainable": int(self.baseline_trainable),
        }
