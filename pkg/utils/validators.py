"""Input validation utilities."""

import logging
import re
from typing import List, Optional

from config import MAX_TENSOR_NAME_BYTES, PruningMode
from core.exceptions import ConfigurationError, ParameterError

logger = logging.getLogger(__name__)


def validate_fraction(value: float, name: str, allow_one: bool = False) -> float:
    """Check that a rate or ratio lies in [0, 1) (or [0, 1] when allow_one).

    Args:
        value: The number to check.
        name: Parameter name used in the error message.
        allow_one: Whether 1.0 itself is acceptable.

    Returns:
        The value as a float.

    Raises:
        ParameterError: If the value is outside the range.
    """
    value = float(value)
    upper_ok = value <= 1.0 if allow_one else value < 1.0
    if not (value >= 0.0 and upper_ok):
        bound = "[0, 1]" if allow_one else "[0, 1)"
        raise ParameterError(f"{name} must be in {bound}, got {value}")
    return value


def validate_tensor_name(name: str) -> bool:
    """Validate a tensor name for the archive header.

    Args:
        name: The name to validate.

    Returns:
        True if the name is non-empty and at most 256 bytes of UTF-8.
    """
    if not isinstance(name, str) or not name:
        return False
    try:
        encoded = name.encode("utf-8")
    except UnicodeEncodeError:
        return False
    return len(encoded) <= MAX_TENSOR_NAME_BYTES


def parse_levels(input_string: str) -> Optional[List[float]]:
    """Parse a comma-separated list of sparsity levels.

    Args:
        input_string: Text such as ``"0.1,0.3,0.5"``.

    Returns:
        The parsed levels, or None if the input is invalid.

    Examples:
        >>> parse_levels('0.1, 0.5')
        [0.1, 0.5]
        >>> parse_levels('0.5,abc')
        None
    """
    parts = [p.strip() for p in input_string.split(",") if p.strip()]
    if not parts:
        return None
    levels = []
    for part in parts:
        if not re.match(r"^\d*\.?\d+(e-?\d+)?$", part):
            return None
        level = float(part)
        if not 0.0 <= level < 1.0:
            return None
        levels.append(level)
    return levels


def validate_pipeline_config(cfg) -> None:
    """Validate cross-field constraints of a PipelineConfig.

    Args:
        cfg: A PipelineConfig.

    Raises:
        ConfigurationError: If any rate, ratio, epoch count or adapter size is invalid.
    """
    from core.accounting import rank_budget_bound

    model = cfg.model
    adapter = cfg.adapter
    pruning = cfg.pruning
    opt = cfg.optimizer

    try:
        validate_fraction(pruning.sparsity, "pruning.sparsity")
        validate_fraction(pruning.ffn_ratio, "pruning.ffn_ratio")
        for beta in opt.betas:
            validate_fraction(beta, "optimizer.betas")
    except ParameterError as e:
        raise ConfigurationError(str(e))

    if pruning.mode == PruningMode.STRUCTURED.value:
        removed = int(model.n_heads * pruning.sparsity)
        if removed >= model.n_heads:
            raise ConfigurationError("Structured pruning would remove every head")
    if pruning.lambda_l1 < 0:
        raise ConfigurationError("pruning.lambda_l1 must be non-negative")

    if opt.epochs_stage1 < 1 or opt.epochs_stage3 < 1:
        raise ConfigurationError("Stages I and III need at least one epoch")
    if opt.lr_stage1 <= 0 or opt.lr_stage3 <= 0 or cfg.pretrain.lr <= 0:
        raise ConfigurationError("Learning rates must be positive")
    if opt.eps <= 0 or opt.weight_decay < 0:
        raise ConfigurationError("optimizer.eps must be positive and weight_decay non-negative")
    if opt.batch_size < 1 or cfg.pretrain.batch_size < 1:
        raise ConfigurationError("Batch sizes must be positive")
    if cfg.pretrain.max_epochs < 1:
        raise ConfigurationError("pretrain.max_epochs must be at least 1")

    side = model.d_model
    if adapter.rank < 1 or adapter.rank > side:
        raise ConfigurationError(f"adapter.rank must be in [1, {side}], got {adapter.rank}")
    if adapter.n_keep < 0 or adapter.n_keep > side * side:
        raise ConfigurationError(f"adapter.n_keep must be in [0, {side * side}]")
    if adapter.solver_rank < 1 or adapter.solver_rank > side:
        raise ConfigurationError("adapter.decomposition_rank out of range")
    if adapter.solver_card < 0 or adapter.solver_card > side * side:
        raise ConfigurationError("adapter.decomposition_card out of range")

    bound = rank_budget_bound(side, side, adapter.n_keep)
    if adapter.rank > bound:
        logger.warning(
            f"adapter.rank {adapter.rank} exceeds the parameter-saving bound {bound:.1f}"
        )

    task = cfg.task
    if task.n_train < 1 or task.n_eval < 1:
        raise ConfigurationError("task.n_train and task.n_eval must be positive")
    if not 0 <= task.key_position < model.seq_len:
        raise ConfigurationError("task.key_position must index into the sequence")
