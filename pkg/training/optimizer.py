"""AdamW with decoupled weight decay and a linear learning-rate decay."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from core.exceptions import TrainingError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamWHyper:
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def from_config(cls, opt_cfg) -> "AdamWHyper":
        return cls(betas=tuple(opt_cfg.betas), eps=opt_cfg.eps, weight_decay=opt_cfg.weight_decay)


@dataclass
class AdamWState:
    """First and second moments per parameter and the step counter."""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def linear_decay(base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate at 1-based `step`, falling linearly from base_lr towards 0."""
    if total_steps <= 0:
        return base_lr
    return base_lr * max(0.0, 1.0 - (step - 1) / total_steps)


def adamw_step(
    params: Dict[str, np.ndarray],
    grads,
    state: AdamWState,
    hp: AdamWHyper,
    lr: float,
) -> AdamWState:
    """One AdamW update applied in place to `params`.

    Weight decay shrinks each parameter by (1 - lr * weight_decay) before the
    Adam step and never enters the moment estimates.

    Raises:
        TrainingError: If a gradient is missing or non-finite.
        ShapeError: If a gradient does not match its parameter.

    Parameters and state are untouched when an error is raised.
    """
    beta1, beta2 = hp.betas
    checked = {}
    for name, param in params.items():
        if name not in grads:
            raise TrainingError(f"Missing gradient for {name}")
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient for {name} has shape {grad.shape}, expected {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"Non-finite gradient for {name} at step {state.step + 1}")
        checked[name] = grad

    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for name, param in params.items():
        grad = checked[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(param.shape, dtype=np.float64)
            v = np.zeros(param.shape, dtype=np.float64)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        updated = param.astype(np.float64)
        if hp.weight_decay:
            updated *= 1.0 - lr * hp.weight_decay
        updated -= lr * (m / bias1) / (np.sqrt(v / bias2) + hp.eps)
        param[...] = updated.astype(param.dtype)
    return state
