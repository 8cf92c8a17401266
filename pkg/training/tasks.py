"""Synthetic sequence-classification tasks."""

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from config import TaskKind
from core.exceptions import ParameterError
from core.linalg import Rng, derive_rng, make_rng

logger = logging.getLogger(__name__)

_DRAW_FACTOR = 2
_ENUMERATION_LIMIT = 1 << 16
_MAX_DRAW_ROUNDS = 100


@dataclass
class Dataset:
    tokens: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def majority_label(seq, n_classes: int) -> Optional[int]:
    """Most frequent token class (token % n_classes), or None on a tie."""
    counts = np.bincount(np.asarray(seq) % n_classes, minlength=n_classes)
    top = counts.max()
    if np.count_nonzero(counts == top) > 1:
        return None
    return int(np.argmax(counts))


def keycopy_permutation(seed: int, vocab_size: int) -> np.ndarray:
    """Seed-dependent token permutation used by the keycopy labels."""
    return derive_rng(seed, "keycopy.permutation").permutation(vocab_size)


def _label_batch(kind: TaskKind, tokens: np.ndarray, n_classes: int, perm, key_position: int):
    if kind is TaskKind.KEYCOPY:
        return perm[tokens[:, key_position]] % n_classes, np.ones(tokens.shape[0], dtype=bool)
    classes = tokens % n_classes
    counts = np.stack([(classes == k).sum(axis=1) for k in range(n_classes)], axis=1)
    top = counts.max(axis=1, keepdims=True)
    unique_top = (counts == top).sum(axis=1) == 1
    return np.argmax(counts, axis=1), unique_top


def _valid_pool_size(kind: TaskKind, vocab_size: int, seq_len: int, n_classes: int) -> Optional[int]:
    """Number of sequences the task accepts, or None when the space is too large to enumerate."""
    total = vocab_size ** seq_len
    if kind is TaskKind.KEYCOPY:
        return total
    if total > _ENUMERATION_LIMIT:
        return None
    grid = np.stack(np.unravel_index(np.arange(total), (vocab_size,) * seq_len), axis=1)
    _, valid = _label_batch(kind, grid, n_classes, None, 0)
    return int(np.count_nonzero(valid))


def make_task(
    kind,
    seed: int,
    n_train: int,
    n_eval: int,
    vocab_size: int,
    seq_len: int,
    n_classes: int,
    key_position: int = 0,
) -> Tuple[Dataset, Dataset]:
    """Generate disjoint train and eval splits.

    majority: the label is the most frequent token class; tied sequences are
    redrawn. keycopy: the label is the token at key_position mapped through a
    seed-dependent permutation, modulo n_classes.

    Raises:
        ParameterError: On an unknown kind or when the task accepts too few
            distinct sequences.
    """
    try:
        kind = TaskKind(kind)
    except ValueError:
        raise ParameterError(f"Unknown task kind {kind!r}")
    if not 0 <= key_position < seq_len:
        raise ParameterError(f"key_position {key_position} outside sequence of length {seq_len}")
    needed = n_train + n_eval
    if vocab_size ** seq_len < _DRAW_FACTOR * needed:
        raise ParameterError(
            f"{vocab_size}^{seq_len} sequences cannot supply {needed} distinct samples"
        )
    pool = _valid_pool_size(kind, vocab_size, seq_len, n_classes)
    if pool is not None and pool < needed:
        raise ParameterError(
            f"Only {pool} {kind.value} sequences exist for vocab {vocab_size}, length {seq_len}; "
            f"{needed} distinct samples requested"
        )

    rng = make_rng(seed)
    perm = keycopy_permutation(seed, vocab_size) if kind is TaskKind.KEYCOPY else None
    rows = np.zeros((0, seq_len), dtype=np.int64)
    rounds = 0
    while rows.shape[0] < needed:
        if rounds == _MAX_DRAW_ROUNDS:
            raise ParameterError(
                f"Drew only {rows.shape[0]} of {needed} distinct {kind.value} sequences "
                f"in {_MAX_DRAW_ROUNDS} rounds"
            )
        rounds += 1
        draw = rng.integers(0, vocab_size, size=(_DRAW_FACTOR * needed, seq_len), dtype=np.int64)
        _, valid = _label_batch(kind, draw, n_classes, perm, key_position)
        rows = np.unique(np.concatenate([rows, draw[valid]], axis=0), axis=0)
    rows = rows[rng.permutation(rows.shape[0])[:needed]]
    labels, _ = _label_batch(kind, rows, n_classes, perm, key_position)
    labels = labels.astype(np.int64)

    logger.debug(f"Generated {kind.value} task (seed {seed}): {n_train} train, {n_eval} eval")
    return (
        Dataset(rows[:n_train], labels[:n_train]),
        Dataset(rows[n_train:], labels[n_train:]),
    )


def task_from_config(cfg, seed: int) -> Tuple[Dataset, Dataset]:
    """Task splits for a PipelineConfig and a task seed."""
    return make_task(
        cfg.task.kind,
        seed,
        cfg.task.n_train,
        cfg.task.n_eval,
        cfg.model.vocab_size,
        cfg.model.seq_len,
        cfg.model.n_classes,
        cfg.task.key_position,
    )


def iterate_batches(data: Dataset, batch_size: int, rng: Rng) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffled mini-batches covering the dataset once."""
    order = rng.permutation(len(data))
    for start in range(0, len(data), batch_size):
        idx = order[start:start + batch_size]
        yield data.tokens[idx], data.labels[idx]
