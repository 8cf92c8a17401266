"""Sparse-plus-low-rank decomposition of weight matrices and support selection."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from config import SupportMethod, SOLVER_TOL, SOLVER_MAX_ITER, POWER_ITERS
from core.exceptions import ParameterError, InputError, ShapeError
from core.linalg import DenseMatrix, Rng, randomized_low_rank, frobenius_norm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Support:
    """Frozen index set of a sparse update, sorted by (row, col)."""
    indices: np.ndarray
    host_shape: Tuple[int, int]

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 2)
        m, n = self.host_shape
        if idx.size:
            if idx.min() < 0 or idx[:, 0].max() >= m or idx[:, 1].max() >= n:
                raise ShapeError(f"Support index out of bounds for host shape {self.host_shape}")
            flat = idx[:, 0] * n + idx[:, 1]
            if np.any(np.diff(flat) <= 0):
                raise ParameterError("Support indices must be sorted and duplicate-free")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "host_shape", (int(m), int(n)))

    @classmethod
    def from_flat(cls, flat: np.ndarray, host_shape: Tuple[int, int]) -> "Support":
        """Build from row-major linear indices in any order."""
        flat = np.unique(np.asarray(flat, dtype=np.int64))
        n = host_shape[1]
        return cls(np.stack([flat // n, flat % n], axis=1), host_shape)

    @classmethod
    def empty(cls, host_shape: Tuple[int, int]) -> "Support":
        return cls(np.zeros((0, 2), dtype=np.int64), host_shape)

    @property
    def card(self) -> int:
        return int(self.indices.shape[0])

    @property
    def rows(self) -> np.ndarray:
        return self.indices[:, 0]

    @property
    def cols(self) -> np.ndarray:
        return self.indices[:, 1]

    def flat(self) -> np.ndarray:
        return self.rows * self.host_shape[1] + self.cols

    def pairs(self) -> List[Tuple[int, int]]:
        return [(int(i), int(j)) for i, j in self.indices]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Support):
            return NotImplemented
        return self.host_shape == other.host_shape and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash((self.host_shape, self.indices.tobytes()))


@dataclass
class DecompositionResult:
    """Factors, sparse part and residual trace of a decomposition."""
    u: DenseMatrix
    v: DenseMatrix
    s: DenseMatrix
    residual_history: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residual_history)


def _top_magnitude(x: np.ndarray, count: int) -> np.ndarray:
    """Row-major positions of the `count` largest |x|; equal magnitudes favour the smaller index."""
    order = np.argsort(-np.abs(x.ravel()), kind="stable")
    return order[:count]


def hard_threshold(x: np.ndarray, c: int) -> np.ndarray:
    """Keep the c largest-magnitude entries of x and zero the rest."""
    out = np.zeros_like(x)
    if c > 0:
        keep = _top_magnitude(x, c)
        out.ravel()[keep] = x.ravel()[keep]
    return out


def _alternate(
    w64: np.ndarray,
    s: np.ndarray,
    r: int,
    c: int,
    tol: float,
    max_iter: int,
    rng: Rng,
    power_iters: int,
) -> DecompositionResult:
    """Run the alternating fit from an initial sparse part s."""
    m, n = w64.shape
    u = np.zeros((m, r), dtype=np.float32)
    v = np.zeros((r, n), dtype=np.float32)
    low = np.zeros_like(w64)
    history: List[float] = []

    for it in range(max_iter):
        target = w64 - s
        cand_u, cand_v = randomized_low_rank(target, r, power_iters, rng)
        cand_low = cand_u.astype(np.float64) @ cand_v.astype(np.float64)
        if it == 0 or frobenius_norm(target - cand_low) <= frobenius_norm(target - low):
            u, v, low = cand_u, cand_v, cand_low

        s = hard_threshold(w64 - low, c)
        residual = frobenius_norm(w64 - low - s)
        history.append(residual)
        logger.debug(f"solve_slr iter {it}: residual {residual:.6e}")

        if residual == 0.0:
            break
        if it > 0:
            prev = history[-2]
            if abs(residual - prev) / max(prev, 1e-12) < tol:
                break

    return DecompositionResult(u=u, v=v, s=s.astype(np.float32), residual_history=history)


def solve_slr(
    w: DenseMatrix,
    r: int,
    c: int,
    tol: float = SOLVER_TOL,
    max_iter: int = SOLVER_MAX_ITER,
    rng: Optional[Rng] = None,
    power_iters: int = POWER_ITERS,
) -> DecompositionResult:
    """Decompose w ~= u @ v + s with rank(uv) <= r and card(s) <= c.

    Alternates a randomized rank-r fit of (w - s) with hard thresholding of
    (w - uv) to its c largest entries. A new low-rank fit replaces the previous
    one only when it does not increase the residual, so the residual trace is
    non-increasing.

    The alternation runs from s = 0 and again from s set to the c largest
    entries of w, which keeps spikes far above the low-rank part out of the
    first fit. The run with the smaller final residual is returned.

    Args:
        w: The m x n matrix to decompose.
        r: Rank of the low-rank part.
        c: Maximum number of non-zeros in the sparse part.
        tol: Stop when the relative residual change drops below tol.
        max_iter: Iteration cap per start.
        rng: Random stream for the sketches.
        power_iters: Power iterations per sketch.

    Returns:
        DecompositionResult with float32 factors and the residual trace of the
        chosen start.

    Raises:
        InputError: If w has non-finite entries.
        ParameterError: If r, c, tol or max_iter is out of range.
    """
    if w.ndim != 2:
        raise ShapeError(f"Expected a matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InputError("Cannot decompose a matrix with non-finite entries")
    m, n = w.shape
    if r < 1 or r > min(m, n):
        raise ParameterError(f"rank {r} must be in [1, {min(m, n)}]")
    if c < 0 or c > m * n:
        raise ParameterError(f"card {c} must be in [0, {m * n}]")
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if max_iter < 1:
        raise ParameterError("max_iter must be at least 1")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(0))

    w64 = w.astype(np.float64)
    best = _alternate(w64, np.zeros_like(w64), r, c, tol, max_iter, rng, power_iters)
    if c == 0 or best.residual_history[-1] == 0.0:
        return best

    warm = _alternate(w64, hard_threshold(w64, c), r, c, tol, max_iter, rng, power_iters)
    logger.debug(
        f"solve_slr final residuals: cold {best.residual_history[-1]:.6e}, "
        f"thresholded {warm.residual_history[-1]:.6e}"
    )
    if warm.residual_history[-1] < best.residual_history[-1]:
        return warm
    return best


def extract_support(s: DenseMatrix, n_keep: int) -> Support:
    """Indices of the n_keep largest-magnitude entries of s.

    Equal magnitudes are resolved in favour of the lexicographically smaller
    (row, col).

    Raises:
        ParameterError: If n_keep is negative or exceeds the entry count.
    """
    m, n = s.shape
    if n_keep < 0 or n_keep > m * n:
        raise ParameterError(f"n_keep {n_keep} must be in [0, {m * n}]")
    return Support.from_flat(_top_magnitude(s, n_keep), (m, n))


def select_support(
    w: DenseMatrix,
    method,
    n_keep: int,
    r: int,
    rng: Rng,
    card: Optional[int] = None,
    tol: float = SOLVER_TOL,
    max_iter: int = SOLVER_MAX_ITER,
    power_iters: int = POWER_ITERS,
) -> Support:
    """Choose the frozen support of a sparse update.

    Args:
        w: Pretrained weight matrix.
        method: "decompose", "magnitude" or "random".
        n_keep: Support size N.
        r: Rank for the decomposition (decompose only).
        rng: Random stream (decompose sketches, random sampling).
        card: Sparse cardinality c used by the solver; defaults to n_keep.

    Raises:
        ParameterError: On an unknown method or out-of-range sizes.
    """
    try:
        method = SupportMethod(method)
    except ValueError:
        raise ParameterError(f"Unknown support method {method!r}")

    m, n = w.shape
    if n_keep < 0 or n_keep > m * n:
        raise ParameterError(f"n_keep {n_keep} must be in [0, {m * n}]")

    if method is SupportMethod.DECOMPOSE:
        c = n_keep if card is None else card
        result = solve_slr(w, r, c, tol=tol, max_iter=max_iter, rng=rng, power_iters=power_iters)
        return extract_support(result.s, n_keep)
    if method is SupportMethod.MAGNITUDE:
        return extract_support(w, n_keep)

    flat = rng.choice(m * n, size=n_keep, replace=False)
    return Support.from_flat(flat, (m, n))
