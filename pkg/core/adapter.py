"""Sparsity-embedded low-rank weight updates: dW = U V + S2 with S2 living on a frozen support."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import V_INIT_STD
from core.decompose import Support, select_support
from core.exceptions import ShapeError, ParameterError
from core.linalg import DenseMatrix, Rng

logger = logging.getLogger(__name__)


@dataclass
class UnstructuredMask:
    """Binary keep-mask S1 over a pretrained weight matrix (True = kept)."""
    bits: np.ndarray
    host_shape: Tuple[int, int]

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.size != self.host_shape[0] * self.host_shape[1]:
            raise ShapeError(f"Mask has {bits.size} bits for host shape {self.host_shape}")
        self.bits = bits.reshape(self.host_shape)
        self.host_shape = (int(self.host_shape[0]), int(self.host_shape[1]))

    @classmethod
    def ones(cls, host_shape: Tuple[int, int]) -> "UnstructuredMask":
        return cls(np.ones(host_shape, dtype=bool), host_shape)

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def sparsity(self) -> float:
        total = self.bits.size
        return 1.0 - self.nonzero_count() / total

    def apply(self, w: np.ndarray) -> np.ndarray:
        if w.shape != self.host_shape:
            raise ShapeError(f"Mask shape {self.host_shape} does not match weight {w.shape}")
        return np.where(self.bits, w, 0).astype(w.dtype, copy=False)


@dataclass
class SparseLowRankUpdate:
    """Trainable update U V + S2 with S2 values stored only on the support."""
    u: np.ndarray
    v: np.ndarray
    s2_values: np.ndarray
    support: Support
    host_shape: Tuple[int, int]

    def __post_init__(self):
        m, n = self.host_shape
        if self.u.ndim != 2 or self.v.ndim != 2 or self.u.shape[1] != self.v.shape[0]:
            raise ShapeError(f"Incompatible factors {self.u.shape} and {self.v.shape}")
        if self.u.shape[0] != m or self.v.shape[1] != n:
            raise ShapeError(
                f"Factors {self.u.shape} x {self.v.shape} do not match host shape {self.host_shape}"
            )
        if self.support.host_shape != (m, n):
            raise ShapeError("Support host shape does not match the update")
        if self.s2_values.shape != (self.support.card,):
            raise ShapeError(
                f"s2_values has shape {self.s2_values.shape}, support has {self.support.card} entries"
            )

    @property
    def rank(self) -> int:
        return int(self.u.shape[1])

    @property
    def card(self) -> int:
        return self.support.card

    @property
    def num_trainable(self) -> int:
        return int(self.u.size + self.v.size + self.s2_values.size)

    def sparse_dense(self) -> np.ndarray:
        """Dense rendering of S2 (zero off the support)."""
        out = np.zeros(self.host_shape, dtype=self.s2_values.dtype)
        out[self.support.rows, self.support.cols] = self.s2_values
        return out

    def delta_dense(self) -> np.ndarray:
        """Dense U V + S2."""
        low = (self.u.astype(np.float64) @ self.v.astype(np.float64)).astype(self.u.dtype)
        return low + self.sparse_dense()

    def copy(self) -> "SparseLowRankUpdate":
        return SparseLowRankUpdate(
            u=self.u.copy(),
            v=self.v.copy(),
            s2_values=self.s2_values.copy(),
            support=self.support,
            host_shape=self.host_shape,
        )

    def astype(self, dtype) -> "SparseLowRankUpdate":
        return SparseLowRankUpdate(
            u=self.u.astype(dtype),
            v=self.v.astype(dtype),
            s2_values=self.s2_values.astype(dtype),
            support=self.support,
            host_shape=self.host_shape,
        )


def init_update(
    w: DenseMatrix,
    r: int,
    n_keep: int,
    method,
    rng: Rng,
    init_std: float = V_INIT_STD,
    decomposition_rank: Optional[int] = None,
    **solver_kwargs,
) -> SparseLowRankUpdate:
    """Sparsity-embedded low-rank decomposition of a pretrained matrix.

    The support comes from `select_support`; the decomposed values are
    discarded. The solver runs at decomposition_rank when given (default r).
    U starts at zero and V at N(0, init_std), so the update is zero
    at step 0.

    Raises:
        ParameterError: If r is out of range, or from select_support.
    """
    m, n = w.shape
    if r < 1 or r > min(m, n):
        raise ParameterError(f"rank {r} must be in [1, {min(m, n)}]")
    support = select_support(w, method, n_keep, decomposition_rank or r, rng, **solver_kwargs)
    if support.card < n_keep:
        logger.warning(f"Support holds {support.card} of {n_keep} requested entries")
    dtype = w.dtype if np.issubdtype(w.dtype, np.floating) else np.float32
    u = np.zeros((m, r), dtype=dtype)
    v = (rng.standard_normal((r, n)) * init_std).astype(dtype)
    s2 = np.zeros(support.card, dtype=dtype)
    return SparseLowRankUpdate(u=u, v=v, s2_values=s2, support=support, host_shape=(m, n))


def project_onto_support(values: np.ndarray, support: Support) -> np.ndarray:
    """Keep entries on the support and zero everything else.

    Raises:
        ShapeError: If values does not have the support's host shape.
    """
    if values.shape != support.host_shape:
        raise ShapeError(f"Values {values.shape} do not match support host {support.host_shape}")
    out = np.zeros_like(values)
    out[support.rows, support.cols] = values[support.rows, support.cols]
    return out


def _effective_weight(w: np.ndarray, mask: Optional[UnstructuredMask]) -> np.ndarray:
    if mask is None:
        return w
    return mask.apply(w)


def _check_site(w: np.ndarray, mask: Optional[UnstructuredMask], upd: SparseLowRankUpdate):
    if upd.host_shape != w.shape:
        raise ShapeError(f"Update host shape {upd.host_shape} does not match weight {w.shape}")
    if mask is not None and mask.host_shape != w.shape:
        raise ShapeError(f"Mask host shape {mask.host_shape} does not match weight {w.shape}")


def forward_rows(
    x: np.ndarray,
    w: np.ndarray,
    mask: Optional[UnstructuredMask],
    upd: Optional[SparseLowRankUpdate],
) -> np.ndarray:
    """Row-batched site output: x (b, n) -> (b, m) = x (W*S1)^T + (x V^T) U^T + x S2^T.

    The S2 term is gathered from the support entries and never densified; the
    low-rank term goes through the r-dimensional bottleneck.
    """
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"Input {x.shape} does not match weight {w.shape}")
    out = x @ _effective_weight(w, mask).T
    if upd is None:
        return out
    _check_site(w, mask, upd)
    out = out + (x @ upd.v.T) @ upd.u.T
    if upd.card:
        rows, cols = upd.support.rows, upd.support.cols
        np.add.at(out.T, rows, (x[:, cols] * upd.s2_values).T)
    return out


def backward_rows(
    x: np.ndarray,
    grad_out: np.ndarray,
    w: np.ndarray,
    mask: Optional[UnstructuredMask],
    upd: Optional[SparseLowRankUpdate],
    need_weight_grad: bool = False,
):
    """Gradients of `forward_rows` given dL/d(out).

    Returns:
        Tuple (grad_x, grad_w, grad_u, grad_v, grad_s2). grad_w is None unless
        requested and is already multiplied by the mask; the update gradients are
        None when there is no update.
    """
    w_eff = _effective_weight(w, mask)
    grad_x = grad_out @ w_eff
    grad_w = None
    if need_weight_grad:
        grad_w = grad_out.T @ x
        if mask is not None:
            grad_w = np.where(mask.bits, grad_w, 0).astype(grad_w.dtype, copy=False)
    if upd is None:
        return grad_x, grad_w, None, None, None

    g_u = grad_out @ upd.u
    grad_x = grad_x + g_u @ upd.v
    grad_u = grad_out.T @ (x @ upd.v.T)
    grad_v = g_u.T @ x
    grad_s2 = np.zeros_like(upd.s2_values)
    if upd.card:
        rows, cols = upd.support.rows, upd.support.cols
        grad_s2 = np.einsum("bk,bk->k", grad_out[:, rows], x[:, cols])
        np.add.at(grad_x.T, cols, (grad_out[:, rows] * upd.s2_values).T)
    return grad_x, grad_w, grad_u, grad_v, grad_s2


def forward(
    x: DenseMatrix,
    w: DenseMatrix,
    mask: Optional[UnstructuredMask],
    upd: SparseLowRankUpdate,
) -> DenseMatrix:
    """Column-batched site output y = (W*S1) x + U (V x) + S2 x for x of shape (n, b).

    Raises:
        ShapeError: If shapes are incompatible.
    """
    if x.ndim != 2 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"Input {x.shape} does not match weight {w.shape}")
    _check_site(w, mask, upd)
    return forward_rows(x.T, w, mask, upd).T


def merge(
    w: DenseMatrix,
    mask: Optional[UnstructuredMask],
    upd: SparseLowRankUpdate,
) -> DenseMatrix:
    """Deployed dense matrix W*S1 + U V + S2.

    Raises:
        ShapeError: If shapes are incompatible.
    """
    _check_site(w, mask, upd)
    return _effective_weight(w, mask) + upd.delta_dense()
