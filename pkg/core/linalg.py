"""Dense linear-algebra kernels.

Matrices are 2-D ``float32`` numpy arrays (row-major). Products accumulate in
``float64`` and are rounded back to ``float32``. Random streams come from numpy's
PCG64 bit generator, whose standard-normal sampler is the ziggurat method; the
same seed always yields the same stream.
"""

import logging
import zlib
from typing import Tuple

import numpy as np

from config import ORTHO_TOLERANCE, OVERSAMPLE
from core.exceptions import ShapeError, ParameterError, InputError, DegenerateInputError

logger = logging.getLogger(__name__)

DenseMatrix = np.ndarray
Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Create the generator for an unsigned 64-bit seed."""
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(base_seed: int, name: str) -> Rng:
    """Independent stream for a named matrix, stable across processes."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([base_seed, key])))


def as_matrix(data, name: str = "matrix") -> DenseMatrix:
    """Validate and convert input to a finite 2-D float32 matrix.

    Raises:
        ShapeError: If the input is not two-dimensional or has an empty side.
        InputError: If any entry is NaN or infinite.
    """
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(arr, dtype=np.float32)


def frobenius_norm(a: np.ndarray) -> float:
    """Frobenius norm accumulated in float64."""
    return float(np.sqrt(np.sum(np.square(a, dtype=np.float64))))


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Matrix product with float64 accumulation.

    Raises:
        ShapeError: If a.cols != b.rows.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(np.float32)


def _gram_schmidt(b: np.ndarray, tol: float, strict: bool) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass, in float64.

    With strict=False numerically dependent columns are returned as zero columns
    instead of raising.
    """
    q = np.array(b, dtype=np.float64, copy=True)
    n_cols = q.shape[1]
    for j in range(n_cols):
        col = q[:, j]
        for _ in range(2):
            for i in range(j):
                col -= np.dot(q[:, i], col) * q[:, i]
        norm = np.linalg.norm(col)
        if norm < tol:
            if strict:
                raise DegenerateInputError(
                    f"Column {j} is numerically dependent (norm {norm:.3e} after projection)"
                )
            q[:, j] = 0.0
            continue
        q[:, j] = col / norm
    return q


def orthonormalize(b: DenseMatrix) -> DenseMatrix:
    """Orthonormal basis of the column span of b.

    Raises:
        ShapeError: If b has more columns than rows.
        DegenerateInputError: If b is numerically rank deficient.
    """
    if b.ndim != 2 or b.shape[0] < b.shape[1]:
        raise ShapeError(f"orthonormalize needs rows >= cols, got {b.shape}")
    return _gram_schmidt(b, ORTHO_TOLERANCE, strict=True).astype(np.float32)


def _range_basis(y: np.ndarray) -> np.ndarray:
    """Orthonormal basis for span(y) with dependent columns dropped."""
    q = _gram_schmidt(y, ORTHO_TOLERANCE * max(1.0, float(np.abs(y).max(initial=0.0))), strict=False)
    keep = np.linalg.norm(q, axis=0) > 0.5
    return q[:, keep]


def randomized_low_rank(
    a: DenseMatrix,
    r: int,
    power_iters: int,
    rng: Rng,
    oversample: int = OVERSAMPLE,
) -> Tuple[DenseMatrix, DenseMatrix]:
    """Rank-r factorization a ~= u @ v by a power-iterated Gaussian sketch.

    The range of ``a`` is sketched with ``r + oversample`` Gaussian columns,
    refined by alternating products with a and a.T, and the projected matrix
    is truncated to rank r with a small SVD.

    Args:
        a: The m x n matrix.
        r: Target rank, at most min(m, n).
        power_iters: Number of power iterations.
        rng: Random stream for the sketch.
        oversample: Extra sketch columns.

    Returns:
        u of shape (m, r) and v of shape (r, n), float32.

    Raises:
        ParameterError: If r is out of range or power_iters is negative.
    """
    m, n = a.shape
    if r < 1 or r > min(m, n):
        raise ParameterError(f"rank {r} must be in [1, {min(m, n)}] for a {m}x{n} matrix")
    if power_iters < 0:
        raise ParameterError("power_iters must be non-negative")

    a64 = a.astype(np.float64)
    k = min(r + max(oversample, 0), min(m, n))
    omega = rng.standard_normal((n, k))

    y = a64 @ omega
    for _ in range(power_iters):
        q = _range_basis(y)
        z = _range_basis(a64.T @ q)
        y = a64 @ z
    q = _range_basis(y)

    u = np.zeros((m, r), dtype=np.float64)
    v = np.zeros((r, n), dtype=np.float64)
    if q.shape[1] == 0:
        return u.astype(np.float32), v.astype(np.float32)

    small = q.T @ a64
    left, sigma, right = np.linalg.svd(small, full_matrices=False)
    kept = min(r, sigma.shape[0])
    u[:, :kept] = (q @ left[:, :kept]) * sigma[:kept]
    v[:kept, :] = right[:kept, :]
    return u.astype(np.float32), v.astype(np.float32)
