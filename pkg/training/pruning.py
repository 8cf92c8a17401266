"""Global magnitude masks, gate-ranked head pruning and FFN unit pruning."""

import logging
import math
from typing import Dict, Iterable, List, Sequence

import numpy as np

from core.adapter import SparseLowRankUpdate, UnstructuredMask
from core.decompose import Support
from core.exceptions import ParameterError, ShapeError
from training.model import ATTENTION_PROJECTIONS, ToyTransformer
from utils.validators import validate_fraction

logger = logging.getLogger(__name__)


def magnitude_mask(matrices: Dict[str, np.ndarray], sparsity: float) -> Dict[str, UnstructuredMask]:
    """One global magnitude threshold over every listed matrix.

    Exactly floor(sparsity * total) entries are masked. Matrices are visited in
    name order and entries in row-major order; among equal magnitudes the
    earlier entry is pruned first.

    Raises:
        ParameterError: If sparsity is outside [0, 1).
    """
    validate_fraction(sparsity, "sparsity")
    names = sorted(matrices)
    if not names:
        return {}
    flat = np.concatenate([np.abs(np.asarray(matrices[n], dtype=np.float64)).ravel() for n in names])
    n_pruned = math.floor(sparsity * flat.size)
    keep = np.ones(flat.size, dtype=bool)
    if n_pruned:
        keep[np.argsort(flat, kind="stable")[:n_pruned]] = False

    masks: Dict[str, UnstructuredMask] = {}
    offset = 0
    for name in names:
        shape = matrices[name].shape
        size = shape[0] * shape[1]
        masks[name] = UnstructuredMask(keep[offset:offset + size].reshape(shape), shape)
        offset += size
    logger.info(f"Masked {n_pruned} of {flat.size} weights across {len(names)} matrices")
    return masks


def merged_matrices(model: ToyTransformer, sites: Iterable[str], include_sparse: bool = True) -> Dict[str, np.ndarray]:
    """W + U V (+ S2) for each site; sites without an update contribute W."""
    out = {}
    for site in sites:
        w = model.params[f"{site}.weight"].astype(np.float64)
        upd = model.updates.get(site)
        if upd is not None:
            w = w + upd.u.astype(np.float64) @ upd.v.astype(np.float64)
            if include_sparse:
                w = w + upd.sparse_dense().astype(np.float64)
        out[site] = w
    return out


def head_importance(gates: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Per-layer head indices, least important (smallest |c|) first."""
    return [np.argsort(np.abs(np.asarray(c)), kind="stable") for c in gates]


def _index_set(kept, bound: int, label: str) -> np.ndarray:
    kept = np.unique(np.asarray(kept, dtype=np.int64))
    if kept.size == 0:
        raise ParameterError(f"Kept {label} set is empty")
    if kept[0] < 0 or kept[-1] >= bound:
        raise ParameterError(f"Kept {label} index out of range [0, {bound})")
    return kept


def shrink_update(upd: SparseLowRankUpdate, kept_rows, kept_cols) -> SparseLowRankUpdate:
    """Restrict an update to kept_rows x kept_cols of its host matrix.

    Support entries outside the kept block are dropped and the remaining
    indices re-based onto the smaller matrix. The rank is unchanged.

    Raises:
        ParameterError: If a kept set is empty or out of range.
    """
    m, n = upd.host_shape
    rows = _index_set(kept_rows, m, "row")
    cols = _index_set(kept_cols, n, "column")
    row_pos = np.full(m, -1, dtype=np.int64)
    row_pos[rows] = np.arange(rows.size)
    col_pos = np.full(n, -1, dtype=np.int64)
    col_pos[cols] = np.arange(cols.size)

    new_rows = row_pos[upd.support.rows]
    new_cols = col_pos[upd.support.cols]
    inside = (new_rows >= 0) & (new_cols >= 0)
    shape = (int(rows.size), int(cols.size))
    support = Support(np.stack([new_rows[inside], new_cols[inside]], axis=1), shape)
    return SparseLowRankUpdate(
        u=upd.u[rows].copy(),
        v=upd.v[:, cols].copy(),
        s2_values=upd.s2_values[inside].copy(),
        support=support,
        host_shape=shape,
    )


def _slice_site(model: ToyTransformer, site: str, rows=None, cols=None) -> None:
    """Slice a site's weight, mask and update in place."""
    key = f"{site}.weight"
    w = model.params[key]
    m, n = w.shape
    rows = np.arange(m) if rows is None else rows
    cols = np.arange(n) if cols is None else cols
    model.params[key] = w[np.ix_(rows, cols)].copy()
    mask = model.masks.get(site)
    if mask is not None:
        bits = mask.bits[np.ix_(rows, cols)]
        model.masks[site] = UnstructuredMask(bits, bits.shape)
    upd = model.updates.get(site)
    if upd is not None:
        model.updates[site] = shrink_update(upd, rows, cols)


def prune_heads(model: ToyTransformer, ratio: float) -> ToyTransformer:
    """Remove floor(heads * ratio) lowest-|c| heads from every layer.

    Returns a new model whose Q/K/V rows, O columns, gates, masks and updates
    are physically sliced to the surviving heads.

    Raises:
        ParameterError: If ratio is outside [0, 1) or would remove every head.
    """
    validate_fraction(ratio, "ratio")
    pruned = model.copy()
    dh = model.cfg.head_dim
    rankings = head_importance(model.gates())
    for layer, ranking in enumerate(rankings):
        heads = ranking.size
        n_remove = math.floor(heads * ratio)
        if n_remove >= heads:
            raise ParameterError(f"Pruning {n_remove} of {heads} heads leaves layer {layer} empty")
        if n_remove == 0:
            continue
        kept = np.sort(ranking[n_remove:])
        dims = (kept[:, None] * dh + np.arange(dh)[None, :]).ravel()
        p = f"layers.{layer}.attn."
        for proj in ATTENTION_PROJECTIONS:
            if proj == "o":
                _slice_site(pruned, p + proj, cols=dims)
            else:
                _slice_site(pruned, p + proj, rows=dims)
        pruned.params[p + "gates"] = pruned.params[p + "gates"][kept].copy()
        pruned.kept_heads[layer] = pruned.kept_heads[layer][kept]
        logger.info(f"Layer {layer}: removed heads {sorted(int(h) for h in ranking[:n_remove])}")
    return pruned


def ffn_importance(model: ToyTransformer, layer: int) -> np.ndarray:
    """l2 norm of each intermediate unit's input row and output column."""
    p = f"layers.{layer}.ffn."
    w_in = model.params[p + "in.weight"].astype(np.float64)
    w_out = model.params[p + "out.weight"].astype(np.float64)
    if p + "in" in model.masks:
        w_in = model.masks[p + "in"].apply(w_in)
    if p + "out" in model.masks:
        w_out = model.masks[p + "out"].apply(w_out)
    return np.sqrt(np.sum(w_in ** 2, axis=1) + np.sum(w_out ** 2, axis=0))


def prune_ffn(model: ToyTransformer, ratio: float) -> ToyTransformer:
    """Remove floor(units * ratio) lowest-norm FFN intermediate units per layer.

    Raises:
        ParameterError: If ratio is outside [0, 1) or would remove every unit.
    """
    validate_fraction(ratio, "ratio")
    pruned = model.copy()
    for layer in range(model.cfg.n_layers):
        scores = ffn_importance(model, layer)
        units = scores.size
        n_remove = math.floor(units * ratio)
        if n_remove >= units:
            raise ParameterError(f"Pruning {n_remove} of {units} FFN units leaves layer {layer} empty")
        if n_remove == 0:
            continue
        kept = np.sort(np.argsort(scores, kind="stable")[n_remove:])
        p = f"layers.{layer}.ffn."
        _slice_site(pruned, p + "in", rows=kept)
        _slice_site(pruned, p + "out", cols=kept)
        pruned.params[p + "in.bias"] = pruned.params[p + "in.bias"][kept].copy()
        pruned.kept_ffn[layer] = pruned.kept_ffn[layer][kept]
        logger.info(f"Layer {layer}: kept {kept.size} of {units} FFN units")
    return pruned


def apply_masks(model: ToyTransformer, masks: Dict[str, UnstructuredMask]) -> None:
    """Attach masks to their sites in place."""
    for site, mask in masks.items():
        w = model.params.get(f"{site}.weight")
        if w is None:
            raise ShapeError(f"No site named {site}")
        if w.shape != mask.host_shape:
            raise ShapeError(f"Mask {mask.host_shape} does not fit site {site} {w.shape}")
        model.masks[site] = mask
