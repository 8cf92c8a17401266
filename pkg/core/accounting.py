"""Trainable-parameter counts, sparsity statistics, analytic FLOPs and weight-change histograms."""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import FLOPS_CONVENTION, PruningMode
from core.exceptions import ShapeError, ParameterError
from utils.models import BudgetReport, Histogram, SiteBudget

logger = logging.getLogger(__name__)

SOFTMAX_OPS = 5
LAYERNORM_OPS = 5
GELU_OPS = 8

SiteShape = Tuple[int, int, int, int]


@dataclass(frozen=True)
class ArchSpec:
    """Encoder dimensions relevant to FLOPs (BERT-like or the toy model)."""
    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    head_dim: Optional[int] = None

    @property
    def dh(self) -> int:
        return self.head_dim if self.head_dim is not None else self.d_model // self.n_heads

    @classmethod
    def from_config(cls, cfg) -> "ArchSpec":
        return cls(cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.d_ff)


@dataclass(frozen=True)
class MaskState:
    """Pruning state: dense, unstructured(sparsity) or structured(kept heads / FFN units per layer)."""
    kind: str = "dense"
    sparsity: float = 0.0
    kept_heads: Optional[Tuple[int, ...]] = None
    kept_ffn: Optional[Tuple[int, ...]] = None

    @classmethod
    def dense(cls) -> "MaskState":
        return cls()

    @classmethod
    def unstructured(cls, sparsity: float) -> "MaskState":
        return cls(kind=PruningMode.UNSTRUCTURED.value, sparsity=sparsity)

    @classmethod
    def structured(cls, kept_heads: Sequence[int], kept_ffn: Sequence[int]) -> "MaskState":
        return cls(
            kind=PruningMode.STRUCTURED.value,
            kept_heads=tuple(int(h) for h in kept_heads),
            kept_ffn=tuple(int(u) for u in kept_ffn),
        )


@dataclass(frozen=True)
class AdapterState:
    """Adapters attached to the listed projections of every layer."""
    rank: int
    card: int
    targets: Tuple[str, ...] = ("q", "k", "v", "o")


def count_trainable(sites: Iterable[SiteShape], extras: int = 0) -> int:
    """Sum of (m + n) * r + card over the sites, plus extras."""
    total = int(extras)
    for m, n, r, card in sites:
        total += (int(m) + int(n)) * int(r) + int(card)
    return total


def rank_budget_bound(m: int, n: int, card: int) -> float:
    """Largest rank for which the update has fewer parameters than the dense matrix."""
    return (m * n - card) / (m + n)


def site_dims(proj: str, d_model: int, attn_dim: int) -> Tuple[int, int]:
    """(m, n) of an attention projection given the kept attention width."""
    if proj == "o":
        return d_model, attn_dim
    return attn_dim, d_model


def _layer_dims(arch: ArchSpec, mask_state: MaskState) -> List[Tuple[int, int]]:
    """(kept heads, kept FFN units) per layer."""
    if mask_state.kind == PruningMode.STRUCTURED.value:
        heads = mask_state.kept_heads or tuple([arch.n_heads] * arch.n_layers)
        ffn = mask_state.kept_ffn or tuple([arch.d_ff] * arch.n_layers)
        if len(heads) != arch.n_layers or len(ffn) != arch.n_layers:
            raise ParameterError("Structured mask state needs one entry per layer")
        return list(zip(heads, ffn))
    return [(arch.n_heads, arch.d_ff)] * arch.n_layers


def estimate_flops(
    arch: ArchSpec,
    seq_len: int,
    batch: int = 1,
    dataset_size: int = 1,
    mask_state: Optional[MaskState] = None,
    adapter_state: Optional[AdapterState] = None,
) -> int:
    """Analytic inference FLOPs for `dataset_size` batches of `batch` sequences.

    Counts 2 x MACs for every matrix product; softmax, layer-norm and GELU at a
    fixed op count per element; bias and residual adds at one op per element.
    Embeddings are excluded. Unstructured masks do not lower the count.
    """
    mask_state = mask_state or MaskState.dense()
    sequences = batch * dataset_size
    tokens = seq_len * sequences
    d, dh = arch.d_model, arch.dh

    total = 0
    for heads, units in _layer_dims(arch, mask_state):
        attn = heads * dh
        per_token = 0
        per_token += 2 * d * attn * 3 + 3 * attn
        per_token += 2 * attn * d + d
        per_token += 2 * d * units + units + GELU_OPS * units
        per_token += 2 * units * d + d
        per_token += 2 * LAYERNORM_OPS * d + 2 * d
        if adapter_state is not None:
            for proj in adapter_state.targets:
                m, n = site_dims(proj, d, attn)
                per_token += 2 * ((m + n) * adapter_state.rank + adapter_state.card)
        per_sequence = 2 * heads * seq_len * seq_len * dh * 2
        per_sequence += SOFTMAX_OPS * heads * seq_len * seq_len
        per_sequence += heads * seq_len * dh
        total += per_token * tokens + per_sequence * sequences
    return int(total)


def delta_histogram(
    w_before: np.ndarray,
    w_after: np.ndarray,
    bins: int,
    value_range: Tuple[float, float],
) -> Histogram:
    """Histogram of w_after - w_before over value_range.

    Deltas outside the range are clamped into the first or last bin, so the
    counts always sum to the number of entries.

    Raises:
        ShapeError: If the matrices differ in shape.
        ParameterError: If bins < 1 or the range is empty.
    """
    if w_before.shape != w_after.shape:
        raise ShapeError(f"Cannot compare shapes {w_before.shape} and {w_after.shape}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if bins < 1 or not hi > lo:
        raise ParameterError("Histogram needs bins >= 1 and hi > lo")
    delta = w_after.astype(np.float64) - w_before.astype(np.float64)
    counts, edges = np.histogram(np.clip(delta, lo, hi), bins=bins, range=(lo, hi))
    return Histogram(edges=edges.tolist(), counts=counts.tolist())


def adapter_flops(sites: Iterable[SiteShape], tokens: int) -> int:
    """FLOPs of the update terms: 2 * ((m + n) * r + card) per token and site."""
    return int(sum(2 * ((m + n) * r + card) for m, n, r, card in sites) * tokens)


def _assemble(
    sites: List[SiteBudget],
    extras: int,
    total_params: int,
    maskable: int,
    masked: int,
    flops_dense: int,
    flops_current: int,
) -> BudgetReport:
    trainable = count_trainable(((s.m, s.n, s.r, s.card) for s in sites), extras)
    sparsity = masked / maskable if maskable else 0.0
    return BudgetReport(
        trainable_params=trainable,
        total_params=total_params,
        pretrained_sparsity=sparsity,
        nonzero_weights=total_params - masked,
        flops_dense=flops_dense,
        flops_current=flops_current,
        flops_convention=FLOPS_CONVENTION,
        extra_params=extras,
        sites=sites,
    )


def budget_from_config(cfg) -> BudgetReport:
    """Budget implied by a PipelineConfig, without building a model.

    flops_dense is the unpruned host carrying the same updates; flops_current
    applies the configured structured pruning. Support sizes are taken as N
    for every site.
    """
    from training.model import count_model_params, head_param_count

    model_cfg = cfg.model
    arch = ArchSpec.from_config(model_cfg)
    structured = cfg.pruning.mode == PruningMode.STRUCTURED.value
    heads_after = model_cfg.n_heads
    units_after = model_cfg.d_ff
    if structured:
        heads_after -= int(model_cfg.n_heads * cfg.pruning.sparsity)
        units_after -= int(model_cfg.d_ff * cfg.pruning.ffn_ratio)
    attn = heads_after * arch.dh
    unstructured_s = 0.0 if structured else cfg.pruning.sparsity

    sites = []
    maskable = 0
    for layer in range(model_cfg.n_layers):
        for proj in cfg.adapter.targets:
            m, n = site_dims(proj, model_cfg.d_model, attn)
            maskable += m * n
            sites.append(SiteBudget(f"layers.{layer}.attn.{proj}", m, n, cfg.adapter.rank,
                                    cfg.adapter.n_keep, unstructured_s))
        if cfg.pruning.mask_ffn and not structured:
            maskable += 2 * model_cfg.d_model * model_cfg.d_ff
    masked = int(unstructured_s * maskable)

    kept_heads = [heads_after] * model_cfg.n_layers
    kept_ffn = [units_after] * model_cfg.n_layers
    extras = head_param_count(model_cfg, kept_heads, structured) if cfg.count_head_params else 0
    total = count_model_params(model_cfg, kept_heads, kept_ffn)

    adapter_state = AdapterState(cfg.adapter.rank, cfg.adapter.n_keep, tuple(cfg.adapter.targets))
    mask_state = (
        MaskState.structured(kept_heads, kept_ffn) if structured
        else MaskState.unstructured(unstructured_s)
    )
    flops_dense = estimate_flops(arch, model_cfg.seq_len, adapter_state=adapter_state)
    flops_current = estimate_flops(arch, model_cfg.seq_len, mask_state=mask_state,
                                   adapter_state=adapter_state)
    return _assemble(sites, extras, total, maskable, masked, flops_dense, flops_current)


def budget_from_model(model, count_head_params: bool = False, train_gates: bool = False) -> BudgetReport:
    """Budget of an instantiated ToyTransformer from its stored updates and masks."""
    from training.model import count_model_params, head_param_count

    cfg = model.cfg
    arch = ArchSpec.from_config(cfg)
    tracked = set(model.updates) | set(model.masks)

    sites = []
    maskable = 0
    masked = 0
    dense_sites = []
    for name in model.site_names():
        if name not in tracked:
            continue
        w = model.params[f"{name}.weight"]
        mask = model.masks.get(name)
        masked_here = 0 if mask is None else mask.bits.size - mask.nonzero_count()
        maskable += w.size
        masked += masked_here
        upd = model.updates.get(name)
        if upd is not None:
            m, n = w.shape
            sites.append(SiteBudget(name, m, n, upd.rank, upd.card, masked_here / w.size))
            full_m, full_n = site_dims(name.rsplit(".", 1)[1], cfg.d_model, cfg.d_model)
            dense_sites.append((full_m, full_n, upd.rank, upd.card))

    kept_heads = model.heads_per_layer()
    kept_ffn = model.ffn_units_per_layer()
    structured = kept_heads != [cfg.n_heads] * cfg.n_layers or kept_ffn != [cfg.d_ff] * cfg.n_layers
    extras = head_param_count(cfg, kept_heads, train_gates) if count_head_params else 0
    total = count_model_params(cfg, kept_heads, kept_ffn)

    mask_state = MaskState.structured(kept_heads, kept_ffn) if structured else MaskState.dense()
    current_sites = [(s.m, s.n, s.r, s.card) for s in sites]
    flops_dense = estimate_flops(arch, cfg.seq_len) + adapter_flops(dense_sites, cfg.seq_len)
    flops_current = (
        estimate_flops(arch, cfg.seq_len, mask_state=mask_state)
        + adapter_flops(current_sites, cfg.seq_len)
    )
    return _assemble(sites, extras, total, maskable, masked, flops_dense, flops_current)
