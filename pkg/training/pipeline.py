"""Staged fine-tuning: dense pretraining, sparse-plus-low-rank tuning, pruning and recovery."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import PruningMode, TuningMode, resolve_seed
from core.accounting import budget_from_model
from core.adapter import UnstructuredMask, init_update
from core.exceptions import PipelineError, TrainingError
from core.linalg import Rng, derive_rng
from training.model import ToyTransformer
from training.optimizer import AdamWHyper, AdamWState, adamw_step, linear_decay
from training.pruning import apply_masks, magnitude_mask, merged_matrices, prune_ffn, prune_heads
from training.tasks import Dataset, iterate_batches, task_from_config
from utils.models import BudgetReport, PipelineConfig, StageReport, SweepPoint
from utils.validators import validate_pipeline_config

logger = logging.getLogger(__name__)


@dataclass
class DSEEResult:
    """Final model, its masks, per-stage reports and the budget."""
    model: ToyTransformer
    masks: Dict[str, UnstructuredMask]
    reports: List[StageReport]
    budget: BudgetReport


@dataclass
class BaselineResult:
    model: ToyTransformer
    masks: Dict[str, UnstructuredMask]
    reports: List[StageReport] = field(default_factory=list)


@dataclass
class _Schedule:
    base_lr: float
    epochs: int
    batch_size: int
    hp: AdamWHyper
    decay: bool = True


def _train(
    model: ToyTransformer,
    data: Dataset,
    schedule: _Schedule,
    rng: Rng,
    mode=TuningMode.ADAPTER,
    train_gates: bool = False,
    lambda_l1: float = 0.0,
    stop_at: Optional[Tuple[Dataset, float]] = None,
) -> Tuple[List[float], int]:
    """Run AdamW over the trainable views of `model`.

    Returns the mean loss of every epoch and the number of optimizer steps.
    With `stop_at=(eval_data, accuracy)` training ends after the first epoch
    reaching that accuracy.

    Raises:
        TrainingError: On a non-finite loss or gradient.
    """
    params = model.parameter_views(mode, train_gates)
    state = AdamWState()
    steps_per_epoch = math.ceil(len(data) / schedule.batch_size)
    total = schedule.epochs * steps_per_epoch
    losses: List[float] = []
    for epoch in range(schedule.epochs):
        epoch_losses = []
        for tokens, labels in iterate_batches(data, schedule.batch_size, rng):
            value, grads = model.backward(tokens, labels, lambda_l1, mode=mode, train_gates=train_gates)
            if not math.isfinite(value):
                raise TrainingError(f"Non-finite loss at step {state.step + 1}")
            grads.validate(params)
            lr = linear_decay(schedule.base_lr, state.step + 1, total) if schedule.decay else schedule.base_lr
            adamw_step(params, grads, state, schedule.hp, lr)
            epoch_losses.append(value)
        losses.append(float(np.mean(epoch_losses)))
        logger.debug(f"epoch {epoch + 1}/{schedule.epochs}: loss {losses[-1]:.5f}")
        if stop_at is not None:
            eval_data, target = stop_at
            if model.accuracy(eval_data.tokens, eval_data.labels) >= target:
                break
    return losses, state.step


def _stage_report(stage: str, model: ToyTransformer, eval_data: Dataset, losses, steps, trainable, sparsity=0.0, notes=None):
    return StageReport(
        stage=stage,
        losses=losses,
        eval_accuracy=model.accuracy(eval_data.tokens, eval_data.labels),
        steps=steps,
        trainable_params=trainable,
        pretrained_sparsity=sparsity,
        heads_per_layer=model.heads_per_layer(),
        notes=notes or {},
    )


def _mask_sparsity(masks: Dict[str, UnstructuredMask]) -> float:
    total = sum(m.bits.size for m in masks.values())
    if not total:
        return 0.0
    return 1.0 - sum(m.nonzero_count() for m in masks.values()) / total


def target_sites(cfg: PipelineConfig) -> List[str]:
    """Attention sites carrying an update, in layer order."""
    return [
        f"layers.{layer}.attn.{proj}"
        for layer in range(cfg.model.n_layers)
        for proj in cfg.adapter.targets
    ]


def mask_sites(cfg: PipelineConfig) -> List[str]:
    """Sites entering the global magnitude sort."""
    sites = target_sites(cfg)
    if cfg.pruning.mask_ffn:
        for layer in range(cfg.model.n_layers):
            sites.extend([f"layers.{layer}.ffn.in", f"layers.{layer}.ffn.out"])
    return sites


def pretrain_dense(cfg: PipelineConfig) -> Tuple[ToyTransformer, StageReport]:
    """Train every dense parameter on the source task.

    Stops at the first epoch whose eval accuracy reaches the target.

    Raises:
        PipelineError: If the final accuracy stays below the minimum.
    """
    validate_pipeline_config(cfg)
    model = ToyTransformer.init(cfg.model, resolve_seed(cfg.seeds.model))
    train, evaluate = task_from_config(cfg, cfg.task.pretrain_task_seed)
    pre = cfg.pretrain
    schedule = _Schedule(
        base_lr=pre.lr,
        epochs=pre.max_epochs,
        batch_size=pre.batch_size,
        hp=AdamWHyper(betas=tuple(cfg.optimizer.betas), eps=cfg.optimizer.eps, weight_decay=pre.weight_decay),
        decay=cfg.optimizer.linear_decay,
    )
    logger.info(f"Pretraining on {cfg.task.kind} (seed {cfg.task.pretrain_task_seed})")
    rng = derive_rng(resolve_seed(cfg.seeds.shuffle), "pretrain")
    losses, steps = _train(model, train, schedule, rng, mode=TuningMode.FULL,
                           stop_at=(evaluate, pre.target_accuracy))
    report = _stage_report("pretrain", model, evaluate, losses, steps, model.trainable_count(TuningMode.FULL))
    logger.info(f"Pretraining finished after {len(losses)} epochs: eval accuracy {report.eval_accuracy:.4f}")
    if report.eval_accuracy < pre.min_accuracy:
        raise PipelineError(
            f"Pretraining reached {report.eval_accuracy:.3f} eval accuracy, below {pre.min_accuracy}"
        )
    return model, report


def attach_updates(model: ToyTransformer, cfg: PipelineConfig) -> None:
    """Initialise an update on every target site from its pretrained weight."""
    adapter = cfg.adapter
    seed = resolve_seed(cfg.seeds.adapter)
    for site in target_sites(cfg):
        w = model.params[f"{site}.weight"]
        model.updates[site] = init_update(
            w,
            adapter.rank,
            adapter.n_keep,
            adapter.method,
            derive_rng(seed, site),
            init_std=adapter.init_std,
            decomposition_rank=adapter.solver_rank,
            card=adapter.solver_card,
            tol=adapter.solver_tol,
            max_iter=adapter.solver_max_iter,
            power_iters=adapter.power_iters,
        )


def _check_compatible(cfg: PipelineConfig, pretrained: ToyTransformer) -> None:
    if pretrained.cfg != cfg.model:
        raise PipelineError("Pretrained model does not match the configured architecture")
    if pretrained.updates:
        raise PipelineError("Pretrained model already carries updates")


def _check_budget(model: ToyTransformer, budget: BudgetReport) -> None:
    stored = sum(upd.num_trainable for upd in model.updates.values())
    counted = budget.trainable_params - budget.extra_params
    if stored != counted:
        raise PipelineError(f"Stored update sizes ({stored}) disagree with the budget ({counted})")


def run_dsee(cfg: PipelineConfig, pretrained: ToyTransformer) -> DSEEResult:
    """Sparse-plus-low-rank fine-tuning of a pretrained model.

    Stage I trains the updates and the classifier (plus gates in structured
    mode) with every pretrained weight frozen. Stage II masks by global
    magnitude, or removes heads and FFN units in structured mode. Stage III
    tunes the updates again with the pruned shapes fixed.

    Raises:
        PipelineError: If the pretrained model is incompatible or an invariant breaks.
    """
    validate_pipeline_config(cfg)
    _check_compatible(cfg, pretrained)
    structured = cfg.pruning.mode == PruningMode.STRUCTURED.value
    opt = cfg.optimizer
    hp = AdamWHyper.from_config(opt)
    shuffle_seed = resolve_seed(cfg.seeds.shuffle)
    train, evaluate = task_from_config(cfg, cfg.task.finetune_task_seed)

    model = pretrained.copy()
    attach_updates(model, cfg)
    logger.info(f"Attached {len(model.updates)} updates (r={cfg.adapter.rank}, N={cfg.adapter.n_keep})")

    checksum = model.dense_checksum()
    lambda_l1 = cfg.pruning.lambda_l1 if structured else 0.0
    losses, steps = _train(
        model, train, _Schedule(opt.lr_stage1, opt.epochs_stage1, opt.batch_size, hp, opt.linear_decay),
        derive_rng(shuffle_seed, "stage_I"), train_gates=structured, lambda_l1=lambda_l1,
    )
    if model.dense_checksum() != checksum:
        raise PipelineError("Stage I modified pretrained weights")
    stage1 = _stage_report("I", model, evaluate, losses, steps, model.trainable_count(train_gates=structured))
    logger.info(f"Stage I: eval accuracy {stage1.eval_accuracy:.4f}")

    masks: Dict[str, UnstructuredMask] = {}
    if structured:
        if cfg.pruning.sparsity == 0 and cfg.pruning.ffn_ratio == 0:
            logger.warning("Structured pruning ratio is 0; no heads or units are removed")
        model = prune_heads(model, cfg.pruning.sparsity)
        if cfg.pruning.ffn_ratio > 0:
            model = prune_ffn(model, cfg.pruning.ffn_ratio)
    else:
        if cfg.pruning.sparsity == 0:
            logger.warning("Sparsity is 0; stage II keeps every pretrained weight")
        merged = merged_matrices(model, mask_sites(cfg), cfg.pruning.mask_includes_sparse)
        masks = magnitude_mask(merged, cfg.pruning.sparsity)
        apply_masks(model, masks)
    sparsity = _mask_sparsity(masks)
    stage2 = _stage_report("II", model, evaluate, [], 0, model.trainable_count(), sparsity,
                           notes={"mode": cfg.pruning.mode})
    logger.info(f"Stage II: eval accuracy {stage2.eval_accuracy:.4f}, heads {stage2.heads_per_layer}")

    checksum = model.dense_checksum()
    losses, steps = _train(
        model, train, _Schedule(opt.lr_stage3, opt.epochs_stage3, opt.batch_size, hp, opt.linear_decay),
        derive_rng(shuffle_seed, "stage_III"),
    )
    if model.dense_checksum() != checksum:
        raise PipelineError("Stage III modified pretrained weights")
    stage3 = _stage_report("III", model, evaluate, losses, steps, model.trainable_count(), sparsity)
    logger.info(f"Stage III: eval accuracy {stage3.eval_accuracy:.4f}")

    budget = budget_from_model(model, cfg.count_head_params, train_gates=structured)
    _check_budget(model, budget)
    return DSEEResult(model=model, masks=masks, reports=[stage1, stage2, stage3], budget=budget)


def run_magnitude_baseline(cfg: PipelineConfig, pretrained: ToyTransformer) -> BaselineResult:
    """One-shot magnitude pruning that tunes the dense weights directly.

    Full fine-tune, global magnitude mask over the target sites, then full
    fine-tune again with the mask fixed.
    """
    validate_pipeline_config(cfg)
    _check_compatible(cfg, pretrained)
    opt = cfg.optimizer
    hp = AdamWHyper.from_config(opt)
    shuffle_seed = resolve_seed(cfg.seeds.shuffle)
    train, evaluate = task_from_config(cfg, cfg.task.finetune_task_seed)
    model = pretrained.copy()

    lr = cfg.pretrain.lr
    losses, steps = _train(model, train, _Schedule(lr, opt.epochs_stage1, opt.batch_size, hp, opt.linear_decay),
                           derive_rng(shuffle_seed, "baseline_I"), mode=TuningMode.FULL)
    stage1 = _stage_report("I", model, evaluate, losses, steps, model.trainable_count(TuningMode.FULL))

    masks = magnitude_mask(merged_matrices(model, mask_sites(cfg)), cfg.pruning.sparsity)
    apply_masks(model, masks)
    losses, steps = _train(model, train, _Schedule(lr, opt.epochs_stage3, opt.batch_size, hp, opt.linear_decay),
                           derive_rng(shuffle_seed, "baseline_III"), mode=TuningMode.FULL)
    stage3 = _stage_report("III", model, evaluate, losses, steps, model.trainable_count(TuningMode.FULL),
                           _mask_sparsity(masks))
    logger.info(f"Magnitude baseline: eval accuracy {stage3.eval_accuracy:.4f}")
    return BaselineResult(model=model, masks=masks, reports=[stage1, stage3])


def sweep_sparsity(cfg: PipelineConfig, pretrained: ToyTransformer, levels: Sequence[float]) -> List[SweepPoint]:
    """DSEE against the magnitude baseline at each unstructured sparsity level."""
    points = []
    for level in levels:
        level_cfg = PipelineConfig.from_dict(cfg.to_dict())
        level_cfg.pruning.mode = PruningMode.UNSTRUCTURED.value
        level_cfg.pruning.sparsity = float(level)
        logger.info(f"Sweep level {level}")
        dsee = run_dsee(level_cfg, pretrained)
        baseline = run_magnitude_baseline(level_cfg, pretrained)
        points.append(SweepPoint(
            sparsity=float(level),
            dsee_accuracy=dsee.reports[-1].eval_accuracy,
            baseline_accuracy=baseline.reports[-1].eval_accuracy,
            dsee_trainable=dsee.reports[-1].trainable_params,
            baseline_trainable=baseline.reports[-1].trainable_params,
        ))
    return points
