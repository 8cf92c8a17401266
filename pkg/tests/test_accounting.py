"""Tests for parameter counts, FLOPs estimates and histograms."""

import numpy as np
import pytest

from core.accounting import (
    AdapterState,
    ArchSpec,
    MaskState,
    budget_from_config,
    budget_from_model,
    count_trainable,
    delta_histogram,
    estimate_flops,
    rank_budget_bound,
)
from core.exceptions import ParameterError, ShapeError
from training.model import ToyTransformer
from training.pipeline import attach_updates, mask_sites
from training.pruning import apply_masks, magnitude_mask, merged_matrices, prune_heads
from utils.models import PipelineConfig

BERT_BASE = ArchSpec(n_layers=12, d_model=768, n_heads=12, d_ff=3072)


def bert_config(rank, n_keep, targets, **pruning):
    """A BERT-base shaped pipeline config."""
    return PipelineConfig.from_dict({
        "model": {"vocab_size": 8, "seq_len": 128, "d_model": 768, "n_heads": 12,
                  "d_ff": 3072, "n_layers": 12, "n_classes": 2},
        "adapter": {"rank": rank, "n_keep": n_keep, "targets": targets},
        "pruning": pruning or {"mode": "unstructured", "sparsity": 0.0},
    })


class TestCountTrainable:
    """Tests for count_trainable and its configs."""

    def test_q_v_rank16_n128(self):
        """Test 24 sites of r=16 with 128 sparse entries."""
        sites = [(768, 768, 16, 128)] * 24
        assert count_trainable(sites) == 592896

    @pytest.mark.parametrize("rank,n_keep,expected", [
        (8, 0, 589824),
        (4, 0, 294912),
        (4, 64, 297984),
    ])
    def test_all_projections(self, rank, n_keep, expected):
        """Test every projection of 12 layers."""
        budget = budget_from_config(bert_config(rank, n_keep, ["q", "k", "v", "o"]))
        assert budget.trainable_params == expected
        assert len(budget.sites) == 48

    def test_config_q_v(self):
        """Test the q,v budget through a config."""
        assert budget_from_config(bert_config(16, 128, ["q", "v"])).trainable_params == 592896

    def test_extras(self):
        """Test that extras are added once."""
        assert count_trainable([(2, 3, 1, 0)], extras=7) == 12


class TestRankBudgetBound:
    """Tests for rank_budget_bound."""

    def test_square(self):
        """Test a square matrix without sparse entries."""
        assert rank_budget_bound(768, 768, 0) == 384.0

    def test_sparse_entries_lower_bound(self):
        """Test that sparse entries lower the bound."""
        assert rank_budget_bound(4, 4, 8) == 1.0


class TestEstimateFlops:
    """Tests for estimate_flops."""

    def test_linear_in_sequences(self):
        """Test that FLOPs scale with batch and dataset size."""
        one = estimate_flops(BERT_BASE, 128)
        assert estimate_flops(BERT_BASE, 128, batch=4) == 4 * one
        assert estimate_flops(BERT_BASE, 128, batch=2, dataset_size=3) == 6 * one

    def test_grows_with_sequence(self):
        """Test monotonicity in sequence length."""
        assert estimate_flops(BERT_BASE, 64) < estimate_flops(BERT_BASE, 128)

    def test_unstructured_not_credited(self):
        """Test that unstructured masks do not lower the estimate."""
        dense = estimate_flops(BERT_BASE, 128)
        assert estimate_flops(BERT_BASE, 128, mask_state=MaskState.unstructured(0.5)) == dense

    def test_adapter_adds_cost(self):
        """Test that updates add FLOPs."""
        adapters = AdapterState(16, 0, ("q", "v"))
        assert estimate_flops(BERT_BASE, 128, adapter_state=adapters) > estimate_flops(BERT_BASE, 128)

    def test_structured_shrinks(self):
        """Test that removing heads lowers the estimate."""
        pruned = MaskState.structured([9] * 12, [3072] * 12)
        assert estimate_flops(BERT_BASE, 128, mask_state=pruned) < estimate_flops(BERT_BASE, 128)

    @pytest.mark.parametrize("heads,expected", [(9, 34.61), (8, 37.38)])
    def test_structured_reduction(self, heads, expected):
        """Test the relative saving of pruned heads plus 1844 FFN units with r=16 updates on q,v."""
        adapters = AdapterState(16, 0, ("q", "v"))
        dense = estimate_flops(BERT_BASE, 128, adapter_state=adapters)
        pruned = estimate_flops(
            BERT_BASE, 128,
            mask_state=MaskState.structured([heads] * 12, [1844] * 12),
            adapter_state=adapters,
        )
        reduction = 100.0 * (1.0 - pruned / dense)
        assert abs(reduction - expected) <= 10.0

    def test_structured_needs_every_layer(self):
        """Test that kept counts must cover every layer."""
        with pytest.raises(ParameterError):
            estimate_flops(BERT_BASE, 128, mask_state=MaskState.structured([9], [3072]))


class TestDeltaHistogram:
    """Tests for delta_histogram."""

    def test_counts(self):
        """Test binning with out-of-range deltas clamped."""
        before = np.zeros((2, 2))
        after = np.array([[0.1, -0.1], [0.5, 2.0]])
        hist = delta_histogram(before, after, 2, (-1.0, 1.0))
        assert hist.edges == [-1.0, 0.0, 1.0]
        assert hist.counts == [1, 3]

    def test_counts_sum_to_entries(self):
        """Test that every entry is counted once."""
        rng = np.random.default_rng(0)
        before = rng.standard_normal((10, 10))
        after = before + rng.standard_normal((10, 10))
        hist = delta_histogram(before, after, 7, (-0.5, 0.5))
        assert sum(hist.counts) == 100
        assert len(hist.edges) == 8

    def test_unchanged_weights(self):
        """Test that identical matrices fall into the bin holding zero."""
        w = np.ones((3, 3))
        hist = delta_histogram(w, w, 4, (-1.0, 1.0))
        assert hist.counts == [0, 0, 9, 0]

    def test_shape_mismatch(self):
        """Test that shapes must agree."""
        with pytest.raises(ShapeError):
            delta_histogram(np.zeros((2, 2)), np.zeros((2, 3)), 2, (-1.0, 1.0))

    def test_bad_bins_or_range(self):
        """Test that bins and range are checked."""
        with pytest.raises(ParameterError):
            delta_histogram(np.zeros((1, 1)), np.zeros((1, 1)), 0, (-1.0, 1.0))
        with pytest.raises(ParameterError):
            delta_histogram(np.zeros((1, 1)), np.zeros((1, 1)), 2, (1.0, 1.0))


class TestBudgets:
    """Tests for budget reports built from configs and models."""

    def test_unstructured_model_matches_config(self, tiny_config):
        """Test that an instantiated unstructured model has the configured budget."""
        model = ToyTransformer.init(tiny_config.model, 0)
        attach_updates(model, tiny_config)
        masks = magnitude_mask(merged_matrices(model, mask_sites(tiny_config)), tiny_config.pruning.sparsity)
        apply_masks(model, masks)
        from_model = budget_from_model(model)
        from_config = budget_from_config(tiny_config)
        assert from_model.trainable_params == from_config.trainable_params
        assert from_model.pretrained_sparsity == pytest.approx(0.5)
        assert from_config.pretrained_sparsity == pytest.approx(0.5)
        assert from_model.flops_dense == from_model.flops_current

    def test_structured_model_matches_config(self, tiny_config):
        """Test that a head-pruned model has the configured budget."""
        tiny_config.pruning.mode = "structured"
        tiny_config.pruning.sparsity = 0.5
        tiny_config.count_head_params = True
        # head slicing drops support entries of removed heads; the config assumes N per site
        tiny_config.adapter.n_keep = 0
        model = ToyTransformer.init(tiny_config.model, 0)
        attach_updates(model, tiny_config)
        model = prune_heads(model, 0.5)
        from_model = budget_from_model(model, count_head_params=True, train_gates=True)
        from_config = budget_from_config(tiny_config)
        assert from_model.trainable_params == from_config.trainable_params
        assert from_model.total_params == from_config.total_params
        assert from_model.flops_current == from_config.flops_current
        assert from_model.flops_current < from_model.flops_dense

    def test_report_frame(self, tiny_config):
        """Test the per-site table."""
        frame = budget_from_config(tiny_config).to_frame()
        assert list(frame.columns) == ["name", "m", "n", "r", "card", "masked_fraction"]
        assert len(frame) == 4
