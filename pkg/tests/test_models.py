"""Tests for data models."""

import pytest

from core.exceptions import ConfigurationError, ParameterError
from utils.models import (
    AdapterConfig,
    BudgetReport,
    Histogram,
    PipelineConfig,
    SiteBudget,
    StageReport,
    SweepPoint,
    ToyTransformerConfig,
)


class TestToyTransformerConfig:
    """Test ToyTransformerConfig."""

    def test_defaults(self):
        """Test default shape."""
        cfg = ToyTransformerConfig()
        assert cfg.head_dim == 8

    def test_heads_must_divide(self):
        """Test that d_model must be divisible by n_heads."""
        with pytest.raises(ParameterError):
            ToyTransformerConfig(d_model=10, n_heads=4)

    def test_positive(self):
        """Test that sizes must be positive integers."""
        with pytest.raises(ParameterError):
            ToyTransformerConfig(n_layers=0)


class TestAdapterConfig:
    """Test AdapterConfig."""

    def test_solver_defaults(self):
        """Test that the solver rank and card fall back to r and N."""
        cfg = AdapterConfig(rank=3, n_keep=9)
        assert cfg.solver_rank == 3
        assert cfg.solver_card == 9
        cfg = AdapterConfig(rank=3, n_keep=9, decomposition_rank=5, decomposition_card=20)
        assert cfg.solver_rank == 5
        assert cfg.solver_card == 20

    def test_unknown_method(self):
        """Test that unknown support methods are rejected."""
        with pytest.raises(ConfigurationError):
            AdapterConfig(method="svd")

    def test_unknown_target(self):
        """Test that targets must name attention projections."""
        with pytest.raises(ConfigurationError):
            AdapterConfig(targets=["q", "ffn"])


class TestPipelineConfig:
    """Test PipelineConfig."""

    def test_round_trip(self, tiny_config):
        """Test converting to dict and back."""
        assert PipelineConfig.from_dict(tiny_config.to_dict()) == tiny_config

    def test_partial_sections(self):
        """Test that missing sections take defaults."""
        cfg = PipelineConfig.from_dict({"adapter": {"rank": 2}})
        assert cfg.adapter.rank == 2
        assert cfg.model == ToyTransformerConfig()
        assert cfg.pruning.mode == "unstructured"

    def test_unknown_top_level_key(self):
        """Test that unknown sections are rejected."""
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict({"trainer": {}})

    def test_unknown_section_key(self):
        """Test that unknown keys inside a section are rejected."""
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict({"adapter": {"rnak": 2}})

    def test_bad_enum(self):
        """Test that bad enum values are configuration errors."""
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict({"pruning": {"mode": "channel"}})
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict({"task": {"kind": "parity"}})

    def test_bad_model_shape(self):
        """Test that model shape errors surface as configuration errors."""
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict({"model": {"d_model": 10, "n_heads": 4}})

    def test_section_must_be_object(self):
        """Test that sections must be JSON objects."""
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict({"optimizer": [1, 2]})
        with pytest.raises(ConfigurationError):
            PipelineConfig.from_dict([])

    def test_betas_serialized_as_list(self):
        """Test that betas survive JSON as a list."""
        data = PipelineConfig().to_dict()
        assert data["optimizer"]["betas"] == [0.9, 0.999]


class TestStageReport:
    """Test StageReport."""

    def test_round_trip(self):
        """Test converting to dict and back."""
        report = StageReport(stage="I", losses=[0.7, 0.5], eval_accuracy=0.8, steps=16,
                             trainable_params=120, heads_per_layer=[2, 2], notes={"mode": "structured"})
        assert StageReport.from_dict(report.to_dict()) == report

    def test_defaults(self):
        """Test an empty report."""
        data = StageReport(stage="II").to_dict()
        assert data["losses"] == []
        assert data["steps"] == 0


class TestBudgetReport:
    """Test BudgetReport."""

    @pytest.fixture
    def report(self):
        """A two-site budget."""
        return BudgetReport(
            trainable_params=100, total_params=1000, pretrained_sparsity=0.5, nonzero_weights=900,
            flops_dense=50, flops_current=40, flops_convention="test", extra_params=4,
            sites=[SiteBudget("a", 4, 4, 2, 0, 0.5), SiteBudget("b", 4, 4, 2, 16, 0.5)],
        )

    def test_round_trip(self, report):
        """Test converting to dict and back."""
        assert BudgetReport.from_dict(report.to_dict()) == report

    def test_to_frame(self, report):
        """Test the per-site table."""
        frame = report.to_frame()
        assert frame["card"].tolist() == [0, 16]
        assert frame["name"].tolist() == ["a", "b"]


class TestHistogram:
    """Test Histogram."""

    def test_to_frame(self):
        """Test bin edges and centres."""
        frame = Histogram(edges=[-1.0, 0.0, 1.0], counts=[3, 5]).to_frame()
        assert frame["center"].tolist() == [-0.5, 0.5]
        assert frame["count"].tolist() == [3, 5]

    def test_round_trip(self):
        """Test converting to dict and back."""
        hist = Histogram(edges=[0.0, 1.0], counts=[2])
        assert Histogram.from_dict(hist.to_dict()) == hist


class TestSweepPoint:
    """Test SweepPoint."""

    def test_to_dict(self):
        """Test plain types in the dict."""
        data = SweepPoint(0.5, 0.9, 0.8, 100, 2000).to_dict()
        assert data == {"sparsity": 0.5, "dsee_accuracy": 0.9, "baseline_accuracy": 0.8,
                        "dsee_trainable": 100, "baseline_trainable": 2000}
