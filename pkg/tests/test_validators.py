"""Tests for validators."""

import pytest

from core.exceptions import ConfigurationError, ParameterError
from utils.validators import parse_levels, validate_fraction, validate_pipeline_config, validate_tensor_name


class TestValidateFraction:
    """Test fraction validation."""

    def test_valid(self):
        """Test values inside [0, 1)."""
        assert validate_fraction(0, "s") == 0.0
        assert validate_fraction(0.99, "s") == 0.99

    def test_one(self):
        """Test that 1 is only accepted when allowed."""
        with pytest.raises(ParameterError):
            validate_fraction(1.0, "s")
        assert validate_fraction(1.0, "s", allow_one=True) == 1.0

    def test_out_of_range(self):
        """Test negative values and NaN."""
        with pytest.raises(ParameterError):
            validate_fraction(-0.1, "s")
        with pytest.raises(ParameterError):
            validate_fraction(float("nan"), "s")


class TestValidateTensorName:
    """Test tensor name validation."""

    def test_valid_names(self):
        """Test ordinary names."""
        assert validate_tensor_name("param/layers.0.attn.q.weight")
        assert validate_tensor_name("é" * 128)

    def test_invalid_names(self):
        """Test empty, overlong and non-string names."""
        assert not validate_tensor_name("")
        assert not validate_tensor_name("é" * 129)
        assert not validate_tensor_name(None)


class TestParseLevels:
    """Test sparsity level parsing."""

    def test_valid(self):
        """Test a comma-separated list."""
        assert parse_levels("0.1, 0.5,0.9") == [0.1, 0.5, 0.9]
        assert parse_levels("0") == [0.0]

    def test_invalid(self):
        """Test malformed and out-of-range lists."""
        assert parse_levels("") is None
        assert parse_levels("0.5,abc") is None
        assert parse_levels("1.0") is None
        assert parse_levels("-0.1") is None


class TestValidatePipelineConfig:
    """Test cross-field config validation."""

    def test_tiny_config_valid(self, tiny_config):
        """Test that the shared tiny config passes."""
        validate_pipeline_config(tiny_config)

    def test_sparsity_one(self, tiny_config):
        """Test that sparsity 1 is rejected."""
        tiny_config.pruning.sparsity = 1.0
        with pytest.raises(ConfigurationError):
            validate_pipeline_config(tiny_config)

    def test_rank_too_large(self, tiny_config):
        """Test that the rank must fit the attention matrices."""
        tiny_config.adapter.rank = 9
        with pytest.raises(ConfigurationError):
            validate_pipeline_config(tiny_config)

    def test_n_keep_too_large(self, tiny_config):
        """Test that N cannot exceed the matrix size."""
        tiny_config.adapter.n_keep = 65
        with pytest.raises(ConfigurationError):
            validate_pipeline_config(tiny_config)

    def test_zero_epochs(self, tiny_config):
        """Test that each tuning stage needs an epoch."""
        tiny_config.optimizer.epochs_stage3 = 0
        with pytest.raises(ConfigurationError):
            validate_pipeline_config(tiny_config)

    def test_negative_lambda(self, tiny_config):
        """Test that the gate penalty must be non-negative."""
        tiny_config.pruning.lambda_l1 = -1.0
        with pytest.raises(ConfigurationError):
            validate_pipeline_config(tiny_config)

    def test_key_position(self, tiny_config):
        """Test that the key position must index the sequence."""
        tiny_config.task.key_position = 4
        with pytest.raises(ConfigurationError):
            validate_pipeline_config(tiny_config)

    def test_rank_above_saving_bound_warns(self, tiny_config, caplog):
        """Test that a rank past the parameter-saving bound only warns."""
        tiny_config.adapter.rank = 6
        validate_pipeline_config(tiny_config)
        assert "parameter-saving bound" in caplog.text
