"""Tests for the configuration module."""

import json
import os
from unittest.mock import patch

import pytest

from overlapgan.config import (
    DatasetSpec,
    Settings,
    TrainConfig,
    config_hash,
    load_config,
    load_settings,
)
from overlapgan.errors import ConfigError


@pytest.fixture
def config_file(tmp_path):
    def write(data) -> str:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(data))
        return str(path)

    return write


class TestSettings:
    """Test the Settings dataclass validation."""

    def test_valid_settings(self):
        """Default settings should pass validation."""
        errors = Settings().validate()
        assert errors == [], f"Expected no errors, got: {errors}"

    def test_invalid_threads(self):
        """Fewer than one worker should error."""
        errors = Settings(threads=0).validate()
        assert any("OVERLAP_GAN_THREADS" in err for err in errors)

    def test_empty_output_dir(self):
        errors = Settings(output_dir="").validate()
        assert any("OVERLAP_GAN_OUTPUT_DIR" in err for err in errors)


class TestLoadSettings:
    """Test loading settings from environment."""

    @patch.dict(os.environ, {
        "OVERLAP_GAN_THREADS": "4",
        "OVERLAP_GAN_OUTPUT_DIR": "/tmp/runs",
        "OVERLAP_GAN_PROGRESS": "0",
    })
    def test_load_from_environment(self):
        """Settings should load from environment variables."""
        settings = load_settings()
        assert settings.threads == 4
        assert settings.output_dir == "/tmp/runs"
        assert settings.progress is False

    @patch.dict(os.environ, {"OVERLAP_GAN_THREADS": "many"})
    def test_malformed_threads(self):
        with pytest.raises(ConfigError, match="Malformed"):
            load_settings()

    @patch.dict(os.environ, {"OVERLAP_GAN_THREADS": "0"})
    def test_out_of_range_threads(self):
        with pytest.raises(ConfigError) as exc:
            load_settings()
        assert exc.value.errors


class TestTrainConfig:
    """Hyperparameter validation and defaults."""

    def test_defaults_echo_toy_settings(self):
        config = TrainConfig()
        assert config.variant == "CP-GAN" and config.dataset.kind == "toy"
        assert (config.lambda_gp, config.n_d, config.adam_alpha) == (0.1, 5, 1e-4)
        assert (config.adam_beta1, config.adam_beta2) == (0.5, 0.9)
        assert config.d_batch_size == config.g_batch_size == 256
        assert (config.lambda_r, config.lambda_g) == (1.0, 1.0)
        assert config.total_iters == 100_000
        assert config.validate() == []

    @pytest.mark.parametrize("changes, fragment", [
        ({"n_d": 0}, "n_d"),
        ({"lambda_g": -0.1}, "lambda_g"),
        ({"kl_cp_start_iter": 11, "total_iters": 10}, "kl_cp_start_iter"),
        ({"variant": "ACGAN"}, "variant"),
        ({"k_shared": 5}, "k_shared"),
        ({"dropout_rates": [0.2, 0.5]}, "dropout_rates"),
        ({"gan_mode": "hinge"}, "gan_mode"),
    ])
    def test_invalid_values(self, changes, fragment):
        errors = TrainConfig(**changes).validate()
        assert any(fragment in err for err in errors), errors

    @pytest.mark.parametrize("separation, sigma", [(4.0, 1.0), (6.0, 1.0), (0.0, 1.0), (2.0, 0.5)])
    def test_toy_separation_bounded_by_four_sigma(self, separation, sigma):
        dataset = DatasetSpec(kind="toy", separation=separation, sigma=sigma)
        assert any("separation" in err for err in dataset.validate())
        assert any("separation" in err for err in TrainConfig(dataset=dataset).validate())

    def test_toy_separation_just_inside_bound(self):
        assert DatasetSpec(kind="toy", separation=3.9, sigma=1.0).validate() == []

    def test_resolved_intervals(self):
        config = TrainConfig(total_iters=200)
        assert config.resolved_eval_interval == 4
        assert config.resolved_checkpoint_interval == 20
        assert config.resolved_pgan_iters == 200
        assert TrainConfig(total_iters=0).resolved_eval_interval == 1

    def test_dict_round_trip(self):
        config = TrainConfig(variant="AC-GAN", dataset=DatasetSpec(kind="ring"), seed=3)
        assert TrainConfig.from_dict(config.to_dict()) == config


class TestLoadConfig:
    def test_missing_file_names_path(self, tmp_path):
        path = tmp_path / "absent.json"
        with pytest.raises(ConfigError, match="absent.json"):
            load_config(path)

    def test_missing_key_named(self, config_file):
        with pytest.raises(ConfigError, match="Missing config key: dataset"):
            load_config(config_file({"variant": "CP-GAN"}))

    def test_unknown_key(self, config_file):
        with pytest.raises(ConfigError, match="lambda_x"):
            load_config(config_file({"variant": "CP-GAN", "dataset": {"kind": "toy"}, "lambda_x": 1}))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)

    def test_seed_override(self, config_file):
        config = load_config(config_file({"variant": "AC-GAN", "dataset": {"kind": "toy"}, "seed": 1}), seed=9)
        assert config.seed == 9
        assert config.variant == "AC-GAN"

    def test_custom_dataset_needs_c(self, config_file):
        with pytest.raises(ConfigError, match="dataset.c"):
            load_config(config_file({"variant": "CP-GAN", "dataset": {"kind": "custom", "means": [[0, 0]]}}))


class TestConfigHash:
    def test_stable_and_stage_specific(self):
        config = TrainConfig(seed=1)
        assert config_hash(config, "train") == config_hash(TrainConfig(seed=1), "train")
        assert config_hash(config, "train") != config_hash(config, "eval")
        assert config_hash(config, "train") != config_hash(TrainConfig(seed=2), "train")
