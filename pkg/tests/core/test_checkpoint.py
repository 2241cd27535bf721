"""Tests for checkpoint persistence."""
import json
import os
import shutil
import tempfile

import numpy as np
import pytest

from app.core.checkpoint import (
    CHECKPOINT_FORMAT,
    Checkpoint,
    checkpoint_from_dict,
    checkpoint_to_dict,
    load_checkpoint,
    save_checkpoint,
)
from app.core.errors import ConfigError
from app.core.label_rules import builtin_rules
from app.core.schema import SynthConfig, TrainConfig
from app.core.trainer import train
from app.data.synth import generate_dataset


@pytest.fixture
def temp_dir():
    """Create a temporary directory for checkpoint files."""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def trained():
    """A briefly trained rule layer with its optimizer states."""
    rules = builtin_rules("seizure")
    train_set, heldout = generate_dataset(SynthConfig(rules="seizure", M=4, T=10, n_train=4, n_test=2, seed=0), rules)
    cfg = TrainConfig(epochs=1, seed=0, policy_hidden=6, baseline_hidden=6, maintain_warmup_epochs=0)
    result = train(train_set, cfg, rules)
    checkpoint = Checkpoint(
        layer=result.layer,
        policy_adam=result.policy_adam,
        baseline_adam=result.baseline_adam,
        epochs_trained=1,
        config_hash="abc123",
    )
    return checkpoint, heldout


class TestCheckpoint:
    """Tests for saving and loading checkpoints."""

    def test_round_trip_is_bit_exact(self, temp_dir, trained):
        """Test that a loaded checkpoint restores parameters and optimizer states bit for bit."""
        checkpoint, _ = trained
        path = os.path.join(temp_dir, "ckpt", "rule_layer.json")
        save_checkpoint(checkpoint, path)
        loaded = load_checkpoint(path)

        assert loaded.layer.alphabet == checkpoint.layer.alphabet
        assert loaded.layer.M == checkpoint.layer.M
        assert loaded.layer.eta == checkpoint.layer.eta
        assert loaded.layer.policy.same_as(checkpoint.layer.policy)
        assert loaded.layer.baseline.same_as(checkpoint.layer.baseline)
        assert loaded.policy_adam.step == checkpoint.policy_adam.step
        assert loaded.policy_adam.m.same_as(checkpoint.policy_adam.m)
        assert loaded.baseline_adam.v.same_as(checkpoint.baseline_adam.v)
        assert loaded.epochs_trained == 1
        assert loaded.config_hash == "abc123"

    def test_loaded_layer_corrects_identically(self, temp_dir, trained):
        """Test that a reloaded layer produces the same corrections."""
        checkpoint, heldout = trained
        path = os.path.join(temp_dir, "rule_layer.json")
        save_checkpoint(checkpoint, path)
        loaded = load_checkpoint(path)
        for traj in heldout:
            np.testing.assert_array_equal(loaded.layer.correct(traj), checkpoint.layer.correct(traj))

    def test_without_optimizer_state(self, trained):
        """Test that optimizer states are optional."""
        checkpoint, _ = trained
        data = checkpoint_to_dict(Checkpoint(layer=checkpoint.layer))
        restored = checkpoint_from_dict(data)
        assert restored.policy_adam is None
        assert restored.epochs_trained == 0

    def test_foreign_format(self, trained):
        """Test that a file of another format is rejected."""
        checkpoint, _ = trained
        data = checkpoint_to_dict(checkpoint)
        data["format"] = "something-else"
        with pytest.raises(ConfigError) as excinfo:
            checkpoint_from_dict(data)
        assert excinfo.value.field == "format"

    def test_unsupported_version(self, trained):
        """Test that a newer format version is rejected."""
        checkpoint, _ = trained
        data = checkpoint_to_dict(checkpoint)
        data["version"] = 99
        with pytest.raises(ConfigError):
            checkpoint_from_dict(data)

    def test_inconsistent_dims(self, trained):
        """Test that stored dims must agree with the arrays."""
        checkpoint, _ = trained
        data = checkpoint_to_dict(checkpoint)
        data["policy"]["dims"][1] += 1
        with pytest.raises(ConfigError):
            checkpoint_from_dict(data)

    def test_missing_file(self, temp_dir):
        """Test that a missing checkpoint is a config error."""
        with pytest.raises(ConfigError):
            load_checkpoint(os.path.join(temp_dir, "missing.json"))

    def test_invalid_json(self, temp_dir):
        """Test that a corrupt checkpoint is a config error."""
        path = os.path.join(temp_dir, "broken.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write("{not json")
        with pytest.raises(ConfigError):
            load_checkpoint(path)

    def test_format_marker_written(self, temp_dir, trained):
        """Test that saved files carry the format marker and version."""
        checkpoint, _ = trained
        path = os.path.join(temp_dir, "rule_layer.json")
        save_checkpoint(checkpoint, path)
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        assert data["format"] == CHECKPOINT_FORMAT
        assert data["version"] == 1
        assert data["alphabet"] == ["Normal", "Preictal", "Ictal"]
