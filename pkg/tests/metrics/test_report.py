"""Tests for tab-separated report files."""
import os
import shutil
import tempfile

import numpy as np
import pytest

from app import __version__
from app.core.label_rules import builtin_rules
from app.core.mdp_env import RewardSpec
from app.core.rule_layer import RuleLayer
from app.core.schema import SynthConfig, TrainConfig
from app.core.trainer import EpochStats, evaluate_dataset
from app.data.synth import generate_dataset
from app.metrics.report import (
    CATEGORY_COLUMNS,
    PER_CLASS_COLUMNS,
    STATS_COLUMNS,
    SUMMARY_COLUMNS,
    read_table,
    report_metadata,
    write_report,
    write_stats,
    write_table,
)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for report files."""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def evaluation():
    """Greedy evaluation of an untrained layer on a small held-out set."""
    rules = builtin_rules("seizure")
    _, heldout = generate_dataset(SynthConfig(rules="seizure", M=3, T=10, n_train=1, n_test=4, seed=3), rules)
    layer = RuleLayer.create(rules.alphabet, heldout.M, TrainConfig(seed=0, policy_hidden=4, baseline_hidden=4))
    return evaluate_dataset(layer, heldout, RewardSpec("full", rules)), rules


class TestTables:
    """Tests for writing and reading tables."""

    def test_numbers_survive_exactly(self, temp_dir):
        """Test that floats, ints and strings come back unchanged."""
        path = os.path.join(temp_dir, "t.tsv")
        rows = [{"a": 0.1 + 0.2, "b": 3, "c": "x"}, {"a": 1e-17, "b": -1, "c": ""}]
        write_table(path, ["a", "b", "c"], rows, {"seed": 4})
        table = read_table(path)
        assert table.columns == ["a", "b", "c"]
        assert table.rows == rows
        assert table.metadata == {"seed": "4"}
        assert table.column("b") == [3, -1]

    def test_missing_header(self, temp_dir):
        """Test that a file with only metadata is rejected."""
        path = os.path.join(temp_dir, "t.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("# seed: 1\n")
        with pytest.raises(ValueError):
            read_table(path)

    def test_ragged_row(self, temp_dir):
        """Test that a row with the wrong cell count is rejected."""
        path = os.path.join(temp_dir, "t.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("a\tb\n1\n")
        with pytest.raises(ValueError, match="line 2"):
            read_table(path)

    def test_metadata(self):
        """Test the fields stamped into every report."""
        metadata = report_metadata("abc", 7, split="test")
        assert metadata == {
            "config_hash": "abc", "seed": 7, "code_version": __version__,
            "nmi_normalization": "geometric", "split": "test",
        }


class TestStats:
    """Tests for per-epoch stats files."""

    def test_columns_and_order(self, temp_dir):
        """Test that stats rows follow the fixed column order."""
        stats = [
            EpochStats(epoch=e, mean_return=-1.5 + e, accuracy=0.5, violation_rate=0.25,
                       policy_loss=0.1, baseline_loss=2.0, penalty_term=0.3, lr=1e-3 * 0.99 ** e)
            for e in range(3)
        ]
        path = os.path.join(temp_dir, "stats.tsv")
        write_stats(stats, path, {"seed": 1})
        table = read_table(path)
        assert table.columns == STATS_COLUMNS
        assert table.column("epoch") == [0, 1, 2]
        assert table.column("lr") == [s.lr for s in stats]


class TestWriteReport:
    """Tests for evaluation reports."""

    def test_report_files(self, temp_dir, evaluation):
        """Test that every report file is written with its columns and metadata."""
        result, rules = evaluation
        paths = write_report(result, rules.alphabet.names, "full", temp_dir, report_metadata("h", 0))
        assert set(paths) == {"per_class", "categories", "summary", "text"}
        assert all(os.path.exists(p) for p in paths.values())

        per_class = read_table(paths["per_class"])
        assert per_class.columns == PER_CLASS_COLUMNS
        assert len(per_class.rows) == 2 * rules.K
        assert per_class.metadata["config_hash"] == "h"

        categories = read_table(paths["categories"])
        assert categories.columns == CATEGORY_COLUMNS
        assert sum(categories.column("count")) == result.categories.total
        assert sum(r["reward"] * r["count"] for r in categories.rows) == result.categories.total_reward

    def test_summary_values(self, temp_dir, evaluation):
        """Test that summary rows match the evaluation."""
        result, rules = evaluation
        paths = write_report(result, rules.alphabet.names, "full", temp_dir, report_metadata("h", 0))
        table = read_table(paths["summary"])
        assert table.columns == SUMMARY_COLUMNS
        summary = {row["metric"]: row for row in table.rows}
        assert summary["accuracy"]["predictor"] == result.pred_accuracy
        assert summary["accuracy"]["corrected"] == result.corrected_accuracy
        assert summary["mean_return"]["corrected"] == result.mean_return
        assert summary["violations"]["corrected"] == result.corrected_violations[0]
        assert summary["pairs"]["predictor"] == 4 * 9
        assert summary["mean_return"]["predictor"] == ""

    def test_text_summary(self, temp_dir, evaluation):
        """Test that the plain-text summary lists metrics and categories."""
        result, rules = evaluation
        paths = write_report(result, rules.alphabet.names, "full", temp_dir, report_metadata("h", 0))
        with open(paths["text"], "r", encoding="utf-8") as f:
            text = f.read()
        assert "config_hash: h" in text
        assert "violation_rate" in text
        assert "reassign_wrong_impossible" in text
        assert np.isfinite(result.mean_return)
