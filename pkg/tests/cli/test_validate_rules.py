"""Tests for the rules-file validation script."""
import os
import shutil
import tempfile

import pytest

from app.cli.validate_rules import DEFAULT_RULES_DIR, main, validate_directory, validate_single_file


@pytest.fixture
def temp_dir():
    """Create a temporary directory for rules files."""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


def _write(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


class TestValidateRules:
    """Tests for validating single files and directories."""

    def test_builtin_rules_are_valid(self, capsys):
        """Test that every shipped rules file validates."""
        results = validate_directory(DEFAULT_RULES_DIR)
        assert sorted(results["valid"]) == ["seizure.rules", "sleep.rules"]
        assert results["invalid"] == []
        out = capsys.readouterr().out
        assert "Impossible transitions: 8" in out
        assert "Impossible transitions: 4" in out

    def test_valid_file(self, temp_dir, capsys):
        """Test the report for a well-formed file."""
        path = _write(temp_dir, "ok.rules", "labels: A, B\nA !> B\n")
        rules = validate_single_file(path)
        assert rules is not None and rules.K == 2
        out = capsys.readouterr().out
        assert "✅" in out and "Labels: A, B" in out

    def test_invalid_file(self, temp_dir, capsys):
        """Test that parse errors are reported with their line."""
        path = _write(temp_dir, "bad.rules", "labels: A, B\nA !> Z\n")
        assert validate_single_file(path) is None
        out = capsys.readouterr().out
        assert "❌" in out and "line 2" in out

    def test_missing_file(self, temp_dir):
        """Test that a missing file is invalid."""
        assert validate_single_file(os.path.join(temp_dir, "none.rules")) is None

    def test_binary_file(self, temp_dir, capsys):
        """Test that a file that is not UTF-8 text is reported invalid instead of crashing."""
        path = os.path.join(temp_dir, "binary.rules")
        with open(path, "wb") as f:
            f.write(b"\xff\xfe\x00labels")
        assert validate_single_file(path) is None
        assert "not UTF-8" in capsys.readouterr().out

    def test_directory_mixes_results(self, temp_dir):
        """Test that only .rules files are considered."""
        _write(temp_dir, "ok.rules", "labels: A, B\n")
        _write(temp_dir, "bad.rules", "A !> B\n")
        _write(temp_dir, "notes.txt", "ignored")
        results = validate_directory(temp_dir)
        assert results == {"valid": ["ok.rules"], "invalid": ["bad.rules"]}

    def test_main_exit_codes(self, temp_dir):
        """Test the exit codes of the script."""
        ok = _write(temp_dir, "ok.rules", "labels: A, B\n")
        assert main([ok]) == 0
        assert main([temp_dir]) == 0
        _write(temp_dir, "bad.rules", "labels: A\nA !> B\n")
        assert main([temp_dir]) == 1
        assert main([os.path.join(temp_dir, "missing")]) == 1
