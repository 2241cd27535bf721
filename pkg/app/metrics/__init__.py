"""Evaluation metrics and report files."""
