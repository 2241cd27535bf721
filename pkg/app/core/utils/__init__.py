"""Utility functions and helpers for the rule layer."""
