"""Test package for the rule layer."""
