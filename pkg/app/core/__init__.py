"""Core components of the rule layer."""
