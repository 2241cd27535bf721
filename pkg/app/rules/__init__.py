"""Builtin rule files shipped with the package."""
