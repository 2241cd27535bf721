"""
Resolution of the run configuration.

Layers are merged in increasing precedence: model defaults, builtin profile,
JSON config file, dedicated command-line flags and `--set key=value` overrides.
"""
import copy
import json
import logging
import os
from typing import Any, Dict, Iterable, Optional

from app.core.errors import ConfigError
from app.core.schema import PROFILES, RunConfig, validate_run_config

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "RULE_LAYER_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge `override` into a copy of `base`."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Load a JSON config file.

    Raises:
        ConfigError: If the file is missing, is not valid JSON or is not an object
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="--config")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in config file {path}: {e}", field="--config")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object", field="--config")
    return data


def parse_override(item: str) -> Dict[str, Any]:
    """
    Turn `a.b.c=value` into {"a": {"b": {"c": value}}}.

    The value is parsed as JSON and kept as a plain string when that fails.
    """
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"expected key=value, got {item!r}", field="--set")
    parts = key.split(".")
    if any(not part for part in parts):
        raise ConfigError(f"malformed key {key!r}", field="--set")
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: Dict[str, Any] = {parts[-1]: value}
    for part in reversed(parts[:-1]):
        nested = {part: nested}
    return nested


def resolve_config(
    profile: Optional[str] = None,
    config_path: Optional[str] = None,
    overrides: Iterable[str] = (),
    flags: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Merge all configuration layers and validate the result.

    Args:
        profile: Builtin profile name ("sleep" or "seizure")
        config_path: Optional JSON config file
        overrides: `--set` items, applied last
        flags: Nested values from dedicated flags (--seed, --rules, --out, ...)

    Returns:
        RunConfig: The fully resolved configuration

    Raises:
        ConfigError: On an unknown profile, an unreadable file or an invalid value
    """
    data: Dict[str, Any] = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}", field="--profile")
        data = deep_merge(data, PROFILES[profile])
        data["profile"] = profile
    if config_path is not None:
        file_data = load_config_file(config_path)
        file_profile = file_data.get("profile")
        if profile is None and isinstance(file_profile, str) and file_profile in PROFILES:
            data = deep_merge(PROFILES[file_profile], data)
        data = deep_merge(data, file_data)
    if flags:
        data = deep_merge(data, flags)
    for item in overrides:
        data = deep_merge(data, parse_override(item))
    return validate_run_config(data)


def output_root() -> str:
    return os.getenv(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)


def resolve_out_dir(cfg: RunConfig, command: str) -> str:
    """Output directory of a run: paths.out_dir, else <output root>/<command>."""
    return cfg.paths.out_dir or os.path.join(output_root(), command)


def config_echo(cfg: RunConfig) -> Dict[str, Any]:
    """JSON-ready form of the resolved config, as echoed to config.json."""
    return cfg.model_dump(mode="json")
