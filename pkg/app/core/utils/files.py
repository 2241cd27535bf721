"""Atomic file writing helpers."""
import hashlib
import json
import os
import tempfile
from typing import Any


def atomic_write_text(path: str, text: str) -> None:
    """
    Write text to `path` so that readers never observe a partial file.

    The content goes to a temporary file in the destination directory which then
    replaces the target in one rename.

    Args:
        path: Destination file
        text: Content to write
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def dumps_canonical(data: Any) -> str:
    """JSON with sorted keys and a trailing newline, stable across runs."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def atomic_write_json(path: str, data: Any) -> None:
    atomic_write_text(path, dumps_canonical(data))


def config_hash(data: Any) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    return hashlib.sha256(dumps_canonical(data).encode("utf-8")).hexdigest()
