"""Small shared helpers: atomic file writes, float formatting, hashing."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

__all__ = ["atomic_write_text", "format_float17", "canonical_json", "config_hash"]


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file + rename in the same dir."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float17(v: float) -> str:
    """Decimal form with 17 significant digits; round-trips float64 exactly."""
    return format(float(v), ".17g")


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace variance."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]
