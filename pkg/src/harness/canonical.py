"""Canonical JSON serialization and content digests.

Every artifact that must be byte-stable across runs and platforms (reports,
trace digests, golden files) goes through :func:`canonical_json_bytes`:
keys sorted, compact separators, ASCII-escaped, floats rounded to six
decimal places with negative zero normalized.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def _round_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        rounded = float(f"{obj:.6f}")
        # -0.0 and 0.0 print differently; collapse them
        return 0.0 if rounded == 0 else rounded
    if isinstance(obj, dict):
        return {key: _round_floats(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(value) for value in obj]
    return obj


def canonical_json_bytes(obj: Any) -> bytes:
    """Serialize ``obj`` to canonical JSON bytes (stable across platforms)."""
    return json.dumps(
        _round_floats(obj),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    ).encode("ascii")


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    """Content hash of any JSON-serializable object, canonical form."""
    return sha256_hex(canonical_json_bytes(obj))
