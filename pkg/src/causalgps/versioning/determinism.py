from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Mapping
from typing import Any

# Parameters that change how work is scheduled but never what is computed.
RUNTIME_ONLY_PARAMS: frozenset[str] = frozenset({"nthread"})


def canonical_params(params: Mapping[str, Any], drop: Iterable[str] = RUNTIME_ONLY_PARAMS) -> dict[str, Any]:
    """Copy of ``params`` without runtime-only keys, at any nesting depth."""
    dropped = set(drop)

    def _clean(value: Any) -> Any:
        if isinstance(value, Mapping):
            return {str(k): _clean(v) for k, v in value.items() if k not in dropped}
        if isinstance(value, (list, tuple)):
            return [_clean(v) for v in value]
        return value

    return _clean(params)


def canonical_json(params: Mapping[str, Any]) -> str:
    return json.dumps(canonical_params(params), sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(params: Mapping[str, Any], extra: Mapping[str, Any] | None = None) -> str:
    """
    SHA-256 over the canonical JSON of ``params`` (plus optional extras).
    Stable across runs and thread counts for identical configurations.
    """
    h = hashlib.sha256()
    h.update(canonical_json(params).encode("utf-8"))
    if extra:
        h.update(canonical_json(extra).encode("utf-8"))
    return h.hexdigest()
