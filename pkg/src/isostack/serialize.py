"""Deterministic JSON encoding for CLI output.

Floats are written with 17 significant digits so that every value
round-trips exactly through text; key order is insertion order, so the
same payload always serializes to the same bytes.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValidationError(f"non-finite value {x!r} cannot be serialized")
    if x == int(x) and abs(x) < 1e16:
        # keep integral floats readable and unambiguous
        return f"{x:.1f}"
    return format(x, ".17g")


def _encode(obj, parts: list) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        import json

        parts.append(json.dumps(obj))
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        parts.append("[")
        for i, item in enumerate(items):
            if i:
                parts.append(", ")
            _encode(item, parts)
        parts.append("]")
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                parts.append(", ")
            if not isinstance(key, str):
                raise ValidationError("JSON object keys must be strings")
            import json

            parts.append(json.dumps(key))
            parts.append(": ")
            _encode(value, parts)
        parts.append("}")
    else:
        raise ValidationError(f"cannot serialize object of type {type(obj)!r}")


def stable_json(obj) -> str:
    """Serialize ``obj`` to a deterministic JSON string."""
    parts: list = []
    _encode(obj, parts)
    return "".join(parts)
