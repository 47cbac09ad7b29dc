"""Helpers for the JSON interchange layer.

Interchange documents are JSON objects with lexicographically sorted keys.
Binary fields travel as base64, digests as lowercase hex.  Parsing here is
deliberately strict: unknown keys are rejected, base64 must be canonical
(re-encoding reproduces the input byte for byte), hex must be lowercase.
Strictness is what makes serialized documents tamper-evident down to single
bit flips; a permissive parser would let two different byte strings decode to
the same structure.
"""

from __future__ import annotations

import base64
import binascii
import json
from typing import Any, Mapping

from .errors import FormatError


def dump_json(value: Any) -> str:
    """Render an interchange document: sorted keys, two-space indent."""
    return json.dumps(value, sort_keys=True, indent=2) + "\n"


def compact_json(value: Any) -> str:
    """One-line rendering for log and trace output."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def parse_json(text: str | bytes, what: str = "document") -> Any:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"not valid JSON: {exc}", field=what) from None


def b64_encode(data: bytes) -> str:
    return base64.standard_b64encode(data).decode("ascii")


def b64_decode(text: str, field: str) -> bytes:
    if not isinstance(text, str):
        raise FormatError("expected a base64 string", field=field)
    try:
        data = base64.standard_b64decode(text.encode("ascii"))
    except (binascii.Error, ValueError, UnicodeEncodeError):
        raise FormatError("invalid base64", field=field) from None
    # Round-trip check: reject non-canonical encodings (stray characters,
    # unused padding bits) so each byte string has exactly one spelling.
    if b64_encode(data) != text:
        raise FormatError("non-canonical base64", field=field)
    return data


def field_path(parent: str, key: str) -> str:
    return f"{parent}.{key}" if parent else key


def expect_object(value: Any, field: str) -> dict:
    if not isinstance(value, dict):
        raise FormatError("expected an object", field=field)
    return value


def expect_list(value: Any, field: str) -> list:
    if not isinstance(value, list):
        raise FormatError("expected an array", field=field)
    return value


def expect_str(value: Any, field: str) -> str:
    if not isinstance(value, str):
        raise FormatError("expected a string", field=field)
    return value


def expect_int(value: Any, field: str) -> int:
    # bool is an int subclass; a JSON true/false here is still malformed.
    if not isinstance(value, int) or isinstance(value, bool):
        raise FormatError("expected an integer", field=field)
    return value


def get_field(obj: Mapping[str, Any], key: str, parent: str = "") -> Any:
    path = field_path(parent, key)
    if key not in obj:
        raise FormatError("missing field", field=path)
    return obj[key]


def reject_unknown_keys(obj: Mapping[str, Any], allowed: set[str], parent: str = "") -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise FormatError(f"unknown field {extra[0]!r}", field=parent or extra[0])
