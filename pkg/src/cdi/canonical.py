"""Canonical byte encoding for signed structures.

Every signature in the protocol is computed over the canonical encoding of a
structure, never over a JSON rendering.  The encoding is deterministic and
injective per structure type:

* each field is emitted in the fixed order given by its type, as a 4-byte
  big-endian length prefix followed by the value bytes;
* nested structures are encoded recursively and carried as one field;
* lists are a 4-byte big-endian element count followed by the elements, each
  with its own length prefix (the empty list is ``00 00 00 00``);
* string-keyed maps are a 4-byte big-endian entry count followed by entries
  sorted by UTF-8 key bytes, each entry a length-prefixed key then a
  length-prefixed value;
* integers occupy 8 big-endian bytes inside the usual length-prefixed field;
* an absent optional byte field encodes as a zero-length field.

Structure types participate by implementing ``to_canonical() -> bytes``;
:func:`canonical_encode` is the public entry point.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Protocol, runtime_checkable

from .errors import EncodingError

_LENGTH_BYTES = 4
_INT_BYTES = 8
_MAX_FIELD = 2 ** (8 * _LENGTH_BYTES) - 1


@runtime_checkable
class Canonical(Protocol):
    def to_canonical(self) -> bytes: ...


def length_prefixed(value: bytes) -> bytes:
    """One field: 4-byte big-endian length, then the value bytes."""
    if len(value) > _MAX_FIELD:
        raise EncodingError(f"field of {len(value)} bytes exceeds the 4-byte length prefix")
    return len(value).to_bytes(_LENGTH_BYTES, "big") + value


def encode_str(value: str) -> bytes:
    return length_prefixed(value.encode("utf-8"))


def encode_int(value: int) -> bytes:
    # Encodings must be byte-for-byte reproducible across implementations, so
    # integers get a fixed width rather than a minimal one.
    if value < 0:
        raise EncodingError("negative integers have no canonical encoding")
    try:
        return length_prefixed(value.to_bytes(_INT_BYTES, "big"))
    except OverflowError as exc:
        raise EncodingError(f"integer {value} does not fit in {_INT_BYTES} bytes") from exc


def encode_list(elements: Iterable[bytes]) -> bytes:
    """A list field: element count, then each element length-prefixed."""
    items = list(elements)
    out = [len(items).to_bytes(_LENGTH_BYTES, "big")]
    out.extend(length_prefixed(item) for item in items)
    return b"".join(out)


def encode_str_map(entries: Mapping[str, bytes]) -> bytes:
    """A string-keyed map field, entries sorted by UTF-8 key bytes."""
    encoded_keys = {key.encode("utf-8"): value for key, value in entries.items()}
    if len(encoded_keys) != len(entries):
        raise EncodingError("map keys collide after UTF-8 encoding")
    out = [len(encoded_keys).to_bytes(_LENGTH_BYTES, "big")]
    for key in sorted(encoded_keys):
        out.append(length_prefixed(key))
        out.append(length_prefixed(encoded_keys[key]))
    return b"".join(out)


def canonical_encode(structure: Canonical) -> bytes:
    """Return the canonical byte encoding of a protocol structure.

    Raises EncodingError for values that do not take part in the protocol.
    """
    to_canonical = getattr(structure, "to_canonical", None)
    if to_canonical is None:
        raise EncodingError(f"{type(structure).__name__} has no canonical encoding")
    return to_canonical()
