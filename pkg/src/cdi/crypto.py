"""Hashing, key handling, and signatures.

Version 1 of the protocol fixes the algorithms: SHA-256 for digests and ECDSA
over P-256 for signatures.  The identifier strings still travel inside every
serialized structure so a later version can negotiate new algorithms without
changing the byte layout.  Signing is deterministic (RFC 6979 nonces), which
makes whole report files reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec

from . import canonical, jsonio
from .errors import FormatError, KeyMaterialError

HASH_ALGORITHM = "sha-256"
SIGNATURE_ALGORITHM = "ecdsa-p256"

_DIGEST_LEN = 32
_SCALAR_LEN = 32
_POINT_LEN = 33  # SEC1 compressed
_CHUNK = 1 << 20

# Group order of P-256; scalars must fall in [1, order).
_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

_HEX_DIGITS = set("0123456789abcdef")


@dataclass(frozen=True)
class Digest:
    """A hash value tagged with the algorithm that produced it."""

    algorithm: str
    value: bytes

    def __post_init__(self):
        if self.algorithm != HASH_ALGORITHM:
            raise ValueError(f"unsupported digest algorithm {self.algorithm!r}")
        if len(self.value) != _DIGEST_LEN:
            raise ValueError(f"digest must be {_DIGEST_LEN} bytes, got {len(self.value)}")

    @property
    def hex(self) -> str:
        return self.value.hex()

    def __str__(self) -> str:
        return self.hex

    @classmethod
    def from_hex(cls, text: str, field_name: str = "digest") -> "Digest":
        """Parse the textual form: exactly 64 lowercase hex characters.

        Uppercase input is rejected rather than normalized; a digest string
        must have a single spelling.
        """
        if not isinstance(text, str):
            raise FormatError("expected a digest string", field=field_name)
        if len(text) != 2 * _DIGEST_LEN or not set(text) <= _HEX_DIGITS:
            raise FormatError("expected 64 lowercase hex characters", field=field_name)
        return cls(HASH_ALGORITHM, bytes.fromhex(text))

    def to_canonical(self) -> bytes:
        return canonical.encode_str(self.algorithm) + canonical.length_prefixed(self.value)


@dataclass(frozen=True)
class VerifyingKey:
    """Public half of a signing keypair.

    ``material`` is the SEC1 compressed curve point (33 bytes).  The key id is
    the digest of the canonical encoding, so it commits to the algorithm as
    well as the point.
    """

    algorithm: str
    material: bytes

    def __post_init__(self):
        if self.algorithm != SIGNATURE_ALGORITHM:
            raise ValueError(f"unsupported signature algorithm {self.algorithm!r}")
        if len(self.material) != _POINT_LEN or self.material[0] not in (2, 3):
            raise ValueError("verifying key material must be a compressed P-256 point")

    def to_canonical(self) -> bytes:
        return canonical.encode_str(self.algorithm) + canonical.length_prefixed(self.material)

    @cached_property
    def key_id(self) -> Digest:
        return hash_bytes(self.to_canonical())

    @cached_property
    def _public_key(self) -> ec.EllipticCurvePublicKey:
        try:
            return ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), self.material)
        except ValueError as exc:
            raise KeyMaterialError(f"verifying key material is not a curve point: {exc}") from None

    def to_json_dict(self) -> dict:
        return {"algorithm": self.algorithm, "material": jsonio.b64_encode(self.material)}

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "verifying_key") -> "VerifyingKey":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(obj, {"algorithm", "material"}, parent)
        algorithm = jsonio.expect_str(
            jsonio.get_field(obj, "algorithm", parent), jsonio.field_path(parent, "algorithm")
        )
        material = jsonio.b64_decode(
            jsonio.get_field(obj, "material", parent), jsonio.field_path(parent, "material")
        )
        try:
            key = cls(algorithm, material)
            key._public_key  # noqa: B018 - force point validation at parse time
        except (ValueError, KeyMaterialError) as exc:
            raise FormatError(str(exc), field=parent) from None
        return key


@dataclass(frozen=True)
class SigningKey:
    """Private half of a signing keypair.

    Never appears inside any serialized protocol structure; the only
    sanctioned persistence is the two-line key file format.
    """

    algorithm: str
    material: bytes = field(repr=False)

    def __post_init__(self):
        if self.algorithm != SIGNATURE_ALGORITHM:
            raise ValueError(f"unsupported signature algorithm {self.algorithm!r}")
        if len(self.material) != _SCALAR_LEN:
            raise ValueError(f"signing key material must be {_SCALAR_LEN} bytes")
        scalar = int.from_bytes(self.material, "big")
        if not 1 <= scalar < _P256_ORDER:
            raise ValueError("signing key scalar out of range")

    @cached_property
    def _private_key(self) -> ec.EllipticCurvePrivateKey:
        scalar = int.from_bytes(self.material, "big")
        return ec.derive_private_key(scalar, ec.SECP256R1())

    @cached_property
    def verifying_key(self) -> VerifyingKey:
        material = self._private_key.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
        )
        return VerifyingKey(SIGNATURE_ALGORITHM, material)


@dataclass(frozen=True)
class Signature:
    """A signature value bound to the key id that produced it."""

    algorithm: str
    value: bytes
    signer_key_id: Digest

    def __post_init__(self):
        if self.algorithm != SIGNATURE_ALGORITHM:
            raise ValueError(f"unsupported signature algorithm {self.algorithm!r}")
        if not self.value:
            raise ValueError("empty signature value")

    def to_canonical(self) -> bytes:
        return (
            canonical.encode_str(self.algorithm)
            + canonical.length_prefixed(self.value)
            + canonical.length_prefixed(self.signer_key_id.to_canonical())
        )

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "signer_key_id": self.signer_key_id.hex,
            "value": jsonio.b64_encode(self.value),
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "signature") -> "Signature":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(obj, {"algorithm", "signer_key_id", "value"}, parent)
        algorithm = jsonio.expect_str(
            jsonio.get_field(obj, "algorithm", parent), jsonio.field_path(parent, "algorithm")
        )
        signer = Digest.from_hex(
            jsonio.get_field(obj, "signer_key_id", parent),
            jsonio.field_path(parent, "signer_key_id"),
        )
        value = jsonio.b64_decode(
            jsonio.get_field(obj, "value", parent), jsonio.field_path(parent, "value")
        )
        try:
            return cls(algorithm, value, signer)
        except ValueError as exc:
            raise FormatError(str(exc), field=parent) from None


def hash_bytes(data: bytes) -> Digest:
    """SHA-256 of a byte string."""
    return Digest(HASH_ALGORITHM, hashlib.sha256(data).digest())


def hash_file(path: str | Path) -> Digest:
    """SHA-256 of a file, streamed in fixed-size chunks.

    Memory use is constant regardless of file size.  A missing file raises
    FileNotFoundError and an unreadable one PermissionError, so callers can
    tell the two apart.
    """
    hasher = hashlib.sha256()
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(_CHUNK)
            if not chunk:
                break
            hasher.update(chunk)
    return Digest(HASH_ALGORITHM, hasher.digest())


def _derive_scalar(seed: bytes) -> int:
    # Hash-and-count expansion with rejection sampling keeps the scalar
    # uniform over [1, order) and the derivation reproducible.
    counter = 0
    while True:
        digest = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        candidate = int.from_bytes(digest, "big")
        if 1 <= candidate < _P256_ORDER:
            return candidate
        counter += 1


def generate_keypair(seed: bytes | None = None) -> tuple[SigningKey, VerifyingKey]:
    """Generate a P-256 keypair.

    With no seed the scalar comes from the OS entropy source.  With a seed the
    derivation is deterministic: the same seed always yields the same keypair.
    Seeds should carry at least 32 bytes of entropy when the key matters; that
    is the caller's responsibility.
    """
    if seed is None:
        scalar = _derive_scalar(os.urandom(48))
    else:
        scalar = _derive_scalar(seed)
    signing = SigningKey(SIGNATURE_ALGORITHM, scalar.to_bytes(_SCALAR_LEN, "big"))
    return signing, signing.verifying_key


def sign_payload(key: SigningKey, payload: bytes) -> Signature:
    """Sign raw payload bytes; deterministic for a fixed (key, payload)."""
    der = key._private_key.sign(payload, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    return Signature(SIGNATURE_ALGORITHM, der, key.verifying_key.key_id)


def verify_signature(signature: Signature, payload: bytes, key: VerifyingKey) -> bool:
    """Check a signature over payload bytes under the given key.

    Returns False (never raises) when the signature does not verify, names a
    different signer, or carries bytes that do not even parse as a signature.
    """
    if signature.algorithm != key.algorithm:
        return False
    if signature.signer_key_id != key.key_id:
        return False
    try:
        key._public_key.verify(signature.value, payload, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError, KeyMaterialError):
        return False
    return True


def canonical_encode(structure: canonical.Canonical) -> bytes:
    """Canonical byte encoding of any protocol structure; see `canonical`."""
    return canonical.canonical_encode(structure)


def _read_key_file(path: str | Path, expected_algorithm: str, what: str) -> bytes:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise KeyMaterialError(f"cannot read {what} file {path}: {exc}") from None
    except UnicodeDecodeError:
        raise KeyMaterialError(f"{what} file {path} is not ASCII text") from None
    lines = text.splitlines()
    if len(lines) != 2:
        raise KeyMaterialError(f"{what} file {path} must have exactly two lines")
    if lines[0] != expected_algorithm:
        raise KeyMaterialError(
            f"{what} file {path} names algorithm {lines[0]!r}, expected {expected_algorithm!r}"
        )
    try:
        return jsonio.b64_decode(lines[1], "material")
    except FormatError:
        raise KeyMaterialError(f"{what} file {path} has invalid base64 material") from None


def write_signing_key(key: SigningKey, path: str | Path) -> None:
    """Write the two-line key file: algorithm identifier, then base64 material."""
    path = Path(path)
    path.write_text(f"{key.algorithm}\n{jsonio.b64_encode(key.material)}\n", encoding="ascii")
    os.chmod(path, 0o600)


def write_verifying_key(key: VerifyingKey, path: str | Path) -> None:
    path = Path(path)
    path.write_text(f"{key.algorithm}\n{jsonio.b64_encode(key.material)}\n", encoding="ascii")


def load_signing_key(path: str | Path) -> SigningKey:
    material = _read_key_file(path, SIGNATURE_ALGORITHM, "signing key")
    try:
        return SigningKey(SIGNATURE_ALGORITHM, material)
    except ValueError as exc:
        raise KeyMaterialError(f"signing key file {path}: {exc}") from None


def load_verifying_key(path: str | Path) -> VerifyingKey:
    material = _read_key_file(path, SIGNATURE_ALGORITHM, "verifying key")
    try:
        key = VerifyingKey(SIGNATURE_ALGORITHM, material)
        key._public_key  # noqa: B018 - force point validation
        return key
    except (ValueError, KeyMaterialError) as exc:
        raise KeyMaterialError(f"verifying key file {path}: {exc}") from None
