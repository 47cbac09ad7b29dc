"""Vetting authorities, delegation chains, and tool certifications.

An authority chain is a root-first list of links.  The root link carries only
a verifying key; every later link carries a key plus a signature by the
previous link's key over (child key, previous link).  A tool certification
binds a tool descriptor and a property set under the chain's tail key.
Verification walks the chain from an anchored root and reports the first link
that fails, by index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Iterable

from . import canonical, jsonio
from .crypto import (
    Digest,
    Signature,
    SigningKey,
    VerifyingKey,
    canonical_encode,
    sign_payload,
    verify_signature,
)
from .errors import CertificationError, FormatError

MAX_CHAIN_DEPTH = 16

# Verification failure reasons, also surfaced through report and policy checks.
UNTRUSTED_ROOT = "untrusted-root"
BAD_SIGNATURE = "bad-signature"
BAD_CERTIFICATION_SIGNATURE = "bad-certification-signature"

_PROPERTY_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")


def is_valid_property(name: str) -> bool:
    """Property and tag names: uppercase ASCII, digits, underscores."""
    return isinstance(name, str) and bool(_PROPERTY_RE.match(name))


@dataclass(frozen=True)
class ToolDescriptor:
    """Identity of a certified tool.

    ``release_key_id`` names the key that signed the tool's release and is
    carried as inert metadata in this version.  ``report_verifying_key`` is
    the key the running tool signs its reports with.
    """

    name: str
    version: str
    release_key_id: Digest
    report_verifying_key: VerifyingKey

    def __post_init__(self):
        if not self.name:
            raise ValueError("tool name must be non-empty")
        if not self.version:
            raise ValueError("tool version must be non-empty")

    def to_canonical(self) -> bytes:
        return (
            canonical.encode_str(self.name)
            + canonical.encode_str(self.version)
            + canonical.length_prefixed(self.release_key_id.to_canonical())
            + canonical.length_prefixed(self.report_verifying_key.to_canonical())
        )

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "release_key_id": self.release_key_id.hex,
            "report_verifying_key": self.report_verifying_key.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "tool") -> "ToolDescriptor":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(
            obj, {"name", "version", "release_key_id", "report_verifying_key"}, parent
        )
        name = jsonio.expect_str(jsonio.get_field(obj, "name", parent), jsonio.field_path(parent, "name"))
        version = jsonio.expect_str(
            jsonio.get_field(obj, "version", parent), jsonio.field_path(parent, "version")
        )
        release = Digest.from_hex(
            jsonio.get_field(obj, "release_key_id", parent),
            jsonio.field_path(parent, "release_key_id"),
        )
        key = VerifyingKey.from_json_dict(
            jsonio.get_field(obj, "report_verifying_key", parent),
            jsonio.field_path(parent, "report_verifying_key"),
        )
        try:
            return cls(name, version, release, key)
        except ValueError as exc:
            raise FormatError(str(exc), field=parent) from None


@dataclass(frozen=True)
class PropertySet:
    """Non-empty set of property names, kept sorted for stable encoding."""

    properties: tuple[str, ...]

    def __post_init__(self):
        if not self.properties:
            raise ValueError("property set must be non-empty")
        for prop in self.properties:
            if not is_valid_property(prop):
                raise ValueError(f"invalid property name {prop!r}")
        if len(set(self.properties)) != len(self.properties):
            raise ValueError("duplicate property names")
        object.__setattr__(self, "properties", tuple(sorted(self.properties)))

    @classmethod
    def of(cls, names: Iterable[str]) -> "PropertySet":
        return cls(tuple(names))

    def to_canonical(self) -> bytes:
        return canonical.encode_list(name.encode("utf-8") for name in self.properties)

    def to_json_list(self) -> list:
        return list(self.properties)

    @classmethod
    def from_json(cls, obj: Any, parent: str = "properties") -> "PropertySet":
        items = jsonio.expect_list(obj, parent)
        names = [
            jsonio.expect_str(item, f"{parent}[{index}]") for index, item in enumerate(items)
        ]
        try:
            return cls(tuple(names))
        except ValueError as exc:
            raise FormatError(str(exc), field=parent) from None


@dataclass(frozen=True)
class ChainLink:
    """One step of an authority chain; the root link has no parent signature."""

    verifying_key: VerifyingKey
    parent_signature: Signature | None

    def to_canonical(self) -> bytes:
        signature = b"" if self.parent_signature is None else self.parent_signature.to_canonical()
        return canonical.length_prefixed(self.verifying_key.to_canonical()) + canonical.length_prefixed(
            signature
        )

    def to_json_dict(self) -> dict:
        return {
            "verifying_key": self.verifying_key.to_json_dict(),
            "parent_signature": None
            if self.parent_signature is None
            else self.parent_signature.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "link") -> "ChainLink":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(obj, {"verifying_key", "parent_signature"}, parent)
        key = VerifyingKey.from_json_dict(
            jsonio.get_field(obj, "verifying_key", parent),
            jsonio.field_path(parent, "verifying_key"),
        )
        raw_signature = jsonio.get_field(obj, "parent_signature", parent)
        signature = (
            None
            if raw_signature is None
            else Signature.from_json_dict(raw_signature, jsonio.field_path(parent, "parent_signature"))
        )
        return cls(key, signature)


@dataclass(frozen=True)
class AuthorityChain:
    """Root-first delegation chain, at most MAX_CHAIN_DEPTH links deep."""

    links: tuple[ChainLink, ...]

    def __post_init__(self):
        if not self.links:
            raise ValueError("authority chain must have at least one link")
        if len(self.links) > MAX_CHAIN_DEPTH:
            raise ValueError(f"authority chain deeper than {MAX_CHAIN_DEPTH} links")
        if self.links[0].parent_signature is not None:
            raise ValueError("root link must not carry a parent signature")
        for index, link in enumerate(self.links[1:], start=1):
            if link.parent_signature is None:
                raise ValueError(f"link {index} is missing its parent signature")

    @property
    def root_key(self) -> VerifyingKey:
        return self.links[0].verifying_key

    @property
    def tail_key(self) -> VerifyingKey:
        return self.links[-1].verifying_key

    def to_canonical(self) -> bytes:
        return canonical.encode_list(link.to_canonical() for link in self.links)

    def to_json_dict(self) -> dict:
        return {"links": [link.to_json_dict() for link in self.links]}

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "authority_chain") -> "AuthorityChain":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(obj, {"links"}, parent)
        raw_links = jsonio.expect_list(
            jsonio.get_field(obj, "links", parent), jsonio.field_path(parent, "links")
        )
        links = tuple(
            ChainLink.from_json_dict(item, f"{parent}.links[{index}]")
            for index, item in enumerate(raw_links)
        )
        try:
            return cls(links)
        except ValueError as exc:
            raise FormatError(str(exc), field=parent) from None


@dataclass(frozen=True)
class ToolCertification:
    """A tool descriptor and property set certified by an authority chain."""

    tool: ToolDescriptor
    properties: PropertySet
    authority_chain: AuthorityChain
    authority_signature: Signature

    def to_canonical(self) -> bytes:
        return (
            canonical.length_prefixed(self.tool.to_canonical())
            + canonical.length_prefixed(self.properties.to_canonical())
            + canonical.length_prefixed(self.authority_chain.to_canonical())
            + canonical.length_prefixed(self.authority_signature.to_canonical())
        )

    def to_json_dict(self) -> dict:
        return {
            "tool": self.tool.to_json_dict(),
            "properties": self.properties.to_json_list(),
            "authority_chain": self.authority_chain.to_json_dict(),
            "authority_signature": self.authority_signature.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "certification") -> "ToolCertification":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(
            obj, {"tool", "properties", "authority_chain", "authority_signature"}, parent
        )
        return cls(
            ToolDescriptor.from_json_dict(
                jsonio.get_field(obj, "tool", parent), jsonio.field_path(parent, "tool")
            ),
            PropertySet.from_json(
                jsonio.get_field(obj, "properties", parent), jsonio.field_path(parent, "properties")
            ),
            AuthorityChain.from_json_dict(
                jsonio.get_field(obj, "authority_chain", parent),
                jsonio.field_path(parent, "authority_chain"),
            ),
            Signature.from_json_dict(
                jsonio.get_field(obj, "authority_signature", parent),
                jsonio.field_path(parent, "authority_signature"),
            ),
        )


@dataclass(frozen=True)
class TrustAnchorSet:
    """Key ids of the authority roots a verifier trusts."""

    key_ids: frozenset[Digest]

    def __post_init__(self):
        object.__setattr__(self, "key_ids", frozenset(self.key_ids))

    @classmethod
    def from_keys(cls, keys: Iterable[VerifyingKey]) -> "TrustAnchorSet":
        return cls(frozenset(key.key_id for key in keys))

    @classmethod
    def from_ids(cls, ids: Iterable[Digest | str]) -> "TrustAnchorSet":
        resolved = set()
        for item in ids:
            resolved.add(item if isinstance(item, Digest) else Digest.from_hex(item, "anchor"))
        return cls(frozenset(resolved))

    def __contains__(self, key_id: Digest) -> bool:
        return key_id in self.key_ids

    def __len__(self) -> int:
        return len(self.key_ids)


@dataclass(frozen=True)
class ChainVerification:
    """Outcome of walking an authority chain against a set of anchors."""

    ok: bool
    root_key_id: Digest | None = None
    failed_link: int | None = None
    reason: str | None = None


@dataclass(frozen=True)
class CertificationVerification:
    """Outcome of checking a tool certification, chain included."""

    ok: bool
    root_key_id: Digest | None = None
    failed_link: int | None = None
    reason: str | None = None


def link_signing_payload(child_key: VerifyingKey, previous_link: ChainLink) -> bytes:
    """Bytes a parent authority signs when delegating to a child key.

    Covering the previous link pins the child's position in the chain; a link
    cannot be replayed under a different parent.
    """
    return canonical.length_prefixed(child_key.to_canonical()) + canonical.length_prefixed(
        previous_link.to_canonical()
    )


def certification_signing_payload(tool: ToolDescriptor, properties: PropertySet) -> bytes:
    """Bytes the certifying authority signs: the tool and its properties."""
    return canonical.length_prefixed(tool.to_canonical()) + canonical.length_prefixed(
        properties.to_canonical()
    )


def create_root_authority(root_key: VerifyingKey) -> AuthorityChain:
    """Start a chain at a self-describing root; roots sign nothing for themselves."""
    return AuthorityChain((ChainLink(root_key, None),))


def certify_authority(
    parent_key: SigningKey, parent_chain: AuthorityChain, child_key: VerifyingKey
) -> AuthorityChain:
    """Extend a chain by one link, signed by the current tail authority."""
    if parent_key.verifying_key != parent_chain.tail_key:
        raise CertificationError("signing key does not match the chain's tail authority")
    if len(parent_chain.links) >= MAX_CHAIN_DEPTH:
        raise CertificationError(f"chain already at maximum depth {MAX_CHAIN_DEPTH}")
    payload = link_signing_payload(child_key, parent_chain.links[-1])
    signature = sign_payload(parent_key, payload)
    return AuthorityChain(parent_chain.links + (ChainLink(child_key, signature),))


def certify_tool(
    authority_key: SigningKey,
    authority_chain: AuthorityChain,
    tool: ToolDescriptor,
    properties: PropertySet,
) -> ToolCertification:
    """Certify a tool under the chain's tail authority."""
    if authority_key.verifying_key != authority_chain.tail_key:
        raise CertificationError("signing key does not match the chain's tail authority")
    payload = certification_signing_payload(tool, properties)
    signature = sign_payload(authority_key, payload)
    return ToolCertification(tool, properties, authority_chain, signature)


def verify_authority_chain(chain: AuthorityChain, anchors: TrustAnchorSet) -> ChainVerification:
    """Walk a chain root-first.

    The root must be anchored; every later link must carry a valid signature
    by its predecessor.  Failures name the first offending link by index.
    """
    root_id = chain.root_key.key_id
    if root_id not in anchors:
        return ChainVerification(ok=False, failed_link=0, reason=UNTRUSTED_ROOT)
    for index in range(1, len(chain.links)):
        link = chain.links[index]
        payload = link_signing_payload(link.verifying_key, chain.links[index - 1])
        assert link.parent_signature is not None  # guaranteed by AuthorityChain
        if not verify_signature(link.parent_signature, payload, chain.links[index - 1].verifying_key):
            return ChainVerification(ok=False, failed_link=index, reason=BAD_SIGNATURE)
    return ChainVerification(ok=True, root_key_id=root_id)


@lru_cache(maxsize=4096)
def _verify_certification_cached(
    certification: ToolCertification, anchors: TrustAnchorSet
) -> CertificationVerification:
    chain_result = verify_authority_chain(certification.authority_chain, anchors)
    if not chain_result.ok:
        return CertificationVerification(
            ok=False, failed_link=chain_result.failed_link, reason=chain_result.reason
        )
    payload = certification_signing_payload(certification.tool, certification.properties)
    if not verify_signature(
        certification.authority_signature, payload, certification.authority_chain.tail_key
    ):
        return CertificationVerification(ok=False, reason=BAD_CERTIFICATION_SIGNATURE)
    return CertificationVerification(ok=True, root_key_id=chain_result.root_key_id)


def verify_tool_certification(
    certification: ToolCertification, anchors: TrustAnchorSet
) -> CertificationVerification:
    """Check the chain and the authority signature over (tool, properties).

    Results are cached: bundles routinely repeat the same certification across
    many reports, and re-walking the chain each time would dominate
    verification cost.  Both arguments are immutable value types, so caching
    cannot change an outcome.
    """
    return _verify_certification_cached(certification, anchors)
