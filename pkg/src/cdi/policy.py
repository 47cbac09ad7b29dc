"""Admission policies and their evaluation.

A policy is a JSON document naming a mode, trust anchors, per-operation rules
(required properties, certification thresholds), and coarse security tags
that resolve to concrete property sets.  Evaluation turns a bundle plus an
artifact digest into a Decision that either admits or denies, with structured
reasons and the audit trace either way.  `accept-all` mode admits everything
and exists so the machinery can run as a pure observer; `default-deny` is the
enforcing mode and admits only what verifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from . import jsonio
from .authority import TrustAnchorSet, is_valid_property, verify_tool_certification
from .crypto import Digest, hash_bytes, load_verifying_key
from .errors import FormatError, KeyMaterialError, PolicyParseError
from .provenance import (
    AuditEntry,
    Bundle,
    CdiReport,
    ProvenanceVerification,
    verify_provenance,
)

MODE_ACCEPT_ALL = "accept-all"
MODE_DEFAULT_DENY = "default-deny"

ADMIT = "admit"
DENY = "deny"

RULE_PROVENANCE = "provenance"
RULE_THRESHOLD = "threshold"
RULE_REQUIRED_PROPERTIES = "required-properties"
RULE_TAG = "tag"

_POLICY_KEYS = {
    "mode",
    "anchors",
    "required_tags",
    "tag_map",
    "operation_rules",
    "default_threshold",
}
_RULE_KEYS = {"required_properties", "threshold"}
_HEX_DIGITS = set("0123456789abcdef")


@dataclass(frozen=True)
class OperationRule:
    """Requirements applied to reports of one operation kind."""

    required_properties: tuple[str, ...] = ()
    threshold: int = 1


@dataclass(frozen=True)
class Policy:
    """A parsed, validated policy document.  Immutable once parsed."""

    mode: str
    anchors: TrustAnchorSet
    required_tags: tuple[str, ...] = ()
    tag_map: Mapping[str, tuple[str, ...]] = None  # type: ignore[assignment]
    operation_rules: Mapping[str, OperationRule] = None  # type: ignore[assignment]
    default_threshold: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tag_map", dict(self.tag_map or {}))
        object.__setattr__(self, "operation_rules", dict(self.operation_rules or {}))

    def rule_for(self, operation_kind: str) -> OperationRule:
        """The rule for an operation kind; unknown kinds get the defaults."""
        rule = self.operation_rules.get(operation_kind)
        if rule is None:
            return OperationRule((), self.default_threshold)
        return rule


@dataclass(frozen=True)
class Reason:
    """One violated rule behind a deny."""

    rule: str
    report_id: Digest | None
    detail: str

    def to_json_dict(self) -> dict:
        return {
            "rule": self.rule,
            "report_id": None if self.report_id is None else self.report_id.hex,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Decision:
    """The admission verdict plus everything needed to audit it."""

    verdict: str
    reasons: tuple[Reason, ...]
    audit_trace: tuple[AuditEntry, ...]

    @property
    def admitted(self) -> bool:
        return self.verdict == ADMIT

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reasons": [reason.to_json_dict() for reason in self.reasons],
            "audit_trace": [entry.to_json_dict() for entry in self.audit_trace],
        }


@dataclass(frozen=True)
class ThresholdCheck:
    """Result of counting distinct anchored roots behind a report."""

    satisfied: bool
    distinct_roots: int


@dataclass(frozen=True)
class TagResolution:
    """Whether a tag's property set intersects what was verified."""

    satisfied: bool
    witness: tuple[str, ...]


def _is_key_id(text: str) -> bool:
    return len(text) == 64 and set(text) <= _HEX_DIGITS


def _parse_anchors(raw: Any, base_dir: Path | None) -> TrustAnchorSet:
    items = jsonio.expect_list(raw, "anchors")
    ids = set()
    for index, item in enumerate(items):
        where = f"anchors[{index}]"
        text = jsonio.expect_str(item, where)
        if _is_key_id(text):
            ids.add(Digest.from_hex(text, where))
            continue
        # Not a key id: treat as a verifying key file, relative to the policy.
        path = Path(text)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            ids.add(load_verifying_key(path).key_id)
        except KeyMaterialError as exc:
            raise PolicyParseError(str(exc), field=where) from None
    return TrustAnchorSet(frozenset(ids))


def _parse_property_list(raw: Any, where: str) -> tuple[str, ...]:
    items = jsonio.expect_list(raw, where)
    names = []
    for index, item in enumerate(items):
        name = jsonio.expect_str(item, f"{where}[{index}]")
        if not is_valid_property(name):
            raise PolicyParseError(f"invalid property name {name!r}", field=f"{where}[{index}]")
        names.append(name)
    if len(set(names)) != len(names):
        raise PolicyParseError("duplicate property names", field=where)
    return tuple(sorted(names))


def _parse_threshold(raw: Any, where: str) -> int:
    try:
        value = jsonio.expect_int(raw, where)
    except FormatError:
        raise PolicyParseError("threshold must be an integer", field=where) from None
    if value < 1:
        raise PolicyParseError("threshold must be at least 1", field=where)
    return value


def parse_policy(text: str | bytes, base_dir: str | Path | None = None) -> Policy:
    """Parse and validate a policy document.

    ``base_dir`` anchors relative key-file paths, normally the directory the
    policy file lives in.  Every problem raises PolicyParseError naming the
    offending field (and the line for JSON syntax errors).
    """
    base = Path(base_dir) if base_dir is not None else None
    try:
        document = jsonio.parse_json(text, "policy")
    except FormatError as exc:
        line = getattr(getattr(exc, "__context__", None), "lineno", None)
        raise PolicyParseError("not valid JSON", line=line) from None
    try:
        return _parse_document(document, base)
    except FormatError as exc:
        # Shared JSON helpers raise FormatError; surface it as a policy error
        # without doubling the field prefix already baked into the message.
        message = str(exc)
        if exc.field is not None and message.startswith(f"{exc.field}: "):
            message = message[len(exc.field) + 2 :]
        raise PolicyParseError(message, field=exc.field) from None


def _parse_document(document: Any, base: Path | None) -> Policy:
    if not isinstance(document, dict):
        raise PolicyParseError("policy document must be a JSON object")
    unknown = sorted(set(document) - _POLICY_KEYS)
    if unknown:
        raise PolicyParseError(f"unknown field {unknown[0]!r}", field=unknown[0])

    if "mode" not in document:
        raise PolicyParseError("missing field", field="mode")
    mode = document["mode"]
    if mode not in (MODE_ACCEPT_ALL, MODE_DEFAULT_DENY):
        raise PolicyParseError(
            f"unknown mode {mode!r}; expected {MODE_ACCEPT_ALL!r} or {MODE_DEFAULT_DENY!r}",
            field="mode",
        )

    anchors = _parse_anchors(document.get("anchors", []), base)
    if mode == MODE_DEFAULT_DENY and len(anchors) == 0:
        raise PolicyParseError(
            f"{MODE_DEFAULT_DENY} requires at least one trust anchor", field="anchors"
        )

    required_tags = _parse_property_list(document.get("required_tags", []), "required_tags")

    raw_tag_map = jsonio.expect_object(document.get("tag_map", {}), "tag_map")
    tag_map: dict[str, tuple[str, ...]] = {}
    for tag, value in raw_tag_map.items():
        where = f"tag_map.{tag}"
        if not is_valid_property(tag):
            raise PolicyParseError(f"invalid tag name {tag!r}", field="tag_map")
        properties = _parse_property_list(value, where)
        if not properties:
            raise PolicyParseError("tag resolves to an empty property set", field=where)
        tag_map[tag] = properties

    for tag in required_tags:
        if tag not in tag_map:
            raise PolicyParseError(
                f"required tag {tag!r} has no entry in tag_map", field="required_tags"
            )

    default_threshold = _parse_threshold(document.get("default_threshold", 1), "default_threshold")

    raw_rules = jsonio.expect_object(document.get("operation_rules", {}), "operation_rules")
    operation_rules: dict[str, OperationRule] = {}
    for kind, value in raw_rules.items():
        where = f"operation_rules.{kind}"
        if not kind:
            raise PolicyParseError("operation kind must be non-empty", field="operation_rules")
        rule_obj = jsonio.expect_object(value, where)
        unknown = sorted(set(rule_obj) - _RULE_KEYS)
        if unknown:
            raise PolicyParseError(f"unknown field {unknown[0]!r}", field=where)
        properties = _parse_property_list(
            rule_obj.get("required_properties", []), f"{where}.required_properties"
        )
        threshold = (
            _parse_threshold(rule_obj["threshold"], f"{where}.threshold")
            if "threshold" in rule_obj
            else default_threshold
        )
        operation_rules[kind] = OperationRule(properties, threshold)

    try:
        return Policy(mode, anchors, required_tags, tag_map, operation_rules, default_threshold)
    except ValueError as exc:
        raise PolicyParseError(str(exc)) from None


def load_policy(path: str | Path) -> tuple[Policy, Digest]:
    """Read a policy file.  Returns the policy and its id (digest of the raw bytes)."""
    path = Path(path)
    raw = path.read_bytes()
    policy = parse_policy(raw, base_dir=path.parent)
    return policy, hash_bytes(raw)


def check_threshold(report: CdiReport, threshold: int, anchors: TrustAnchorSet) -> ThresholdCheck:
    """Count distinct anchored roots among the report's verifying certifications.

    Three certifications chaining to one root still count as one: the
    threshold measures independent authorities, not signatures.
    """
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    roots = set()
    for certification in report.certifications:
        result = verify_tool_certification(certification, anchors)
        if result.ok:
            roots.add(result.root_key_id)
    return ThresholdCheck(satisfied=len(roots) >= threshold, distinct_roots=len(roots))


def resolve_tags(policy: Policy, final_report: CdiReport) -> dict[str, TagResolution]:
    """Resolve each required tag against the final report's verified properties.

    A tag is satisfied when its mapped property set intersects the union of
    properties from certifications that verify under the policy's anchors;
    the witness lists that intersection.
    """
    verified: set[str] = set()
    for certification in final_report.certifications:
        if verify_tool_certification(certification, policy.anchors).ok:
            verified.update(certification.properties.properties)
    resolutions = {}
    for tag in policy.required_tags:
        mapped = policy.tag_map.get(tag, ())
        witness = tuple(sorted(set(mapped) & verified))
        resolutions[tag] = TagResolution(satisfied=bool(witness), witness=witness)
    return resolutions


def _provenance_detail(result: ProvenanceVerification) -> str:
    if result.failed_report_id is None:
        return f"provenance verification failed: {result.reason}"
    return f"provenance verification failed: {result.reason} (report {result.failed_report_id})"


def evaluate(policy: Policy, bundle: Bundle, artifact_digest: Digest) -> Decision:
    """Evaluate a bundle against a policy.

    accept-all admits regardless and reports whatever trace could be
    established.  default-deny admits only when provenance verifies and every
    operation rule and required tag holds; each violated rule contributes one
    reason, collected in deterministic order (provenance, then per-report
    rules inputs-first, then tags).
    """
    result = verify_provenance(bundle, artifact_digest, policy.anchors)
    if policy.mode == MODE_ACCEPT_ALL:
        return Decision(ADMIT, (), result.trace)

    reasons: list[Reason] = []
    if not result.ok:
        reasons.append(Reason(RULE_PROVENANCE, result.failed_report_id, _provenance_detail(result)))
    else:
        for entry in result.trace:
            report = bundle.reports[entry.report_id]
            kind = report.metadata.operation_kind
            rule = policy.rule_for(kind)
            threshold_result = check_threshold(report, rule.threshold, policy.anchors)
            if not threshold_result.satisfied:
                reasons.append(
                    Reason(
                        RULE_THRESHOLD,
                        entry.report_id,
                        f"operation {kind!r} requires {rule.threshold} distinct anchored "
                        f"roots, found {threshold_result.distinct_roots}",
                    )
                )
            missing = [name for name in rule.required_properties if name not in entry.properties]
            if missing:
                reasons.append(
                    Reason(
                        RULE_REQUIRED_PROPERTIES,
                        entry.report_id,
                        f"operation {kind!r} is missing required properties: {', '.join(missing)}",
                    )
                )
        final_report = bundle.reports[bundle.final_report_id]
        resolutions = resolve_tags(policy, final_report)
        for tag in policy.required_tags:
            resolution = resolutions[tag]
            if not resolution.satisfied:
                mapped = ", ".join(policy.tag_map[tag])
                reasons.append(
                    Reason(
                        RULE_TAG,
                        bundle.final_report_id,
                        f"required tag {tag} needs one of: {mapped}",
                    )
                )

    verdict = ADMIT if not reasons else DENY
    return Decision(verdict, tuple(reasons), result.trace)
