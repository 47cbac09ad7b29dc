"""Signed operation reports and the provenance graph they form.

Each pipeline operation emits a report: who ran (certifications), what ran
(metadata), what came out (output digest), and which earlier reports fed it
(input report digests).  The tool signs all of that; the report id is the
digest of the whole signed structure, so reports hash-link into a DAG whose
sink describes the deployable artifact.  A bundle is the artifact digest plus
the complete report set, and verification replays every link of that story.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

from . import canonical, jsonio
from .authority import ToolCertification, TrustAnchorSet, verify_tool_certification
from .crypto import Digest, Signature, SigningKey, hash_bytes, sign_payload, verify_signature
from .errors import BundleError, FormatError, GraphError, ReportError

REPORT_SIGNATURE_INVALID = "report-signature-invalid"
ARTIFACT_MISMATCH = "artifact-mismatch"
LINKAGE_MISMATCH = "linkage-mismatch"
MISSING_REPORT = "missing-report"
CYCLE_DETECTED = "cycle-detected"
ORPHAN_REPORT = "orphan-report"


@dataclass(frozen=True)
class OperationMetadata:
    """What a tool did for one operation.

    ``input_artifact_digests`` maps caller-chosen names (usually paths) to
    digests of raw files the operation read.  ``timestamp`` is seconds since
    the epoch; it is signed but carries no verification semantics, so a skewed
    clock can never flip a verdict.  ``attestation_evidence`` is an opaque
    byte string for hardware quotes and the like; empty means absent.
    """

    operation_kind: str
    tool_invocation: tuple[str, ...] = ()
    input_artifact_digests: Mapping[str, Digest] = field(default_factory=dict)
    timestamp: int = 0
    extra: Mapping[str, str] = field(default_factory=dict)
    attestation_evidence: bytes = b""

    def __post_init__(self):
        if not self.operation_kind:
            raise ValueError("operation_kind must be non-empty")
        object.__setattr__(self, "tool_invocation", tuple(self.tool_invocation))
        for arg in self.tool_invocation:
            if not isinstance(arg, str):
                raise ValueError("tool_invocation entries must be strings")
        inputs = dict(self.input_artifact_digests)
        for name, digest in inputs.items():
            if not isinstance(name, str) or not name:
                raise ValueError("input artifact names must be non-empty strings")
            if not isinstance(digest, Digest):
                raise ValueError(f"input artifact {name!r} must map to a digest")
        object.__setattr__(self, "input_artifact_digests", inputs)
        if not isinstance(self.timestamp, int) or isinstance(self.timestamp, bool):
            raise ValueError("timestamp must be an integer")
        if self.timestamp < 0:
            raise ValueError("timestamp must not be negative")
        extra = dict(self.extra)
        for key, value in extra.items():
            if not isinstance(key, str) or not key or not isinstance(value, str):
                raise ValueError("extra entries must map non-empty strings to strings")
        object.__setattr__(self, "extra", extra)
        if self.attestation_evidence is None:
            object.__setattr__(self, "attestation_evidence", b"")

    def to_canonical(self) -> bytes:
        return (
            canonical.encode_str(self.operation_kind)
            + canonical.encode_list(arg.encode("utf-8") for arg in self.tool_invocation)
            + canonical.encode_str_map(
                {name: digest.to_canonical() for name, digest in self.input_artifact_digests.items()}
            )
            + canonical.encode_int(self.timestamp)
            + canonical.encode_str_map({k: v.encode("utf-8") for k, v in self.extra.items()})
            + canonical.length_prefixed(self.attestation_evidence)
        )

    def to_json_dict(self) -> dict:
        return {
            "operation_kind": self.operation_kind,
            "tool_invocation": list(self.tool_invocation),
            "input_artifact_digests": {
                name: digest.hex for name, digest in sorted(self.input_artifact_digests.items())
            },
            "timestamp": self.timestamp,
            "extra": dict(sorted(self.extra.items())),
            "attestation_evidence": jsonio.b64_encode(self.attestation_evidence),
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "metadata") -> "OperationMetadata":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(
            obj,
            {
                "operation_kind",
                "tool_invocation",
                "input_artifact_digests",
                "timestamp",
                "extra",
                "attestation_evidence",
            },
            parent,
        )
        kind = jsonio.expect_str(
            jsonio.get_field(obj, "operation_kind", parent),
            jsonio.field_path(parent, "operation_kind"),
        )
        invocation_path = jsonio.field_path(parent, "tool_invocation")
        invocation = tuple(
            jsonio.expect_str(item, f"{invocation_path}[{index}]")
            for index, item in enumerate(
                jsonio.expect_list(jsonio.get_field(obj, "tool_invocation", parent), invocation_path)
            )
        )
        inputs_path = jsonio.field_path(parent, "input_artifact_digests")
        raw_inputs = jsonio.expect_object(
            jsonio.get_field(obj, "input_artifact_digests", parent), inputs_path
        )
        inputs = {
            name: Digest.from_hex(value, jsonio.field_path(inputs_path, name))
            for name, value in raw_inputs.items()
        }
        timestamp = jsonio.expect_int(
            jsonio.get_field(obj, "timestamp", parent), jsonio.field_path(parent, "timestamp")
        )
        extra_path = jsonio.field_path(parent, "extra")
        raw_extra = jsonio.expect_object(jsonio.get_field(obj, "extra", parent), extra_path)
        extra = {
            key: jsonio.expect_str(value, jsonio.field_path(extra_path, key))
            for key, value in raw_extra.items()
        }
        evidence = jsonio.b64_decode(
            jsonio.get_field(obj, "attestation_evidence", parent),
            jsonio.field_path(parent, "attestation_evidence"),
        )
        try:
            return cls(kind, invocation, inputs, timestamp, extra, evidence)
        except ValueError as exc:
            raise FormatError(str(exc), field=parent) from None


def report_signing_payload(
    certifications: Sequence[ToolCertification],
    metadata: OperationMetadata,
    output_digest: Digest,
    input_report_digests: Sequence[Digest],
) -> bytes:
    """Bytes the tool signs: everything in the report except the signature."""
    return (
        canonical.encode_list(cert.to_canonical() for cert in certifications)
        + canonical.length_prefixed(metadata.to_canonical())
        + canonical.length_prefixed(output_digest.to_canonical())
        + canonical.encode_list(digest.to_canonical() for digest in input_report_digests)
    )


@dataclass(frozen=True)
class CdiReport:
    """One signed operation report.

    The report id is derived, never stored: the digest of the canonical
    encoding including the signature.  Anyone holding the bytes recomputes the
    same id, which is what makes the input links tamper-evident.
    """

    certifications: tuple[ToolCertification, ...]
    metadata: OperationMetadata
    output_digest: Digest
    input_report_digests: tuple[Digest, ...]
    report_signature: Signature

    def __post_init__(self):
        object.__setattr__(self, "certifications", tuple(self.certifications))
        object.__setattr__(self, "input_report_digests", tuple(self.input_report_digests))
        if not self.certifications:
            raise ValueError("a report needs at least one certification")
        first_key = self.certifications[0].tool.report_verifying_key
        for cert in self.certifications[1:]:
            if cert.tool.report_verifying_key != first_key:
                raise ValueError("all certifications must name the same report verifying key")

    @property
    def report_verifying_key(self):
        return self.certifications[0].tool.report_verifying_key

    def signing_payload(self) -> bytes:
        return report_signing_payload(
            self.certifications, self.metadata, self.output_digest, self.input_report_digests
        )

    def to_canonical(self) -> bytes:
        return self.signing_payload() + canonical.length_prefixed(self.report_signature.to_canonical())

    @cached_property
    def report_id(self) -> Digest:
        return hash_bytes(self.to_canonical())

    def to_json_dict(self) -> dict:
        return {
            "certifications": [cert.to_json_dict() for cert in self.certifications],
            "metadata": self.metadata.to_json_dict(),
            "output_digest": self.output_digest.hex,
            "input_report_digests": [digest.hex for digest in self.input_report_digests],
            "report_signature": self.report_signature.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "report") -> "CdiReport":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(
            obj,
            {
                "certifications",
                "metadata",
                "output_digest",
                "input_report_digests",
                "report_signature",
            },
            parent,
        )
        certs_path = jsonio.field_path(parent, "certifications")
        certifications = tuple(
            ToolCertification.from_json_dict(item, f"{certs_path}[{index}]")
            for index, item in enumerate(
                jsonio.expect_list(jsonio.get_field(obj, "certifications", parent), certs_path)
            )
        )
        metadata = OperationMetadata.from_json_dict(
            jsonio.get_field(obj, "metadata", parent), jsonio.field_path(parent, "metadata")
        )
        output = Digest.from_hex(
            jsonio.get_field(obj, "output_digest", parent),
            jsonio.field_path(parent, "output_digest"),
        )
        inputs_path = jsonio.field_path(parent, "input_report_digests")
        inputs = tuple(
            Digest.from_hex(item, f"{inputs_path}[{index}]")
            for index, item in enumerate(
                jsonio.expect_list(jsonio.get_field(obj, "input_report_digests", parent), inputs_path)
            )
        )
        signature = Signature.from_json_dict(
            jsonio.get_field(obj, "report_signature", parent),
            jsonio.field_path(parent, "report_signature"),
        )
        try:
            return cls(certifications, metadata, output, inputs, signature)
        except ValueError as exc:
            raise FormatError(str(exc), field=parent) from None


def create_report(
    tool_key: SigningKey,
    certifications: Sequence[ToolCertification],
    metadata: OperationMetadata,
    output_digest: Digest,
    input_reports: Sequence[CdiReport] = (),
) -> CdiReport:
    """Create and sign a report for one completed operation.

    The signing key must be the report key every certification names.  A leaf
    report (no input reports) must declare at least one input artifact digest
    in its metadata; a report that read nothing hashed has no provenance story
    to tell.
    """
    certifications = tuple(certifications)
    if not certifications:
        raise ReportError("at least one certification is required")
    report_key = tool_key.verifying_key
    for cert in certifications:
        if cert.tool.report_verifying_key != report_key:
            raise ReportError(
                f"certification for {cert.tool.name}@{cert.tool.version} names a different report key"
            )
    if not input_reports and not metadata.input_artifact_digests:
        raise ReportError("a leaf report must declare input artifact digests")
    input_digests = tuple(report.report_id for report in input_reports)
    payload = report_signing_payload(certifications, metadata, output_digest, input_digests)
    signature = sign_payload(tool_key, payload)
    return CdiReport(certifications, metadata, output_digest, input_digests, signature)


@dataclass(frozen=True)
class Bundle:
    """An artifact digest plus the report set that explains it.

    Construction stays permissive on purpose: closure and acyclicity are
    verification results, not constructor guarantees, so a verifier can be
    handed any bundle an adversary can write down.
    """

    artifact_digest: Digest
    final_report_id: Digest
    reports: Mapping[Digest, CdiReport]

    def __post_init__(self):
        object.__setattr__(self, "reports", dict(self.reports))

    def to_json_dict(self) -> dict:
        ordered = sorted(self.reports.values(), key=lambda report: report.report_id.hex)
        return {
            "artifact_digest": self.artifact_digest.hex,
            "final_report_id": self.final_report_id.hex,
            "reports": [report.to_json_dict() for report in ordered],
        }

    @classmethod
    def from_json_dict(cls, obj: Any, parent: str = "bundle") -> "Bundle":
        obj = jsonio.expect_object(obj, parent)
        jsonio.reject_unknown_keys(obj, {"artifact_digest", "final_report_id", "reports"}, parent)
        artifact = Digest.from_hex(
            jsonio.get_field(obj, "artifact_digest", parent),
            jsonio.field_path(parent, "artifact_digest"),
        )
        final = Digest.from_hex(
            jsonio.get_field(obj, "final_report_id", parent),
            jsonio.field_path(parent, "final_report_id"),
        )
        reports_path = jsonio.field_path(parent, "reports")
        reports: dict[Digest, CdiReport] = {}
        for index, item in enumerate(
            jsonio.expect_list(jsonio.get_field(obj, "reports", parent), reports_path)
        ):
            report = CdiReport.from_json_dict(item, f"{reports_path}[{index}]")
            if report.report_id in reports:
                raise FormatError("duplicate report", field=f"{reports_path}[{index}]")
            reports[report.report_id] = report
        return cls(artifact, final, reports)


def build_bundle(
    artifact_digest: Digest, final_report: CdiReport, all_reports: Iterable[CdiReport] = ()
) -> Bundle:
    """Assemble a bundle, keyed by recomputed report ids.

    Fails if two distinct reports collide on an id, or if any referenced
    input report is missing from the set.
    """
    reports: dict[Digest, CdiReport] = {}
    for report in (final_report, *all_reports):
        existing = reports.get(report.report_id)
        if existing is not None and existing != report:
            raise BundleError(f"two different reports share id {report.report_id}")
        reports[report.report_id] = report
    for report in reports.values():
        for digest in report.input_report_digests:
            if digest not in reports:
                raise BundleError(f"report {report.report_id} references missing report {digest}")
    return Bundle(artifact_digest, final_report.report_id, reports)


@dataclass(frozen=True)
class ProvenanceGraph:
    """The report DAG: edges point from a consumer to each report it read."""

    nodes: frozenset[Digest]
    edges: frozenset[tuple[Digest, Digest]]
    roots: frozenset[Digest]
    sink: Digest


def build_graph(bundle: Bundle) -> ProvenanceGraph:
    """Build and structurally validate the provenance graph of a bundle.

    Raises BundleError when the closure is broken, GraphError on a cycle or on
    reports not reachable from the sink.
    """
    if bundle.final_report_id not in bundle.reports:
        raise BundleError(f"final report {bundle.final_report_id} is not in the bundle")
    nodes = frozenset(bundle.reports)
    edges = set()
    for rid, report in bundle.reports.items():
        for digest in report.input_report_digests:
            if digest not in bundle.reports:
                raise BundleError(f"report {rid} references missing report {digest}")
            edges.add((rid, digest))
    roots = frozenset(
        rid for rid, report in bundle.reports.items() if not report.input_report_digests
    )
    graph = ProvenanceGraph(nodes, frozenset(edges), roots, bundle.final_report_id)
    _check_acyclic(graph)
    _check_reachable(graph)
    return graph


def _check_acyclic(graph: ProvenanceGraph) -> None:
    order = _kahn_order(graph)
    if len(order) != len(graph.nodes):
        stuck = min(graph.nodes - set(order), key=lambda digest: digest.hex)
        raise GraphError(
            f"provenance graph has a cycle through {stuck}", CYCLE_DETECTED, report_id=stuck
        )


def _check_reachable(graph: ProvenanceGraph) -> None:
    seen = {graph.sink}
    frontier = [graph.sink]
    inputs_of: dict[Digest, list[Digest]] = {}
    for consumer, producer in graph.edges:
        inputs_of.setdefault(consumer, []).append(producer)
    while frontier:
        current = frontier.pop()
        for producer in inputs_of.get(current, ()):
            if producer not in seen:
                seen.add(producer)
                frontier.append(producer)
    orphans = graph.nodes - seen
    if orphans:
        orphan = min(orphans, key=lambda digest: digest.hex)
        raise GraphError(
            f"report {orphan} is not reachable from the sink", ORPHAN_REPORT, report_id=orphan
        )


def _kahn_order(graph: ProvenanceGraph) -> list[Digest]:
    # Inputs come before consumers; ties break on report id hex so the order
    # is identical on every run and every machine.
    consumers_of: dict[Digest, list[Digest]] = {}
    pending: dict[Digest, int] = {node: 0 for node in graph.nodes}
    for consumer, producer in graph.edges:
        consumers_of.setdefault(producer, []).append(consumer)
        pending[consumer] += 1
    heap = [node.hex for node, count in pending.items() if count == 0]
    heapq.heapify(heap)
    by_hex = {node.hex: node for node in graph.nodes}
    order: list[Digest] = []
    while heap:
        node = by_hex[heapq.heappop(heap)]
        order.append(node)
        for consumer in consumers_of.get(node, ()):
            pending[consumer] -= 1
            if pending[consumer] == 0:
                heapq.heappush(heap, consumer.hex)
    return order


def topological_order(graph: ProvenanceGraph) -> list[Digest]:
    """Deterministic topological order of the report DAG, inputs first."""
    order = _kahn_order(graph)
    if len(order) != len(graph.nodes):
        stuck = min(graph.nodes - set(order), key=lambda digest: digest.hex)
        raise GraphError(
            f"provenance graph has a cycle through {stuck}", CYCLE_DETECTED, report_id=stuck
        )
    return order


@dataclass(frozen=True)
class AuditEntry:
    """What verification established about one report."""

    report_id: Digest
    tool_name: str
    tool_version: str
    properties: tuple[str, ...]
    root_key_ids: tuple[Digest, ...]

    def to_json_dict(self) -> dict:
        return {
            "report_id": self.report_id.hex,
            "tool_name": self.tool_name,
            "tool_version": self.tool_version,
            "properties": list(self.properties),
            "root_key_ids": [digest.hex for digest in self.root_key_ids],
        }


@dataclass(frozen=True)
class ProvenanceVerification:
    """Outcome of replaying a bundle's provenance story.

    On failure the trace still carries whatever was established for each
    report (possibly nothing), so a denial can be audited; it is empty only
    when the bundle is too broken to order.
    """

    ok: bool
    trace: tuple[AuditEntry, ...] = ()
    failed_report_id: Digest | None = None
    reason: str | None = None


def _audit_report(
    report: CdiReport, anchors: TrustAnchorSet
) -> tuple[AuditEntry, str | None]:
    """Check one report's certifications and signature.

    Returns the audit entry plus the first failure reason, or None if the
    report holds up.
    """
    results = [verify_tool_certification(cert, anchors) for cert in report.certifications]
    verified = [
        (cert, result) for cert, result in zip(report.certifications, results) if result.ok
    ]
    properties: set[str] = set()
    roots: set[Digest] = set()
    for cert, result in verified:
        properties.update(cert.properties.properties)
        roots.add(result.root_key_id)
    tool = report.certifications[0].tool
    entry = AuditEntry(
        report_id=report.report_id,
        tool_name=tool.name,
        tool_version=tool.version,
        properties=tuple(sorted(properties)),
        root_key_ids=tuple(sorted(roots, key=lambda digest: digest.hex)),
    )
    if not verified:
        # Surface the first certification's own failure; with several failing
        # certifications the first one decides the reported reason.
        return entry, results[0].reason
    if not verify_signature(
        report.report_signature, report.signing_payload(), report.report_verifying_key
    ):
        return entry, REPORT_SIGNATURE_INVALID
    return entry, None


def verify_provenance(
    bundle: Bundle, artifact_digest: Digest, anchors: TrustAnchorSet
) -> ProvenanceVerification:
    """Verify a bundle end to end against an artifact digest.

    Checks, in order: the report set is closed over input references; the
    graph is acyclic with every report reachable from the sink; each report
    (inputs before consumers) sits under its claimed id, carries at least one
    certification verifying to an anchored root, and is signed by the
    certified report key; and the artifact digest matches both the bundle
    claim and the sink report's output digest.  The first failure wins and is
    reported with the offending report id.
    """
    if bundle.final_report_id not in bundle.reports:
        return ProvenanceVerification(
            ok=False, failed_report_id=bundle.final_report_id, reason=MISSING_REPORT
        )
    for rid in sorted(bundle.reports, key=lambda digest: digest.hex):
        for digest in bundle.reports[rid].input_report_digests:
            if digest not in bundle.reports:
                return ProvenanceVerification(ok=False, failed_report_id=digest, reason=MISSING_REPORT)
    try:
        graph = build_graph(bundle)
    except GraphError as exc:
        return ProvenanceVerification(ok=False, failed_report_id=exc.report_id, reason=exc.reason)
    order = topological_order(graph)

    entries = []
    failure: tuple[Digest, str] | None = None
    for rid in order:
        report = bundle.reports[rid]
        entry_reason: str | None = None
        if report.report_id != rid:
            # The bundle's map lies about where this report lives.
            entry_reason = LINKAGE_MISMATCH
        entry, audit_reason = _audit_report(report, anchors)
        if entry_reason is None:
            entry_reason = audit_reason
        entries.append(entry)
        if failure is None and entry_reason is not None:
            failure = (rid, entry_reason)
    trace = tuple(entries)
    if failure is not None:
        return ProvenanceVerification(
            ok=False, trace=trace, failed_report_id=failure[0], reason=failure[1]
        )

    final_report = bundle.reports[bundle.final_report_id]
    if bundle.artifact_digest != artifact_digest or final_report.output_digest != artifact_digest:
        return ProvenanceVerification(
            ok=False, trace=trace, failed_report_id=bundle.final_report_id, reason=ARTIFACT_MISMATCH
        )
    return ProvenanceVerification(ok=True, trace=trace)
