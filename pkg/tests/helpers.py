"""Builders shared across the test modules.

Everything here composes the public API only; no test reaches into module
internals.  Seeded key generation keeps every scenario reproducible.
"""

from __future__ import annotations

import dataclasses
import random

from cdi import (
    AuthorityChain,
    Bundle,
    CdiReport,
    Digest,
    OperationMetadata,
    PropertySet,
    Signature,
    SigningKey,
    ToolCertification,
    ToolDescriptor,
    TrustAnchorSet,
    VerifyingKey,
    build_bundle,
    certify_tool,
    create_report,
    create_root_authority,
    generate_keypair,
    hash_bytes,
)

DEFAULT_TIMESTAMP = 1_700_000_000


def keypair(seed: str) -> tuple[SigningKey, VerifyingKey]:
    return generate_keypair(seed.encode("utf-8"))


@dataclasses.dataclass(frozen=True)
class Setup:
    """One root authority directly certifying one tool."""

    root_sk: SigningKey
    root_vk: VerifyingKey
    chain: AuthorityChain
    tool_sk: SigningKey
    tool_vk: VerifyingKey
    cert: ToolCertification

    @property
    def anchors(self) -> TrustAnchorSet:
        return TrustAnchorSet.from_keys([self.root_vk])


def make_setup(
    root_seed: str = "root",
    tool_seed: str = "tool",
    name: str = "wamrc",
    version: str = "1.0.0",
    properties: tuple[str, ...] = ("REPRODUCIBLE_BUILD", "WASM_SANDBOXING"),
) -> Setup:
    root_sk, root_vk = keypair(root_seed)
    chain = create_root_authority(root_vk)
    tool_sk, tool_vk = keypair(tool_seed)
    tool = ToolDescriptor(name, version, tool_vk.key_id, tool_vk)
    cert = certify_tool(root_sk, chain, tool, PropertySet.of(properties))
    return Setup(root_sk, root_vk, chain, tool_sk, tool_vk, cert)


def make_report(
    setup: Setup,
    kind: str,
    output: bytes,
    inputs: tuple[CdiReport, ...] | list[CdiReport] = (),
    files: dict[str, bytes] | None = None,
    timestamp: int = DEFAULT_TIMESTAMP,
    certs: tuple[ToolCertification, ...] | None = None,
) -> CdiReport:
    if files is None:
        # Leaf reports must hash something they read.
        files = {} if inputs else {"source": b"raw:" + output}
    metadata = OperationMetadata(
        operation_kind=kind,
        tool_invocation=(setup.cert.tool.name, kind),
        input_artifact_digests={name: hash_bytes(data) for name, data in files.items()},
        timestamp=timestamp,
    )
    return create_report(
        setup.tool_sk, certs or (setup.cert,), metadata, hash_bytes(output), tuple(inputs)
    )


def linear_bundle(
    setup: Setup, length: int, artifact: bytes = b"artifact-bytes"
) -> tuple[Bundle, Digest]:
    """``length`` reports in a line; the last one outputs the artifact."""
    reports: list[CdiReport] = []
    for index in range(length):
        output = artifact if index == length - 1 else f"stage-{index}".encode()
        kind = "fetch" if index == 0 else "compile"
        inputs = [reports[-1]] if reports else []
        reports.append(make_report(setup, kind, output, inputs))
    bundle = build_bundle(hash_bytes(artifact), reports[-1], reports)
    return bundle, hash_bytes(artifact)


@dataclasses.dataclass(frozen=True)
class Diamond:
    bundle: Bundle
    artifact_digest: Digest
    leaf1: CdiReport
    leaf2: CdiReport
    mid_a: CdiReport
    mid_b: CdiReport
    final: CdiReport


def diamond_bundle(setup: Setup, artifact: bytes = b"linked-binary") -> Diamond:
    """Two leaves, two middle reports reading both, one sink reading the middles."""
    leaf1 = make_report(setup, "fetch", b"unit-1", files={"src1": b"source-one"})
    leaf2 = make_report(setup, "fetch", b"unit-2", files={"src2": b"source-two"})
    mid_a = make_report(setup, "compile", b"object-a", inputs=[leaf1, leaf2])
    mid_b = make_report(setup, "compile", b"object-b", inputs=[leaf1, leaf2])
    final = make_report(setup, "link", artifact, inputs=[mid_a, mid_b])
    bundle = build_bundle(hash_bytes(artifact), final, [leaf1, leaf2, mid_a, mid_b])
    return Diamond(bundle, hash_bytes(artifact), leaf1, leaf2, mid_a, mid_b, final)


def corrupt_signature(signature: Signature) -> Signature:
    """Flip the last byte: still parses as a signature, never verifies."""
    value = bytearray(signature.value)
    value[-1] ^= 0x01
    return dataclasses.replace(signature, value=bytes(value))


def non_sink_reports(bundle: Bundle) -> list[CdiReport]:
    return [report for rid, report in bundle.reports.items() if rid != bundle.final_report_id]


def rebundle_with_final(bundle: Bundle, new_final: CdiReport) -> Bundle:
    """Swap the sink report and rebuild, the way an attacker rewriting the
    bundle wrapper would."""
    return build_bundle(bundle.artifact_digest, new_final, non_sink_reports(bundle))


# Mutations that must make a bundle fail verification.  Some need more than
# one report, so the generator filters by shape.
_MUTATIONS = (
    "wrong-artifact",
    "drop-report",
    "report-signature",
    "certification-signature",
    "unanchored-root",
    "dangling-input",
    "orphan",
)


def random_bundle_case(
    rng: random.Random,
) -> tuple[Bundle, Digest, TrustAnchorSet, bool, str]:
    """One randomized admission scenario.

    Returns (bundle, artifact_digest, anchors, expected_valid, label); when
    expected_valid is False the label names the planted defect.
    """
    tag = rng.randrange(10**9)
    setup = make_setup(root_seed=f"root-{tag}", tool_seed=f"tool-{tag}")
    shape = rng.choice(("single", "linear", "diamond"))
    artifact = f"artifact-{tag}".encode()
    if shape == "single":
        bundle, digest = linear_bundle(setup, 1, artifact)
    elif shape == "linear":
        bundle, digest = linear_bundle(setup, rng.randrange(2, 5), artifact)
    else:
        diamond = diamond_bundle(setup, artifact)
        bundle, digest = diamond.bundle, diamond.artifact_digest

    if rng.random() < 0.5:
        return bundle, digest, setup.anchors, True, f"valid-{shape}"

    choices = [m for m in _MUTATIONS if m != "drop-report" or len(bundle.reports) > 1]
    mutation = rng.choice(choices)
    final = bundle.reports[bundle.final_report_id]
    anchors = setup.anchors

    if mutation == "wrong-artifact":
        digest = hash_bytes(artifact + b"-tampered")
    elif mutation == "drop-report":
        reports = dict(bundle.reports)
        victim = rng.choice(sorted((rid for rid in reports if rid != bundle.final_report_id), key=lambda d: d.hex))
        del reports[victim]
        bundle = Bundle(bundle.artifact_digest, bundle.final_report_id, reports)
    elif mutation == "report-signature":
        mutated = dataclasses.replace(
            final, report_signature=corrupt_signature(final.report_signature)
        )
        bundle = rebundle_with_final(bundle, mutated)
    elif mutation == "certification-signature":
        cert = dataclasses.replace(
            final.certifications[0],
            authority_signature=corrupt_signature(final.certifications[0].authority_signature),
        )
        mutated = dataclasses.replace(final, certifications=(cert,))
        bundle = rebundle_with_final(bundle, mutated)
    elif mutation == "unanchored-root":
        _, other_vk = keypair(f"stranger-{tag}")
        anchors = TrustAnchorSet.from_keys([other_vk])
    elif mutation == "dangling-input":
        mutated = dataclasses.replace(
            final, input_report_digests=(hash_bytes(f"nowhere-{tag}".encode()),)
        )
        reports = {rid: r for rid, r in bundle.reports.items() if rid != bundle.final_report_id}
        reports[mutated.report_id] = mutated
        bundle = Bundle(bundle.artifact_digest, mutated.report_id, reports)
    elif mutation == "orphan":
        stray = make_report(setup, "fetch", f"stray-{tag}".encode())
        reports = dict(bundle.reports)
        reports[stray.report_id] = stray
        bundle = Bundle(bundle.artifact_digest, bundle.final_report_id, reports)

    return bundle, digest, anchors, False, mutation


def random_policy_document(rng: random.Random, setup: Setup) -> dict:
    """A randomized policy document that always parses.

    Anchors, rules, and tags vary so randomized admission runs cover admit
    and deny outcomes on both valid and broken bundles.
    """
    mode = "accept-all" if rng.random() < 0.5 else "default-deny"
    anchors = []
    if rng.random() < 0.8:
        anchors.append(setup.root_vk.key_id.hex)
    if rng.random() < 0.3:
        anchors.append(hash_bytes(f"noise-{rng.randrange(10**9)}".encode()).hex)
    if mode == "default-deny" and not anchors:
        anchors.append(setup.root_vk.key_id.hex)
    document: dict = {"mode": mode, "anchors": anchors}
    if rng.random() < 0.5:
        document["operation_rules"] = {
            "compile": {
                "required_properties": rng.choice(
                    ([], ["REPRODUCIBLE_BUILD"], ["UNOBTAINABLE_PROPERTY"])
                ),
                "threshold": rng.choice((1, 1, 2)),
            }
        }
    if rng.random() < 0.4:
        document["required_tags"] = ["CODE_SANDBOXING"]
        document["tag_map"] = {
            "CODE_SANDBOXING": rng.choice((["WASM_SANDBOXING"], ["SOME_OTHER_PROPERTY"]))
        }
    if rng.random() < 0.3:
        document["default_threshold"] = rng.choice((1, 2))
    return document
