"""Signed provenance reports and admission control for deployment pipelines.

Build tools run wrapped so every operation leaves a signed report; reports
hash-link into a provenance graph whose sink describes the deployable
artifact; a policy engine (library, CLI, or HTTP service) decides before
deployment whether that story is good enough.
"""

from .authority import (
    AuthorityChain,
    CertificationVerification,
    ChainLink,
    ChainVerification,
    MAX_CHAIN_DEPTH,
    PropertySet,
    ToolCertification,
    ToolDescriptor,
    TrustAnchorSet,
    certify_authority,
    certify_tool,
    create_root_authority,
    is_valid_property,
    verify_authority_chain,
    verify_tool_certification,
)
from .canonical import canonical_encode
from .crypto import (
    Digest,
    HASH_ALGORITHM,
    SIGNATURE_ALGORITHM,
    Signature,
    SigningKey,
    VerifyingKey,
    generate_keypair,
    hash_bytes,
    hash_file,
    load_signing_key,
    load_verifying_key,
    sign_payload,
    verify_signature,
    write_signing_key,
    write_verifying_key,
)
from .errors import (
    BundleError,
    CdiError,
    CertificationError,
    EncodingError,
    FormatError,
    GraphError,
    KeyMaterialError,
    PolicyParseError,
    ReportError,
)
from .policy import (
    Decision,
    OperationRule,
    Policy,
    Reason,
    TagResolution,
    ThresholdCheck,
    check_threshold,
    evaluate,
    load_policy,
    parse_policy,
    resolve_tags,
)
from .provenance import (
    AuditEntry,
    Bundle,
    CdiReport,
    OperationMetadata,
    ProvenanceGraph,
    ProvenanceVerification,
    build_bundle,
    build_graph,
    create_report,
    topological_order,
    verify_provenance,
)

__version__ = "0.1.0"

__all__ = [
    "AuditEntry",
    "AuthorityChain",
    "Bundle",
    "BundleError",
    "CdiError",
    "CdiReport",
    "CertificationError",
    "CertificationVerification",
    "ChainLink",
    "ChainVerification",
    "Decision",
    "Digest",
    "EncodingError",
    "FormatError",
    "GraphError",
    "HASH_ALGORITHM",
    "KeyMaterialError",
    "MAX_CHAIN_DEPTH",
    "OperationMetadata",
    "OperationRule",
    "Policy",
    "PolicyParseError",
    "PropertySet",
    "ProvenanceGraph",
    "ProvenanceVerification",
    "Reason",
    "ReportError",
    "SIGNATURE_ALGORITHM",
    "Signature",
    "SigningKey",
    "TagResolution",
    "ThresholdCheck",
    "ToolCertification",
    "ToolDescriptor",
    "TrustAnchorSet",
    "VerifyingKey",
    "build_bundle",
    "build_graph",
    "canonical_encode",
    "certify_authority",
    "certify_tool",
    "check_threshold",
    "create_report",
    "create_root_authority",
    "evaluate",
    "generate_keypair",
    "hash_bytes",
    "hash_file",
    "is_valid_property",
    "load_policy",
    "load_signing_key",
    "load_verifying_key",
    "parse_policy",
    "resolve_tags",
    "sign_payload",
    "topological_order",
    "verify_authority_chain",
    "verify_provenance",
    "verify_signature",
    "verify_tool_certification",
    "write_signing_key",
    "write_verifying_key",
]
