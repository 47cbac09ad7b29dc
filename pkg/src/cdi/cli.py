"""Command line interface.

Subcommands cover the whole pipeline: key generation, authority setup,
tool certification, wrapping a build step so it emits a signed report,
bundling, verification, and policy evaluation.  Every subcommand writes one
machine-readable JSON document to stdout; diagnostics go to stderr.

Exit codes: 0 success/admit, 2 deny or verification failure, 3 malformed
input, and a failing wrapped command propagates its own exit code.

The CDI_CLOCK environment variable, when set to an integer, fixes the epoch
timestamp recorded in reports; together with seeded key generation and
deterministic signing this makes whole pipeline runs byte-reproducible.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path
from typing import Any, Iterable

from . import jsonio
from .authority import (
    AuthorityChain,
    PropertySet,
    ToolCertification,
    ToolDescriptor,
    TrustAnchorSet,
    certify_authority,
    certify_tool,
    create_root_authority,
)
from .crypto import (
    Digest,
    generate_keypair,
    hash_file,
    load_signing_key,
    load_verifying_key,
    write_signing_key,
    write_verifying_key,
)
from .errors import CdiError, FormatError
from .policy import evaluate, load_policy
from .provenance import (
    Bundle,
    CdiReport,
    OperationMetadata,
    build_bundle,
    create_report,
    verify_provenance,
)

EXIT_OK = 0
EXIT_COMMAND_FAILED = 1
EXIT_DENIED = 2
EXIT_BAD_INPUT = 3

CLOCK_ENV = "CDI_CLOCK"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 means "denied" here, so
    # usage problems are rerouted to the bad-input exit instead.
    def error(self, message):
        raise _UsageError(message)


def _emit(document: Any) -> None:
    sys.stdout.write(jsonio.dump_json(document))


def _diag(message: str) -> None:
    print(f"cdi: {message}", file=sys.stderr)


def _read_json_file(path: str | Path, what: str) -> Any:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc}", field=what) from None
    return jsonio.parse_json(raw, what)


def _write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _load_certifications(paths: Iterable[str]) -> tuple[ToolCertification, ...]:
    return tuple(
        ToolCertification.from_json_dict(_read_json_file(path, "certification"), "certification")
        for path in paths
    )


def _load_reports(paths: Iterable[str]) -> tuple[CdiReport, ...]:
    return tuple(
        CdiReport.from_json_dict(_read_json_file(path, "report"), "report") for path in paths
    )


def _resolve_anchors(values: Iterable[str]) -> TrustAnchorSet:
    """Each anchor is either a 64-hex key id or a verifying key file path."""
    ids = []
    for value in values:
        if len(value) == 64 and set(value) <= set("0123456789abcdef"):
            ids.append(Digest.from_hex(value, "anchor"))
        else:
            ids.append(load_verifying_key(value).key_id)
    return TrustAnchorSet(frozenset(ids))


def _clock() -> int:
    raw = os.environ.get(CLOCK_ENV)
    if raw is None:
        return int(time.time())
    try:
        value = int(raw)
    except ValueError:
        raise FormatError(f"{CLOCK_ENV} must be an integer, got {raw!r}", field=CLOCK_ENV) from None
    if value < 0:
        raise FormatError(f"{CLOCK_ENV} must not be negative", field=CLOCK_ENV)
    return value


def _cmd_keygen(args) -> int:
    seed = args.seed.encode("utf-8") if args.seed is not None else None
    signing, verifying = generate_keypair(seed)
    signing_path = Path(f"{args.out}.key")
    verifying_path = Path(f"{args.out}.pub")
    write_signing_key(signing, signing_path)
    write_verifying_key(verifying, verifying_path)
    _emit(
        {
            "key_id": verifying.key_id.hex,
            "signing_key_file": str(signing_path),
            "verifying_key_file": str(verifying_path),
        }
    )
    return EXIT_OK


def _cmd_va_root(args) -> int:
    key = load_verifying_key(args.key)
    chain = create_root_authority(key)
    _write_text(args.out, jsonio.dump_json(chain.to_json_dict()))
    _emit({"chain_file": str(args.out), "root_key_id": key.key_id.hex})
    return EXIT_OK


def _cmd_va_certify(args) -> int:
    parent_key = load_signing_key(args.key)
    parent_chain = AuthorityChain.from_json_dict(
        _read_json_file(args.chain, "authority_chain"), "authority_chain"
    )
    child_key = load_verifying_key(args.child)
    chain = certify_authority(parent_key, parent_chain, child_key)
    _write_text(args.out, jsonio.dump_json(chain.to_json_dict()))
    _emit(
        {
            "chain_file": str(args.out),
            "root_key_id": chain.root_key.key_id.hex,
            "tail_key_id": chain.tail_key.key_id.hex,
            "depth": len(chain.links),
        }
    )
    return EXIT_OK


def _cmd_tool_certify(args) -> int:
    authority_key = load_signing_key(args.key)
    chain = AuthorityChain.from_json_dict(
        _read_json_file(args.chain, "authority_chain"), "authority_chain"
    )
    tool_key = load_verifying_key(args.tool_key)
    if args.release_key_id is not None:
        release_key_id = Digest.from_hex(args.release_key_id, "release-key-id")
    else:
        release_key_id = tool_key.key_id
    tool = ToolDescriptor(args.tool_name, args.tool_version, release_key_id, tool_key)
    properties = PropertySet.of(args.property)
    certification = certify_tool(authority_key, chain, tool, properties)
    _write_text(args.out, jsonio.dump_json(certification.to_json_dict()))
    _emit(
        {
            "certification_file": str(args.out),
            "tool_name": tool.name,
            "tool_version": tool.version,
            "tool_key_id": tool_key.key_id.hex,
            "properties": list(properties.properties),
        }
    )
    return EXIT_OK


def _cmd_wrap(args) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        raise _UsageError("no command given after the flags; separate it with --")

    signing_key = load_signing_key(args.key)
    certifications = _load_certifications(args.cert)
    input_reports = _load_reports(args.input_report)
    timestamp = _clock()
    # Input files are hashed before the command runs, so the report describes
    # what the tool was given, not what it may have left behind.
    input_digests = {path: hash_file(path) for path in args.input}

    proc = subprocess.run(command, capture_output=True)
    # The wrapped command's streams are forwarded to stderr so this process's
    # stdout stays a single JSON document.
    if proc.stdout:
        sys.stderr.write(proc.stdout.decode(errors="replace"))
    if proc.stderr:
        sys.stderr.write(proc.stderr.decode(errors="replace"))
    if proc.returncode != 0:
        _diag(f"wrapped command exited with status {proc.returncode}; no report written")
        return proc.returncode if proc.returncode > 0 else EXIT_COMMAND_FAILED

    output_path = Path(args.output)
    if not output_path.is_file():
        _diag(f"wrapped command succeeded but produced no output file at {output_path}")
        return EXIT_COMMAND_FAILED
    output_digest = hash_file(output_path)

    metadata = OperationMetadata(
        operation_kind=args.operation,
        tool_invocation=tuple(command),
        input_artifact_digests=input_digests,
        timestamp=timestamp,
    )
    report = create_report(signing_key, certifications, metadata, output_digest, input_reports)
    _write_text(args.report, jsonio.dump_json(report.to_json_dict()))
    _emit(
        {
            "report_file": str(args.report),
            "report_id": report.report_id.hex,
            "output_digest": output_digest.hex,
        }
    )
    return EXIT_OK


def _cmd_bundle(args) -> int:
    final_report = _load_reports([args.final_report])[0]
    reports = _load_reports(args.report)
    artifact_digest = hash_file(args.artifact)
    bundle = build_bundle(artifact_digest, final_report, reports)
    _write_text(args.out, jsonio.dump_json(bundle.to_json_dict()))
    _emit(
        {
            "bundle_file": str(args.out),
            "artifact_digest": artifact_digest.hex,
            "final_report_id": bundle.final_report_id.hex,
            "report_count": len(bundle.reports),
        }
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    bundle = Bundle.from_json_dict(_read_json_file(args.bundle, "bundle"), "bundle")
    artifact_digest = hash_file(args.artifact)
    anchors = _resolve_anchors(args.anchor)
    result = verify_provenance(bundle, artifact_digest, anchors)
    _emit(
        {
            "ok": result.ok,
            "reason": result.reason,
            "failed_report_id": None
            if result.failed_report_id is None
            else result.failed_report_id.hex,
            "trace": [entry.to_json_dict() for entry in result.trace],
        }
    )
    return EXIT_OK if result.ok else EXIT_DENIED


def _cmd_eval(args) -> int:
    policy, policy_id = load_policy(args.policy)
    bundle = Bundle.from_json_dict(_read_json_file(args.bundle, "bundle"), "bundle")
    if args.artifact is not None:
        artifact_digest = hash_file(args.artifact)
    else:
        artifact_digest = Digest.from_hex(args.artifact_digest, "artifact-digest")
    decision = evaluate(policy, bundle, artifact_digest)
    _emit({"decision": decision.to_json_dict(), "policy_id": policy_id.hex})
    return EXIT_OK if decision.admitted else EXIT_DENIED


def _cmd_serve(args) -> int:
    from .service import serve  # deferred so the rest of the CLI stays light

    serve(args.policy, args.bind, args.max_bundle_bytes)
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="cdi", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="generate a signing/verifying keypair")
    p.add_argument("--out", required=True, metavar="PREFIX", help="write PREFIX.key and PREFIX.pub")
    p.add_argument("--seed", help="derive the keypair deterministically from this string")
    p.set_defaults(func=_cmd_keygen)

    p = sub.add_parser("va-root", help="start an authority chain at a root key")
    p.add_argument("--key", required=True, help="root verifying key file")
    p.add_argument("--out", required=True, help="chain file to write")
    p.set_defaults(func=_cmd_va_root)

    p = sub.add_parser("va-certify", help="extend an authority chain to a child authority")
    p.add_argument("--key", required=True, help="parent authority signing key file")
    p.add_argument("--chain", required=True, help="parent authority chain file")
    p.add_argument("--child", required=True, help="child verifying key file")
    p.add_argument("--out", required=True, help="extended chain file to write")
    p.set_defaults(func=_cmd_va_certify)

    p = sub.add_parser("tool-certify", help="certify a tool under an authority chain")
    p.add_argument("--key", required=True, help="authority signing key file")
    p.add_argument("--chain", required=True, help="authority chain file")
    p.add_argument("--tool-name", required=True)
    p.add_argument("--tool-version", required=True)
    p.add_argument("--tool-key", required=True, help="tool report verifying key file")
    p.add_argument("--release-key-id", help="release key id (64 hex); defaults to the tool key id")
    p.add_argument(
        "--property",
        action="append",
        default=[],
        metavar="NAME",
        help="certified property (repeatable, at least one)",
    )
    p.add_argument("--out", required=True, help="certification file to write")
    p.set_defaults(func=_cmd_tool_certify)

    p = sub.add_parser(
        "wrap",
        help="run a command and emit a signed report for it",
        description="Flags first, then the command after a literal --.",
    )
    p.add_argument("--key", required=True, help="tool signing key file")
    p.add_argument(
        "--cert", action="append", default=[], required=False, help="certification file (repeatable)"
    )
    p.add_argument("--operation", required=True, help="operation kind, e.g. compile")
    p.add_argument(
        "--input", action="append", default=[], help="input file the command reads (repeatable)"
    )
    p.add_argument(
        "--input-report",
        action="append",
        default=[],
        help="report file for an input produced by an earlier step (repeatable)",
    )
    p.add_argument("--output", required=True, help="output file the command writes")
    p.add_argument("--report", required=True, help="report file to write")
    p.add_argument("command", nargs=argparse.REMAINDER, help="the command to run, after --")
    p.set_defaults(func=_cmd_wrap)

    p = sub.add_parser("bundle", help="assemble an artifact's bundle from report files")
    p.add_argument("--artifact", required=True, help="artifact file")
    p.add_argument("--final-report", required=True, help="report of the operation that produced it")
    p.add_argument("--report", action="append", default=[], help="further report file (repeatable)")
    p.add_argument("--out", required=True, help="bundle file to write")
    p.set_defaults(func=_cmd_bundle)

    p = sub.add_parser("verify", help="verify a bundle against an artifact")
    p.add_argument("--bundle", required=True, help="bundle file")
    p.add_argument("--artifact", required=True, help="artifact file")
    p.add_argument(
        "--anchor",
        action="append",
        default=[],
        help="trusted root: a 64-hex key id or a verifying key file (repeatable)",
    )
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("eval", help="evaluate a bundle against a policy")
    p.add_argument("--policy", required=True, help="policy file")
    p.add_argument("--bundle", required=True, help="bundle file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--artifact", help="artifact file to hash")
    group.add_argument("--artifact-digest", help="artifact digest, 64 hex")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="run the admission service")
    p.add_argument("--policy", required=True, help="policy file")
    p.add_argument("--bind", default="127.0.0.1:8617", metavar="HOST:PORT")
    p.add_argument(
        "--max-bundle-bytes",
        type=int,
        default=64 * 1024 * 1024,
        help="largest accepted request body (default 64 MiB)",
    )
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        _diag(f"usage error: {exc}")
        return EXIT_BAD_INPUT
    except CdiError as exc:
        _diag(f"error: {exc}")
        return EXIT_BAD_INPUT
    except ValueError as exc:
        _diag(f"error: {exc}")
        return EXIT_BAD_INPUT
    except OSError as exc:
        _diag(f"error: {exc}")
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
