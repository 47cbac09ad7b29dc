"""HTTP admission service.

A thin, stateless front end over the policy engine: POST a bundle and an
artifact digest, get back the same Decision the CLI would produce, as JSON,
with the HTTP status carrying the verdict (200 admit, 403 deny).  The policy
is loaded once at startup and swapped atomically on reload; requests already
being evaluated finish under the policy they started with.

One JSON line per decision is logged to stderr.
"""

from __future__ import annotations

import asyncio
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool

from . import jsonio
from .crypto import Digest
from .errors import CdiError, FormatError
from .policy import Policy, evaluate, load_policy
from .provenance import Bundle

logger = logging.getLogger("cdi.service")

DEFAULT_MAX_BUNDLE_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class AdmitRequest:
    """Body of POST /v1/admit: the artifact digest and the bundle, inline."""

    artifact_digest: Digest
    bundle: Bundle

    @classmethod
    def from_json_dict(cls, obj: Any) -> "AdmitRequest":
        obj = jsonio.expect_object(obj, "request")
        jsonio.reject_unknown_keys(obj, {"artifact_digest", "bundle"}, "request")
        digest = Digest.from_hex(
            jsonio.get_field(obj, "artifact_digest", "request"), "request.artifact_digest"
        )
        bundle = Bundle.from_json_dict(
            jsonio.get_field(obj, "bundle", "request"), "request.bundle"
        )
        return cls(digest, bundle)


@dataclass(frozen=True)
class _PolicySnapshot:
    policy: Policy
    policy_id: Digest


def _json_response(document: Any, status: int) -> Response:
    # Rendered by hand so responses are deterministic, sorted-key JSON like
    # every other document the package emits.
    return Response(
        content=jsonio.dump_json(document), status_code=status, media_type="application/json"
    )


def create_app(
    policy_path: str | Path, max_bundle_bytes: int = DEFAULT_MAX_BUNDLE_BYTES
) -> FastAPI:
    """Build the service around a policy file.

    The policy is parsed eagerly; a broken file fails startup rather than
    serving denials with a half-configured engine.
    """
    policy_path = Path(policy_path)
    policy, policy_id = load_policy(policy_path)

    app = FastAPI(title="cdi admission service", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.policy_path = policy_path
    app.state.max_bundle_bytes = max_bundle_bytes
    app.state.snapshot = _PolicySnapshot(policy, policy_id)
    app.state.reload_lock = asyncio.Lock()

    @app.get("/healthz")
    async def healthz() -> Response:
        return _json_response({"status": "ok"}, 200)

    @app.get("/v1/policy")
    async def policy_info() -> Response:
        snapshot: _PolicySnapshot = app.state.snapshot
        return _json_response(
            {"policy_id": snapshot.policy_id.hex, "mode": snapshot.policy.mode}, 200
        )

    @app.post("/v1/admit")
    async def admit(request: Request) -> Response:
        limit = app.state.max_bundle_bytes
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > limit:
            return _json_response(
                {"error": "request body too large", "max_bundle_bytes": limit}, 413
            )
        body = await request.body()
        if len(body) > limit:
            return _json_response(
                {"error": "request body too large", "max_bundle_bytes": limit}, 413
            )
        try:
            document = jsonio.parse_json(body, "request")
            admit_request = AdmitRequest.from_json_dict(document)
        except FormatError as exc:
            return _json_response({"error": str(exc), "field": exc.field}, 400)

        # The snapshot is captured once; a concurrent reload cannot change the
        # policy under an evaluation already in flight.
        snapshot: _PolicySnapshot = app.state.snapshot
        decision = await run_in_threadpool(
            evaluate, snapshot.policy, admit_request.bundle, admit_request.artifact_digest
        )
        logger.info(
            jsonio.compact_json(
                {
                    "event": "decision",
                    "verdict": decision.verdict,
                    "artifact_digest": admit_request.artifact_digest.hex,
                    "policy_id": snapshot.policy_id.hex,
                    "reasons": [reason.rule for reason in decision.reasons],
                }
            )
        )
        status = 200 if decision.admitted else 403
        return _json_response(
            {"decision": decision.to_json_dict(), "policy_id": snapshot.policy_id.hex}, status
        )

    @app.post("/v1/reload")
    async def reload() -> Response:
        async with app.state.reload_lock:
            try:
                policy, policy_id = await run_in_threadpool(load_policy, app.state.policy_path)
            except (CdiError, OSError) as exc:
                # The old policy stays in force.
                return _json_response({"error": str(exc)}, 409)
            app.state.snapshot = _PolicySnapshot(policy, policy_id)
        logger.info(
            jsonio.compact_json(
                {"event": "reload", "policy_id": policy_id.hex, "mode": policy.mode}
            )
        )
        return _json_response({"policy_id": policy_id.hex, "mode": policy.mode}, 200)

    return app


def _parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port_text = bind.rpartition(":")
    if not sep or not host:
        raise FormatError("expected HOST:PORT", field="bind")
    if host.startswith("[") and host.endswith("]"):
        host = host[1:-1]
    try:
        port = int(port_text)
    except ValueError:
        raise FormatError(f"invalid port {port_text!r}", field="bind") from None
    if not 0 < port < 65536:
        raise FormatError(f"port {port} out of range", field="bind")
    return host, port


def serve(
    policy_path: str | Path,
    bind: str = "127.0.0.1:8617",
    max_bundle_bytes: int = DEFAULT_MAX_BUNDLE_BYTES,
) -> None:
    """Run the service until interrupted.  Startup fails on a broken policy."""
    import uvicorn

    host, port = _parse_bind(bind)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    app = create_app(policy_path, max_bundle_bytes)
    snapshot: _PolicySnapshot = app.state.snapshot
    logger.info(
        jsonio.compact_json(
            {
                "event": "start",
                "bind": f"{host}:{port}",
                "policy_id": snapshot.policy_id.hex,
                "mode": snapshot.policy.mode,
            }
        )
    )
    uvicorn.run(app, host=host, port=port, log_level="warning", access_log=False)
