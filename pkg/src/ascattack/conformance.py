"""Wire-protocol conformance probes for oracle servers.

Drives a server through the handshake, smoke queries, and deliberate
protocol violations, checking that each answer carries the documented
frame shape and error code.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, OracleTransportError
from .protocol import (
    ERR_BAD_REQUEST,
    ERR_UNSUPPORTED_OBJECTIVE,
    PROTOCOL_VERSION,
    _PipeChannel,
    _SocketChannel,
    decode_tensor,
    default_timeout,
    encode_tensor,
)

__all__ = ["ConformanceReport", "run_conformance"]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ConformanceReport:
    passed: bool
    warnings: list[str] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)


def _open_channel(endpoint: str, timeout: float):
    parts = endpoint.split(":", 2)
    try:
        if parts[0] == "remote" and len(parts) == 3:
            sock = socket.create_connection((parts[1], int(parts[2])), timeout=timeout)
            return _SocketChannel(sock, timeout)
        if parts[0] == "stdio" and len(parts) >= 2:
            cmd = shlex.split(endpoint.split(":", 1)[1])
            proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL
            )
            return _PipeChannel(proc, timeout)
    except OSError as exc:
        raise OracleTransportError(f"cannot reach {endpoint!r}: {exc}") from exc
    raise ContractViolationError(f"unparseable endpoint {endpoint!r}")


def _probe_image_payload() -> dict:
    rng = np.random.default_rng(20_240_101)
    image = rng.uniform(0.2, 0.8, size=(8, 8, 3))
    return {
        "image": encode_tensor(image),
        "objective": {"kind": "vanishing", "target": {"bbox": [1, 1, 6, 6], "category": 0}},
    }


def run_conformance(endpoint: str, timeout_ms: int | None = None) -> ConformanceReport:
    """Run every conformance probe against a live endpoint."""
    timeout = timeout_ms / 1000.0 if timeout_ms else default_timeout()
    report = ConformanceReport(passed=True)
    chan = _open_channel(endpoint, timeout)
    next_id = 0

    def send_raw(text: str):
        chan.send_line(text)
        return json.loads(chan.recv_line())

    def call(op: str, payload: dict, req_id: int | None = None):
        nonlocal next_id
        if req_id is None:
            next_id += 1
            req_id = next_id
        else:
            next_id = max(next_id, req_id)
        return send_raw(json.dumps({"id": req_id, "op": op, "payload": payload}))

    def check(name: str, ok: bool, detail: str = ""):
        report.checks.append(Check(name, bool(ok), detail))
        if not ok:
            report.passed = False

    try:
        # handshake
        resp = call("hello", {"protocol_version": PROTOCOL_VERSION})
        caps = (resp.get("payload") or {}).get("capabilities") or {}
        check(
            "handshake",
            resp.get("op") == "hello"
            and resp.get("id") == next_id
            and (resp.get("payload") or {}).get("protocol_version") == PROTOCOL_VERSION,
            json.dumps(caps),
        )
        objectives = caps.get("objectives") or []
        has_grad = bool(caps.get("grad"))
        if not has_grad:
            report.warnings.append("server is forward-only: grad capability not advertised")

        # eval smoke test
        payload = _probe_image_payload()
        if "vanishing" not in objectives and objectives:
            payload["objective"]["kind"] = objectives[0]
        resp = call("eval", payload)
        ok = resp.get("op") == "eval" and resp.get("id") == next_id
        value = (resp.get("payload") or {}).get("value")
        detections = (resp.get("payload") or {}).get("detections")
        ok = ok and isinstance(value, float) and np.isfinite(value) and isinstance(detections, list)
        check("eval-smoke", ok, f"value={value!r}")

        # grad smoke test
        if has_grad:
            resp = call("grad", payload)
            ok = resp.get("op") == "grad" and resp.get("id") == next_id
            if ok:
                try:
                    grad = decode_tensor((resp.get("payload") or {})["grad"])
                    ok = grad.shape == (8, 8, 3)
                except (KeyError, ContractViolationError) as exc:
                    ok, value = False, str(exc)
            check("grad-smoke", ok)

        # error probes
        resp = call("definitely-not-an-op", {})
        check(
            "error-unknown-op",
            resp.get("op") == "error"
            and (resp.get("payload") or {}).get("code") == ERR_BAD_REQUEST,
            json.dumps(resp.get("payload")),
        )

        resp = send_raw("this is not json")
        check(
            "error-malformed-frame",
            resp.get("op") == "error"
            and (resp.get("payload") or {}).get("code") == ERR_BAD_REQUEST,
            json.dumps(resp.get("payload")),
        )

        bad = _probe_image_payload()
        bad["objective"]["kind"] = "no-such-objective"
        resp = call("eval", bad)
        check(
            "error-unsupported-objective",
            resp.get("op") == "error"
            and (resp.get("payload") or {}).get("code") == ERR_UNSUPPORTED_OBJECTIVE,
            json.dumps(resp.get("payload")),
        )

        resp = call("eval", payload, req_id=1)  # id regression
        check(
            "error-id-regression",
            resp.get("op") == "error"
            and (resp.get("payload") or {}).get("code") == ERR_BAD_REQUEST,
            json.dumps(resp.get("payload")),
        )

        resp = call("bye", {})
        check("bye", resp.get("op") == "bye" and resp.get("id") == next_id)
    except (OracleTransportError, json.JSONDecodeError, OSError) as exc:
        # connection died mid-run: record it; the initial connect raising
        # is the caller's transport-error signal
        report.passed = False
        report.checks.append(Check("transport", False, str(exc)))
    finally:
        chan.close()
    return report
