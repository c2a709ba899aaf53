"""Newline-delimited JSON wire protocol for remote gradient oracles.

One JSON object per line, UTF-8, over TCP or a child process's stdio.
Every message is ``{"id": N, "op": ..., "payload": {...}}``; responses echo
the request id and op, errors use op "error" with a numeric code. Tensors
travel as base64-encoded little-endian float32, row-major.

Error codes: 1 bad-request, 2 unsupported-objective, 3 internal, 4 shutdown.
"""

from __future__ import annotations

import base64
import json
import os
import selectors
import socket
import socketserver
import subprocess
import sys
import threading
from typing import Optional, Sequence

import numpy as np

from .core import Detection, ImagePlane, ObjectTarget
from .errors import (
    CapabilityError,
    ContractViolationError,
    OracleTransportError,
    ProtocolViolationError,
)
from .oracles.base import OBJECTIVE_KINDS, Objective, Oracle, OracleReport

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 30.0
TIMEOUT_ENV_VAR = "ASC_ORACLE_TIMEOUT_MS"

ERR_BAD_REQUEST = 1
ERR_UNSUPPORTED_OBJECTIVE = 2
ERR_INTERNAL = 3
ERR_SHUTDOWN = 4

__all__ = [
    "PROTOCOL_VERSION",
    "encode_tensor",
    "decode_tensor",
    "encode_image",
    "decode_image",
    "RemoteOracle",
    "connect_tcp",
    "spawn_stdio",
    "OracleTCPServer",
    "serve_stdio",
    "default_timeout",
]


def default_timeout() -> float:
    ms = os.environ.get(TIMEOUT_ENV_VAR)
    if ms:
        return max(float(ms) / 1000.0, 0.001)
    return DEFAULT_TIMEOUT_S


# --- tensor / message codecs -------------------------------------------------


def encode_tensor(arr: np.ndarray) -> dict:
    """Base64 little-endian float32 encoding with explicit dims."""
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "dtype": "float32",
        "dims": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_tensor(payload: dict) -> np.ndarray:
    if payload.get("dtype") != "float32":
        raise ContractViolationError(f"unsupported dtype {payload.get('dtype')!r}")
    dims = payload.get("dims")
    if not isinstance(dims, list) or not all(isinstance(d, int) and d > 0 for d in dims):
        raise ContractViolationError(f"bad dims {dims!r}")
    raw = base64.b64decode(payload.get("data", ""), validate=True)
    expected = int(np.prod(dims)) * 4
    if len(raw) != expected:
        raise ContractViolationError(
            f"tensor byte length {len(raw)} does not match dims {dims} (expected {expected})"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
    if not np.isfinite(arr).all():
        raise ContractViolationError("tensor contains non-finite values")
    return arr


def encode_image(image: ImagePlane) -> dict:
    return encode_tensor(image.values)


def decode_image(payload: dict) -> ImagePlane:
    arr = decode_tensor(payload)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractViolationError(f"image dims must be HxWx3, got {arr.shape}")
    return ImagePlane(np.clip(arr, 0.0, 1.0))


def encode_objective(objective: Objective) -> dict:
    t = objective.target
    return {
        "kind": objective.kind,
        "target": {"bbox": list(t.bbox), "category": t.category},
    }


def decode_objective(payload: dict) -> Objective:
    kind = payload.get("kind")
    if kind not in OBJECTIVE_KINDS or kind == "ensemble":
        raise CapabilityError(f"objective kind {kind!r} not supported over the wire")
    t = payload.get("target") or {}
    bbox = t.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise ContractViolationError(f"bad target bbox {bbox!r}")
    target = ObjectTarget(bbox=tuple(bbox), category=int(t.get("category", 0)))
    return Objective(kind=kind, target=target)


def encode_detections(detections: Sequence[Detection]) -> list[dict]:
    return [
        {"bbox": list(d.bbox), "score": d.score, "category": d.category}
        for d in detections
    ]


def decode_detections(items) -> tuple[Detection, ...]:
    out = []
    for d in items or []:
        out.append(
            Detection(
                bbox=tuple(d["bbox"]),
                score=min(max(float(d["score"]), 0.0), 1.0),
                category=int(d["category"]),
            )
        )
    return tuple(out)


# --- line channels -----------------------------------------------------------


class _SocketChannel:
    def __init__(self, sock: socket.socket, timeout: float):
        self.sock = sock
        self.timeout = timeout
        self._buf = b""
        sock.settimeout(timeout)

    def send_line(self, text: str):
        try:
            self.sock.sendall(text.encode("utf-8") + b"\n")
        except OSError as exc:
            raise OracleTransportError(f"send failed: {exc}") from exc

    def recv_line(self) -> str:
        while b"\n" not in self._buf:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout as exc:
                raise OracleTransportError(
                    f"timed out after {self.timeout}s waiting for response"
                ) from exc
            except OSError as exc:
                raise OracleTransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise OracleTransportError("connection closed by peer")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class _PipeChannel:
    """Line channel over a child process's stdin/stdout."""

    def __init__(self, proc: subprocess.Popen, timeout: float):
        self.proc = proc
        self.timeout = timeout
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        os.set_blocking(proc.stdout.fileno(), False)
        self._sel.register(proc.stdout, selectors.EVENT_READ)

    def send_line(self, text: str):
        try:
            self.proc.stdin.write(text.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise OracleTransportError(f"send to child failed: {exc}") from exc

    def recv_line(self) -> str:
        while b"\n" not in self._buf:
            if not self._sel.select(timeout=self.timeout):
                raise OracleTransportError(
                    f"timed out after {self.timeout}s waiting for child response"
                )
            chunk = self.proc.stdout.read(65536)
            if chunk is None:
                continue
            if chunk == b"":
                raise OracleTransportError("child process closed its stdout")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self):
        self._sel.close()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.terminate()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


# --- client ------------------------------------------------------------------


class RemoteOracle(Oracle):
    """Engine-side oracle backed by a protocol connection.

    One logical session per connection with strict request/response
    alternation; parallel callers must open separate connections.
    """

    def __init__(self, channel, timeout: Optional[float] = None):
        self._chan = channel
        self._next_id = 0
        self._closed = False
        caps = self._call("hello", {"protocol_version": PROTOCOL_VERSION})
        version = caps.get("protocol_version")
        if version != PROTOCOL_VERSION:
            self.close(send_bye=False)
            raise ProtocolViolationError(
                f"server protocol_version {version!r} != {PROTOCOL_VERSION}"
            )
        capabilities = caps.get("capabilities") or {}
        self.supports_gradient = bool(capabilities.get("grad", False))
        self.supported_objectives = tuple(capabilities.get("objectives") or ())
        self.capabilities = capabilities

    def _call(self, op: str, payload: dict) -> dict:
        if self._closed:
            raise OracleTransportError("connection already closed")
        self._next_id += 1
        req_id = self._next_id
        self._chan.send_line(json.dumps({"id": req_id, "op": op, "payload": payload}))
        line = self._chan.recv_line()
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close(send_bye=False)
            raise ProtocolViolationError(f"unparseable response frame: {exc}") from exc
        if msg.get("op") == "error":
            p = msg.get("payload") or {}
            code = p.get("code")
            text = f"server error {code}: {p.get('message')}"
            if code == ERR_UNSUPPORTED_OBJECTIVE:
                raise CapabilityError(text)
            raise OracleTransportError(text, code=code)
        if msg.get("id") != req_id:
            self.close(send_bye=False)
            raise ProtocolViolationError(
                f"response id {msg.get('id')!r} does not match request id {req_id}"
            )
        if msg.get("op") != op:
            self.close(send_bye=False)
            raise ProtocolViolationError(f"response op {msg.get('op')!r} != {op!r}")
        return msg.get("payload") or {}

    def report(self, image: ImagePlane, objective: Objective, want_grad: bool = False) -> OracleReport:
        self._check(objective, want_grad)
        payload = {"image": encode_image(image), "objective": encode_objective(objective)}
        ev = self._call("eval", payload)
        grad = None
        if want_grad:
            gr = self._call("grad", payload)
            grad = decode_tensor(gr["grad"])
            if grad.shape != image.values.shape:
                raise ProtocolViolationError(
                    f"gradient dims {grad.shape} do not match image {image.values.shape}"
                )
        return OracleReport(
            value=float(ev["value"]),
            detections=decode_detections(ev.get("detections")),
            grad=grad,
        )

    def close(self, send_bye: bool = True):
        if self._closed:
            return
        if send_bye:
            try:
                self._call("bye", {})
            except Exception:
                pass
        self._closed = True
        self._chan.close()


def connect_tcp(host: str, port: int, timeout: Optional[float] = None) -> RemoteOracle:
    """Open a TCP connection to an oracle server and run the handshake."""
    timeout = timeout if timeout is not None else default_timeout()
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise OracleTransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    return RemoteOracle(_SocketChannel(sock, timeout))


def spawn_stdio(cmd: Sequence[str], timeout: Optional[float] = None) -> RemoteOracle:
    """Launch a child-process oracle speaking the protocol on its stdio."""
    timeout = timeout if timeout is not None else default_timeout()
    try:
        proc = subprocess.Popen(
            list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL
        )
    except OSError as exc:
        raise OracleTransportError(f"cannot spawn {cmd!r}: {exc}") from exc
    return RemoteOracle(_PipeChannel(proc, timeout))


# --- server ------------------------------------------------------------------


class _ServerSession:
    """Per-connection protocol state machine shared by TCP and stdio servers."""

    def __init__(self, oracle: Oracle):
        self.oracle = oracle
        self.last_id = 0
        self.done = False

    def _error(self, req_id, code: int, message: str) -> dict:
        return {"id": req_id, "op": "error", "payload": {"code": code, "message": message}}

    def handle_line(self, line: str) -> Optional[dict]:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(None, ERR_BAD_REQUEST, f"unparseable frame: {exc}")
        if not isinstance(msg, dict):
            return self._error(None, ERR_BAD_REQUEST, "frame must be a JSON object")
        req_id = msg.get("id")
        op = msg.get("op")
        if not isinstance(req_id, int) or req_id <= self.last_id:
            return self._error(req_id, ERR_BAD_REQUEST, "ids must be strictly increasing integers")
        self.last_id = req_id
        payload = msg.get("payload") or {}
        try:
            if op == "hello":
                if payload.get("protocol_version") != PROTOCOL_VERSION:
                    return self._error(
                        req_id, ERR_BAD_REQUEST,
                        f"unsupported protocol_version {payload.get('protocol_version')!r}",
                    )
                return {
                    "id": req_id,
                    "op": "hello",
                    "payload": {
                        "protocol_version": PROTOCOL_VERSION,
                        "capabilities": {
                            "eval": True,
                            "grad": self.oracle.supports_gradient,
                            "objectives": list(self.oracle.supported_objectives),
                        },
                    },
                }
            if op == "bye":
                self.done = True
                return {"id": req_id, "op": "bye", "payload": {}}
            if op not in ("eval", "grad"):
                return self._error(req_id, ERR_BAD_REQUEST, f"unknown op {op!r}")
            objective = decode_objective(payload.get("objective") or {})
            if objective.kind not in self.oracle.supported_objectives:
                return self._error(
                    req_id, ERR_UNSUPPORTED_OBJECTIVE, f"objective {objective.kind!r} unsupported"
                )
            image = decode_image(payload.get("image") or {})
            if op == "eval":
                rep = self.oracle.evaluate(image, objective)
                return {
                    "id": req_id,
                    "op": "eval",
                    "payload": {
                        "value": rep.value,
                        "detections": encode_detections(rep.detections),
                    },
                }
            if not self.oracle.supports_gradient:
                return self._error(req_id, ERR_UNSUPPORTED_OBJECTIVE, "oracle is forward-only")
            grad = self.oracle.gradient(image, objective)
            return {"id": req_id, "op": "grad", "payload": {"grad": encode_tensor(grad)}}
        except CapabilityError as exc:
            return self._error(req_id, ERR_UNSUPPORTED_OBJECTIVE, str(exc))
        except ContractViolationError as exc:
            return self._error(req_id, ERR_BAD_REQUEST, str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            return self._error(req_id, ERR_INTERNAL, f"{type(exc).__name__}: {exc}")


class OracleTCPServer(socketserver.ThreadingTCPServer):
    """Serves one engine oracle to any number of protocol connections."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, oracle: Oracle, host: str = "127.0.0.1", port: int = 0):
        self.oracle = oracle
        self.shutting_down = False
        super().__init__((host, port), _TCPHandler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def stop(self):
        self.shutting_down = True
        self.shutdown()
        self.server_close()


class _TCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = _ServerSession(self.server.oracle)
        while not session.done:
            line = self.rfile.readline()
            if not line:
                break
            text = line.decode("utf-8", errors="replace").strip()
            if not text:
                continue
            if self.server.shutting_down:
                response = session._error(None, ERR_SHUTDOWN, "server shutting down")
                session.done = True
            else:
                response = session.handle_line(text)
            self.wfile.write(json.dumps(response).encode("utf-8") + b"\n")
            self.wfile.flush()


def serve_stdio(oracle: Oracle, stdin=None, stdout=None):
    """Child-process mode: answer protocol frames on stdio until bye/EOF."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    session = _ServerSession(oracle)
    while not session.done:
        line = stdin.readline()
        if not line:
            break
        text = line.decode("utf-8", errors="replace").strip()
        if not text:
            continue
        response = session.handle_line(text)
        stdout.write(json.dumps(response).encode("utf-8") + b"\n")
        stdout.flush()
