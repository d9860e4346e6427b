"""Line protocol between the gate pipeline and inference backends, plus
deterministic in-process reference backends so the system runs without any ML
runtime.

Wire format: one JSON object per newline-terminated line.

Request:  {"id": <int>, "op": "<op>", "image": "<path>"}
Response: {"id": <int>, "status": "ok", "result": {...}}
          {"id": <int>, "status": "error", "code": "<CODE>", "message": "..."}

Result payloads by op:
    detect_vehicle, detect_plate -> {"detections": [{"class_id", "confidence",
                                     "cx", "cy", "w", "h"}, ...]} (normalized)
    ocr                          -> {"text": str, "confidence": float}
    face_embed                   -> {"embedding": [float, ...]}

Request ids are strictly increasing per connection and each request gets
exactly one response. Images travel by file path; both sides share a
filesystem.
"""

from __future__ import annotations

import hashlib
import json
import random
import selectors
import socket
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import glyphs
from .dataset import load_label_file
from .imaging import decode_pnm

__all__ = [
    "OPS",
    "BackendRequest",
    "BackendResponse",
    "BackendError",
    "BackendTimeout",
    "BackendTransportError",
    "BackendProtocolError",
    "BackendRemoteError",
    "encode_request",
    "decode_request",
    "encode_response",
    "decode_response",
    "validate_result",
    "ReferenceBackend",
    "ReferenceConfig",
    "InProcessEndpoint",
    "LineEndpoint",
    "StdioTransport",
    "TcpTransport",
    "FlakyEndpoint",
    "serve_lines",
    "reference_oracle_detector",
    "reference_template_ocr",
    "reference_face_embedder",
]

OPS = ("detect_vehicle", "detect_plate", "ocr", "face_embed")
DEFAULT_TIMEOUT_MS = 2000


class BackendError(Exception):
    code = "BACKEND"


class BackendTimeout(BackendError):
    code = "TIMEOUT"


class BackendTransportError(BackendError):
    code = "TRANSPORT"


class BackendProtocolError(BackendError):
    code = "PROTOCOL"


class BackendRemoteError(BackendError):
    """The backend answered with an error response."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class BackendRequest:
    op: str
    request_id: int
    image: str

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown op {self.op!r}")
        if self.request_id < 1:
            raise ValueError("request id must be >= 1")
        if not self.image:
            raise ValueError("empty image path")


@dataclass(frozen=True)
class BackendResponse:
    request_id: int
    status: str  # ok | error
    result: dict | None = None
    code: str | None = None
    message: str | None = None


def encode_request(req: BackendRequest) -> str:
    return json.dumps({"id": req.request_id, "op": req.op, "image": req.image},
                      sort_keys=True)


def decode_request(line: str) -> BackendRequest:
    try:
        obj = json.loads(line)
        return BackendRequest(op=obj["op"], request_id=obj["id"], image=obj["image"])
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendProtocolError(f"bad request line: {exc}") from None


def encode_response(resp: BackendResponse) -> str:
    if resp.status == "ok":
        return json.dumps({"id": resp.request_id, "status": "ok", "result": resp.result},
                          sort_keys=True)
    return json.dumps({"id": resp.request_id, "status": "error",
                       "code": resp.code, "message": resp.message}, sort_keys=True)


def decode_response(line: str) -> BackendResponse:
    try:
        obj = json.loads(line)
        status = obj["status"]
        if status == "ok":
            return BackendResponse(request_id=obj["id"], status="ok", result=obj["result"])
        if status == "error":
            return BackendResponse(request_id=obj["id"], status="error",
                                   code=obj["code"], message=obj.get("message", ""))
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendProtocolError(f"bad response line: {exc}") from None
    raise BackendProtocolError(f"unknown status {status!r}")


def validate_result(op: str, result) -> list[str]:
    """Schema check for an ok-result payload; returns a list of problems."""
    problems = []
    if not isinstance(result, dict):
        return [f"result must be an object, got {type(result).__name__}"]
    if op in ("detect_vehicle", "detect_plate"):
        dets = result.get("detections")
        if not isinstance(dets, list):
            return ["missing detections list"]
        for i, det in enumerate(dets):
            for key in ("class_id", "confidence", "cx", "cy", "w", "h"):
                if key not in det:
                    problems.append(f"detection {i} missing {key}")
            if problems:
                continue
            if not 0.0 <= det["confidence"] <= 1.0:
                problems.append(f"detection {i} confidence out of range")
            if not (0.0 <= det["cx"] <= 1.0 and 0.0 <= det["cy"] <= 1.0):
                problems.append(f"detection {i} center out of range")
            if not (0.0 < det["w"] <= 1.0 and 0.0 < det["h"] <= 1.0):
                problems.append(f"detection {i} size out of range")
    elif op == "ocr":
        if not isinstance(result.get("text"), str):
            problems.append("missing text")
        conf = result.get("confidence")
        if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            problems.append("confidence out of range")
    elif op == "face_embed":
        emb = result.get("embedding")
        if not isinstance(emb, list) or not emb or \
                not all(isinstance(v, (int, float)) for v in emb):
            problems.append("missing embedding vector")
    else:
        problems.append(f"unknown op {op!r}")
    return problems


# ---------------------------------------------------------------------------
# Reference backends: pure functions of (inputs, seed)

def _sidecar(image_path: Path, suffix: str) -> Path:
    return image_path.with_suffix(suffix)


def reference_oracle_detector(image_path: Path, noise_sigma: float = 0.0,
                              seed: int = 0, sidecar: Path | None = None) -> list[dict]:
    """Ground-truth detector: sidecar labels plus seeded Gaussian jitter.

    With sigma 0 the output is exactly the sidecar truth at confidence 1. The
    rng is derived from (seed, sidecar file name), so results do not depend on
    where the fixture directory lives.
    """
    image_path = Path(image_path)
    sidecar = Path(sidecar) if sidecar else _sidecar(image_path, ".txt")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing ground-truth sidecar {sidecar}")
    digest = hashlib.sha256(f"{seed}:{sidecar.name}".encode()).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    detections = []
    for rec in load_label_file(sidecar):
        jc = rng.gauss(0.0, 1.0)
        jx, jy, jw, jh = (rng.gauss(0.0, 1.0) for _ in range(4))
        b = rec.bbox
        detections.append({
            "class_id": rec.class_id,
            "confidence": min(1.0, max(0.0, 1.0 / (1.0 + noise_sigma * abs(jc)))),
            "cx": min(1.0, max(0.0, b.cx + noise_sigma * jx)),
            "cy": min(1.0, max(0.0, b.cy + noise_sigma * jy)),
            "w": min(1.0, max(1e-4, b.w + noise_sigma * jw)),
            "h": min(1.0, max(1e-4, b.h + noise_sigma * jh)),
        })
    return detections


def reference_template_ocr(plate) -> tuple[str, float]:
    """Exact template match against the built-in glyph font."""
    return glyphs.match_plate(plate)


def reference_face_embedder(image_path: Path, expected_dim: int | None = None) -> list[float]:
    """Return the sidecar embedding (<image stem>.emb) verbatim."""
    sidecar = _sidecar(Path(image_path), ".emb")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing embedding sidecar {sidecar}")
    values = [float(v) for v in sidecar.read_text().split()]
    if not values:
        raise ValueError(f"empty embedding sidecar {sidecar}")
    if expected_dim is not None and len(values) != expected_dim:
        raise ValueError(f"embedding dimension {len(values)} != configured {expected_dim}")
    return values


@dataclass
class ReferenceConfig:
    noise_sigma: float = 0.0
    seed: int = 0
    embed_dim: int | None = None
    root: Path | None = None  # base for resolving relative image paths
    sidecar_suffixes: dict = field(default_factory=lambda: {
        "detect_vehicle": ".vehicle.txt",
        "detect_plate": ".plate.txt",
    })


class ReferenceBackend:
    """In-process implementation of all four ops over fixture sidecars."""

    def __init__(self, config: ReferenceConfig | None = None):
        self.config = config or ReferenceConfig()

    def _resolve(self, image: str) -> Path:
        path = Path(image)
        if not path.is_absolute() and self.config.root is not None:
            path = self.config.root / path
        return path

    def handle(self, op: str, image: str) -> dict:
        path = self._resolve(image)
        if op in ("detect_vehicle", "detect_plate"):
            suffix = self.config.sidecar_suffixes.get(op, ".txt")
            detections = reference_oracle_detector(
                path, self.config.noise_sigma, self.config.seed,
                sidecar=_sidecar(path, suffix))
            return {"detections": detections}
        if op == "ocr":
            text, confidence = reference_template_ocr(decode_pnm(path.read_bytes()))
            return {"text": text, "confidence": confidence}
        if op == "face_embed":
            return {"embedding": reference_face_embedder(path, self.config.embed_dim)}
        raise BackendRemoteError("UNSUPPORTED", f"op {op!r} not available")


def _error_code(exc: Exception) -> str:
    if isinstance(exc, BackendRemoteError):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return "MISSING_SIDECAR"
    return "INFERENCE"


def serve_lines(handler, read_line, write_line):
    """Request loop shared by the stdio and TCP servers.

    One response per request line, ids echoed; malformed input produces an
    error response instead of killing the loop.
    """
    last_id = 0
    while True:
        line = read_line()
        if line is None:
            return
        line = line.strip()
        if not line:
            continue
        try:
            req = decode_request(line)
        except BackendProtocolError as exc:
            req_id = 0
            try:
                req_id = int(json.loads(line).get("id", 0))
            except (ValueError, TypeError, AttributeError):
                pass
            write_line(encode_response(BackendResponse(
                request_id=req_id, status="error", code="BAD_REQUEST", message=str(exc))))
            continue
        if req.request_id <= last_id:
            write_line(encode_response(BackendResponse(
                request_id=req.request_id, status="error", code="BAD_REQUEST",
                message=f"request id {req.request_id} not greater than {last_id}")))
            continue
        last_id = req.request_id
        try:
            result = handler.handle(req.op, req.image)
            resp = BackendResponse(request_id=req.request_id, status="ok", result=result)
        except Exception as exc:
            resp = BackendResponse(request_id=req.request_id, status="error",
                                   code=_error_code(exc), message=str(exc))
        write_line(encode_response(resp))


# ---------------------------------------------------------------------------
# Endpoints: something the pipeline can call(op, image) on

class InProcessEndpoint:
    """Directly wraps a backend object; used for fast deterministic runs."""

    def __init__(self, handler):
        self.handler = handler
        self._next_id = 1

    def call(self, op: str, image: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> dict:
        self._next_id += 1
        try:
            return self.handler.handle(op, image)
        except BackendError:
            raise
        except FileNotFoundError as exc:
            raise BackendRemoteError("MISSING_SIDECAR", str(exc)) from exc
        except Exception as exc:
            raise BackendRemoteError("INFERENCE", str(exc)) from exc

    def close(self):
        pass


class LineEndpoint:
    """Request/response over a line transport with strict id alternation."""

    def __init__(self, transport):
        self.transport = transport
        self._next_id = 1

    def call(self, op: str, image: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> dict:
        req = BackendRequest(op=op, request_id=self._next_id, image=image)
        self._next_id += 1
        self.transport.send_line(encode_request(req))
        line = self.transport.recv_line(timeout_ms)
        resp = decode_response(line)
        if resp.request_id != req.request_id:
            raise BackendProtocolError(
                f"response id {resp.request_id} does not match request {req.request_id}")
        if resp.status == "error":
            raise BackendRemoteError(resp.code or "UNKNOWN", resp.message or "")
        problems = validate_result(op, resp.result)
        if problems:
            raise BackendProtocolError(f"invalid {op} result: {problems[0]}")
        return resp.result

    def close(self):
        self.transport.close()


class StdioTransport:
    """Child process speaking the protocol on its standard streams."""

    def __init__(self, command: list[str], cwd: Path | None = None):
        try:
            self.proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                cwd=cwd, text=True, bufsize=1)
        except OSError as exc:
            raise BackendTransportError(f"cannot start backend: {exc}") from exc
        self._buffer = ""
        self._selector = selectors.DefaultSelector()
        self._selector.register(self.proc.stdout, selectors.EVENT_READ)

    def send_line(self, line: str):
        if self.proc.poll() is not None:
            raise BackendTransportError("backend process has exited")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendTransportError(f"backend pipe closed: {exc}") from exc

    def recv_line(self, timeout_ms: int) -> str:
        deadline = time.monotonic() + timeout_ms / 1000.0
        while "\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendTimeout(f"no response within {timeout_ms} ms")
            if not self._selector.select(timeout=remaining):
                continue
            import os

            chunk = os.read(self.proc.stdout.fileno(), 65536).decode()
            if not chunk:
                raise BackendTransportError("backend closed its output stream")
            self._buffer += chunk
        line, self._buffer = self._buffer.split("\n", 1)
        return line

    def close(self):
        self._selector.close()
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class TcpTransport:
    def __init__(self, host: str, port: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=5)
        except OSError as exc:
            raise BackendTransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._buffer = b""

    def send_line(self, line: str):
        try:
            self.sock.sendall(line.encode() + b"\n")
        except OSError as exc:
            raise BackendTransportError(f"send failed: {exc}") from exc

    def recv_line(self, timeout_ms: int) -> str:
        deadline = time.monotonic() + timeout_ms / 1000.0
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendTimeout(f"no response within {timeout_ms} ms")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError as exc:
                raise BackendTransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise BackendTransportError("connection closed by backend")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode()

    def close(self):
        self.sock.close()


class FlakyEndpoint:
    """Deterministic failure injection: the first `count` calls of an op fail."""

    def __init__(self, inner, fail_counts: dict[str, int], code: str = "TIMEOUT"):
        self.inner = inner
        self.remaining = dict(fail_counts)
        self.code = code

    def call(self, op: str, image: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> dict:
        left = self.remaining.get(op, 0)
        if left > 0:
            self.remaining[op] = left - 1
            if self.code == "TIMEOUT":
                raise BackendTimeout(f"injected timeout for {op}")
            raise BackendRemoteError(self.code, f"injected failure for {op}")
        return self.inner.call(op, image, timeout_ms)

    def close(self):
        self.inner.close()
