"""Request loop: one line in, one line out, never crash on bad input."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .engines import EngineError, EngineLoadError, build_engine
from .protocol import (
    OPS,
    ProtocolError,
    decode_request,
    error_response,
    ok_response,
    peek_request_id,
)


@dataclass
class ShimConfig:
    engines: dict[str, str] = field(default_factory=dict)  # op -> engine spec
    root: Path | None = None        # base for relative image/sidecar paths
    embed_dim: int | None = None
    transport: str = "stdio"        # stdio | tcp:<port>

    @classmethod
    def from_lines(cls, lines, source: str = "<config>") -> "ShimConfig":
        config = cls()
        for lineno, raw in enumerate(lines, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key.startswith("op."):
                op = key[3:]
                if op not in OPS:
                    raise ValueError(f"{source}:{lineno}: unknown op {op!r}")
                if value not in ("", "off"):
                    config.engines[op] = value
            elif key == "root":
                config.root = Path(value)
            elif key == "embed_dim":
                config.embed_dim = int(value)
            elif key == "transport":
                config.transport = value
            else:
                raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        return config

    @classmethod
    def from_file(cls, path: Path) -> "ShimConfig":
        return cls.from_lines(Path(path).read_text().splitlines(), source=str(path))


class Shim:
    """Loads every enabled engine up front; serves requests one at a time."""

    def __init__(self, config: ShimConfig):
        self.config = config
        self.ops = {}
        for op, spec in config.engines.items():
            try:
                self.ops[op] = build_engine(op, spec, config.root, config.embed_dim)
            except EngineLoadError:
                raise
            except Exception as exc:
                raise EngineLoadError(f"engine for {op} failed to load: {exc}") from exc

    def handle_line(self, line: str) -> str:
        try:
            request = decode_request(line)
        except ProtocolError as exc:
            return error_response(peek_request_id(line), "BAD_REQUEST", str(exc))
        engine = self.ops.get(request.op)
        if engine is None:
            return error_response(request.request_id, "UNSUPPORTED",
                                  f"op {request.op!r} is disabled")
        try:
            return ok_response(request.request_id, engine(request.image))
        except EngineError as exc:
            return error_response(request.request_id, "INFERENCE", str(exc))
        except Exception as exc:  # engines must never kill the loop
            return error_response(request.request_id, "INFERENCE",
                                  f"unexpected failure: {exc}")

    def serve(self, read_line, write_line):
        """One response per request line; non-increasing ids are rejected."""
        last_id = 0
        while True:
            line = read_line()
            if line is None:
                return
            line = line.strip()
            if not line:
                continue
            req_id = peek_request_id(line)
            if req_id and req_id <= last_id:
                write_line(error_response(
                    req_id, "BAD_REQUEST",
                    f"request id {req_id} not greater than {last_id}"))
                continue
            response = self.handle_line(line)
            if req_id:
                last_id = req_id
            write_line(response)


def serve_stdio(shim: Shim):
    def read_line():
        line = sys.stdin.readline()
        return line if line else None

    def write_line(line: str):
        sys.stdout.write(line + "\n")
        sys.stdout.flush()

    shim.serve(read_line, write_line)


def serve_tcp(shim: Shim, port: int, max_connections: int | None = None):
    import socket

    server = socket.create_server(("127.0.0.1", port))
    print(f"gateshim listening on 127.0.0.1:{port}", file=sys.stderr, flush=True)
    served = 0
    while max_connections is None or served < max_connections:
        conn, _ = server.accept()
        served += 1
        reader = conn.makefile("r", encoding="utf-8")
        writer = conn.makefile("w", encoding="utf-8")

        def read_line():
            line = reader.readline()
            return line if line else None

        def write_line(line: str):
            writer.write(line + "\n")
            writer.flush()

        try:
            shim.serve(read_line, write_line)
        finally:
            conn.close()
    server.close()
