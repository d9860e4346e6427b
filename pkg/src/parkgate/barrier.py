"""Serial-style barrier protocol, a simulator of the gate hardware, and the client.

Grammar (ASCII, one newline-terminated message per line):

    commands:  OPEN | CLOSE | STATUS
    replies:   ACK OPEN | ACK CLOSE | STATUS OPEN | STATUS CLOSED |
               STATUS MOVING | EVT PASSED | ERR <code>

EVT PASSED is unsolicited (the pass-through sensor) and shares the line
stream; clients demultiplex on the EVT prefix. Commands are idempotent.
"""

from __future__ import annotations

from collections import deque

__all__ = [
    "COMMANDS",
    "BarrierError",
    "BarrierTimeout",
    "format_command",
    "parse_command",
    "parse_reply",
    "BarrierSimulator",
    "LocalSimLink",
    "StreamLink",
    "BarrierClient",
]

COMMANDS = ("OPEN", "CLOSE", "STATUS")
REPLIES = ("ACK OPEN", "ACK CLOSE", "STATUS OPEN", "STATUS CLOSED",
           "STATUS MOVING", "EVT PASSED")
DEFAULT_TRAVEL_MS = 1500
DEFAULT_TIMEOUT_MS = 500


class BarrierError(RuntimeError):
    pass


class BarrierTimeout(BarrierError):
    pass


def format_command(command: str) -> bytes:
    if command not in COMMANDS:
        raise ValueError(f"unknown barrier command {command!r}")
    return command.encode("ascii") + b"\n"


def parse_command(line: str) -> str:
    line = line.strip()
    if line not in COMMANDS:
        raise ValueError(f"unknown barrier command {line!r}")
    return line


def parse_reply(line: str) -> str:
    line = line.strip()
    if line in REPLIES or (line.startswith("ERR ") and len(line) > 4):
        return line
    raise ValueError(f"unknown barrier reply {line!r}")


class BarrierSimulator:
    """Behavioral model of the Arduino barrier prototype.

    Positions: closed, opening, open, closing. Travel takes `travel_ms` of the
    supplied clock. The pass-through sensor fires at most once per opening.
    """

    def __init__(self, clock, travel_ms: int = DEFAULT_TRAVEL_MS):
        self.clock = clock
        self.travel_ms = travel_ms
        self.position = "closed"
        self._move_started = 0
        self._passed_this_opening = False

    def _settle(self):
        now = self.clock.now_ms()
        if self.position == "opening" and now - self._move_started >= self.travel_ms:
            self.position = "open"
        elif self.position == "closing" and now - self._move_started >= self.travel_ms:
            self.position = "closed"

    def handle_line(self, line: str) -> list[str]:
        self._settle()
        command = line.strip()
        if command == "OPEN":
            if self.position in ("closed", "closing"):
                self.position = "opening"
                self._move_started = self.clock.now_ms()
                self._passed_this_opening = False
            return ["ACK OPEN"]
        if command == "CLOSE":
            if self.position in ("open", "opening"):
                self.position = "closing"
                self._move_started = self.clock.now_ms()
            return ["ACK CLOSE"]
        if command == "STATUS":
            if self.position in ("opening", "closing"):
                return ["STATUS MOVING"]
            return [f"STATUS {self.position.upper()}"]
        return ["ERR UNKNOWN"]

    def trigger_pass(self) -> list[str]:
        """Vehicle crosses the sensor; emits EVT PASSED once per opening."""
        self._settle()
        if self.position == "open" and not self._passed_this_opening:
            self._passed_this_opening = True
            return ["EVT PASSED"]
        return []

    def settled_position(self) -> str:
        self._settle()
        return self.position


class LocalSimLink:
    """In-process link to a simulator; replies are queued for the client."""

    def __init__(self, sim: BarrierSimulator):
        self.sim = sim
        self._incoming: deque[str] = deque()

    def send_line(self, line: str):
        self._incoming.extend(self.sim.handle_line(line))

    def recv_line(self, timeout_ms: int) -> str:
        if not self._incoming:
            raise BarrierTimeout("no reply queued")
        return self._incoming.popleft()

    def trigger_pass(self):
        self._incoming.extend(self.sim.trigger_pass())

    def pending(self) -> bool:
        return bool(self._incoming)

    def close(self):
        pass


class StreamLink:
    """Line link over a byte stream (socket-like object with timeout support)."""

    def __init__(self, sock):
        self.sock = sock
        self._buffer = b""

    def send_line(self, line: str):
        self.sock.sendall(line.encode("ascii") + b"\n")

    def recv_line(self, timeout_ms: int) -> str:
        import socket as socketmod
        import time

        deadline = time.monotonic() + timeout_ms / 1000.0
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BarrierTimeout(f"no reply within {timeout_ms} ms")
            self.sock.settimeout(max(remaining, 0.001))
            try:
                chunk = self.sock.recv(4096)
            except socketmod.timeout:
                continue
            if not chunk:
                raise BarrierError("barrier link closed")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("ascii")

    def pending(self) -> bool:
        return b"\n" in self._buffer

    def close(self):
        self.sock.close()


class BarrierClient:
    """Command/reply client with one retry; unsolicited events go to a callback.

    Keeps a timestamped transcript of every line in both directions, which the
    gate test suite checks byte for byte.
    """

    def __init__(self, link, clock, timeout_ms: int = DEFAULT_TIMEOUT_MS, on_event=None):
        self.link = link
        self.clock = clock
        self.timeout_ms = timeout_ms
        self.on_event = on_event
        self.transcript: list[str] = []

    def _record(self, direction: str, line: str):
        self.transcript.append(f"[{self.clock.now_ms():>6}] {direction} {line}")

    def _dispatch_event(self, line: str):
        if self.on_event is not None:
            self.on_event(line)

    def send(self, command: str) -> str:
        """Send one command; returns its reply. Retries once on timeout."""
        if command not in COMMANDS:
            raise ValueError(f"unknown barrier command {command!r}")
        last_error = None
        for _ in range(2):
            self._record(">", command)
            self.link.send_line(command)
            try:
                while True:
                    reply = parse_reply(self.link.recv_line(self.timeout_ms))
                    self._record("<", reply)
                    if reply.startswith("EVT "):
                        self._dispatch_event(reply)
                        continue
                    return reply
            except BarrierTimeout as exc:
                last_error = exc
        raise BarrierTimeout(f"{command} got no reply after retry: {last_error}")

    def poll_events(self):
        """Drain any queued unsolicited lines (used between commands)."""
        while getattr(self.link, "pending", lambda: False)():
            line = parse_reply(self.link.recv_line(0))
            self._record("<", line)
            if line.startswith("EVT "):
                self._dispatch_event(line)
