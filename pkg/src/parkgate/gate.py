"""Gate session state machine: arrival, plate verification, driver verification,
access decision, barrier control, slot assignment, and audit events.

Access is granted only when the plate matches a registered vehicle AND the
driver is identified in the employee gallery (and, when binding is enabled,
authorized for that vehicle) AND a parking slot could be allocated. The
barrier OPEN command is issued exclusively on the transition into Granted.

Session states: Idle, VehicleDetected, PlateCapture, PlateVerified,
FaceCapture, Granted, Denied, Passed, Expired. Retries never change the
state; they show up in the trace as self-transitions with the attempt count.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from . import faces, plates
from .backend import BackendError
from .barrier import BarrierClient
from .dataset import NormBBox
from .imaging import Raster, decode_pnm, encode_pnm
from .plates import Matched, NoMatch, PlateFormatError, RetrySuggested
from .store import LotFull, Store

logger = logging.getLogger(__name__)

__all__ = ["GateConfig", "GateSession", "GateController", "ScenarioError",
           "parse_scenario", "run_scenario", "ScenarioOutcome"]

TERMINAL_STATES = ("Granted", "Denied", "Passed", "Expired")
# States in which the lane is busy and later arrivals must queue.
LANE_BUSY_STATES = ("VehicleDetected", "PlateCapture", "PlateVerified",
                    "FaceCapture", "Granted")


@dataclass(frozen=True)
class GateConfig:
    max_plate_attempts: int = 3
    max_face_attempts: int = 3
    session_timeout_ms: int = 30_000
    barrier_auto_close_ms: int = 10_000
    verify_threshold: float = faces.DEFAULT_THRESHOLD
    embed_dim: int = faces.DEFAULT_DIM
    crop_margin: float = 0.05
    binding_required: bool = False
    backend_timeout_ms: int = 2000

    def __post_init__(self):
        if self.max_plate_attempts < 1 or self.max_face_attempts < 1:
            raise ValueError("attempt limits must be >= 1")
        if self.session_timeout_ms <= 0 or self.barrier_auto_close_ms <= 0:
            raise ValueError("timeouts must be positive")


@dataclass
class GateSession:
    session_id: str
    frame: str
    state: str = "Idle"
    plate: str | None = None
    vehicle_id: str | None = None
    employee_id: str | None = None
    slot: str | None = None
    deny_reason: str | None = None
    plate_attempts: int = 0
    face_attempts: int = 0
    started_ms: int = 0
    granted_ms: int | None = None
    transitions: list[tuple[int, str, str, str]] = field(default_factory=list)


class GateController:
    """Single-lane event loop: arrivals, clock ticks, pass sensor, exit reads."""

    def __init__(self, config: GateConfig, store: Store, endpoint, barrier: BarrierClient,
                 clock, frame_root: Path | None = None, workdir: Path | None = None):
        self.config = config
        self.store = store
        self.endpoint = endpoint
        self.barrier = barrier
        self.clock = clock
        self.frame_root = Path(frame_root) if frame_root else Path(".")
        self.workdir = Path(workdir) if workdir else self.frame_root
        self.trace: list[str] = []
        self.sessions: dict[str, GateSession] = {}
        self.active: GateSession | None = None
        self.pending: deque[str] = deque()
        self._session_counter = 0
        self._event_counter = 0
        self._auto_close_at: int | None = None
        self._barrier_open = False
        barrier.on_event = self._on_barrier_event

    # -- bookkeeping ----------------------------------------------------------

    def _trace(self, session: GateSession, from_state: str, to_state: str, detail: str = ""):
        now = self.clock.now_ms()
        line = f"[{now:>6}] {session.session_id} {from_state} -> {to_state}"
        if detail:
            line += f" {detail}"
        self.trace.append(line)

    def _transition(self, session: GateSession, to_state: str, detail: str = ""):
        from_state = session.state
        session.state = to_state
        session.transitions.append((self.clock.now_ms(), from_state, to_state, detail))
        self._trace(session, from_state, to_state, detail)

    def _retry_line(self, session: GateSession, attempt: int, detail: str):
        self._trace(session, session.state, session.state, f"attempt={attempt} {detail}")

    def _event(self, kind: str, session_id: str = "", **payload):
        self._event_counter += 1
        fields = {"kind": kind, "session": session_id, "ts": self.clock.now_ms()}
        for key, value in payload.items():
            if value is not None:
                fields[key] = value
        self.store.put("events", f"e{self._event_counter:04d}", fields)

    def events(self) -> list[dict]:
        return [self.store.get("events", eid).fields for eid in self.store.ids("events")]

    # -- external events --------------------------------------------------------

    def handle_arrival(self, frame_ref: str):
        if self.active is not None and self.active.state in LANE_BUSY_STATES:
            self.pending.append(frame_ref)
            return
        self._start_session(frame_ref)

    def handle_tick(self):
        """Re-examine timers after the clock moved."""
        now = self.clock.now_ms()
        if self._auto_close_at is not None and now >= self._auto_close_at:
            self._auto_close_at = None
            self._close_barrier()
        session = self.active
        if (session is not None and session.state == "Granted"
                and now >= session.granted_ms + self.config.session_timeout_ms):
            self._expire(session)
        self.barrier.poll_events()

    def handle_pass_sensor(self):
        """Scenario hook: the vehicle crossed the barrier sensor."""
        trigger = getattr(self.barrier.link, "trigger_pass", None)
        if trigger is not None:
            trigger()
        self.barrier.poll_events()

    def handle_exit(self, plate_text: str):
        """Exit-lane plate read: free the slot and log the departure."""
        try:
            canonical = plates.parse_plate(plates.normalize_plate(plate_text)).canonical
        except PlateFormatError:
            self._event("anomaly", detail=f"unparseable exit plate {plate_text!r}")
            return
        held = self.store.query("slots", "plate", canonical)
        if not held:
            self._event("anomaly", plate=canonical, detail="exit without live occupancy")
            return
        slot_id = held[0].id
        self.store.release_slot(slot_id)
        session_id = held[0].fields.get("session", "")
        session = self.sessions.get(session_id)
        if session is not None:
            session.slot = None
        self._event("exit", session_id, plate=canonical, slot=slot_id)

    # -- session pipeline -------------------------------------------------------

    def _start_session(self, frame_ref: str):
        self._session_counter += 1
        session = GateSession(session_id=f"s{self._session_counter}", frame=frame_ref,
                              started_ms=self.clock.now_ms())
        self.sessions[session.session_id] = session
        self.active = session
        self._event("session_started", session.session_id, frame=frame_ref)
        self._transition(session, "VehicleDetected", f"frame={frame_ref}")
        if not self._detect_vehicle(session):
            return
        self._transition(session, "PlateCapture")
        if not self._plate_stage(session):
            return
        self._transition(session, "FaceCapture")
        if not self._face_stage(session):
            return
        self._decide(session)

    def _detect_vehicle(self, session: GateSession) -> bool:
        for attempt in range(1, self.config.max_plate_attempts + 1):
            try:
                result = self.endpoint.call("detect_vehicle", session.frame,
                                            self.config.backend_timeout_ms)
                if result["detections"]:
                    return True
                self._retry_line(session, attempt, "error=NO_VEHICLE")
            except BackendError as exc:
                self._retry_line(session, attempt, f"error={exc.code}")
        self._deny(session, "PlateUnknown", "vehicle detection failed")
        return False

    def _load_frame(self, session: GateSession) -> Raster:
        path = Path(session.frame)
        if not path.is_absolute():
            path = self.frame_root / path
        return decode_pnm(path.read_bytes())

    def _plate_stage(self, session: GateSession) -> bool:
        for attempt in range(1, self.config.max_plate_attempts + 1):
            session.plate_attempts = attempt
            try:
                result = self.endpoint.call("detect_plate", session.frame,
                                            self.config.backend_timeout_ms)
                detections = result["detections"]
                if not detections:
                    self._retry_line(session, attempt, "error=NO_PLATE")
                    continue
                best = max(detections, key=lambda d: d["confidence"])
                box = NormBBox(best["cx"], best["cy"], best["w"], best["h"])
                crop = plates.crop_plate(self._load_frame(session), box,
                                         self.config.crop_margin)
                crop_path = self.workdir / f"{session.session_id}_plate_{attempt}.pgm"
                crop_path.write_bytes(encode_pnm(crop))
                ocr = self.endpoint.call("ocr", str(crop_path),
                                         self.config.backend_timeout_ms)
                plate = plates.parse_plate(plates.normalize_plate(ocr["text"]))
                outcome = plates.match_registry(plate, self.store)
            except BackendError as exc:
                self._retry_line(session, attempt, f"error={exc.code}")
                continue
            except (PlateFormatError, ValueError) as exc:
                self._retry_line(session, attempt, f"error=UNREADABLE ({exc})")
                continue
            if isinstance(outcome, Matched):
                session.plate = plate.canonical
                session.vehicle_id = outcome.vehicle.id
                self._transition(session, "PlateVerified", f"plate={plate.canonical}")
                return True
            if isinstance(outcome, RetrySuggested):
                self._retry_line(session, attempt,
                                 f"retry-suggested candidate={outcome.candidate}")
            else:
                self._retry_line(session, attempt, f"no-match plate={plate.canonical}")
        self._deny(session, "PlateUnknown", "plate attempts exhausted")
        return False

    def _face_stage(self, session: GateSession) -> bool:
        gallery = faces.gallery_from_store(self.store, dim=self.config.embed_dim)
        for attempt in range(1, self.config.max_face_attempts + 1):
            session.face_attempts = attempt
            try:
                result = self.endpoint.call("face_embed", session.frame,
                                            self.config.backend_timeout_ms)
                query = faces.Embedding(tuple(result["embedding"]))
                if query.dim != self.config.embed_dim:
                    raise ValueError(f"embedding dim {query.dim} != {self.config.embed_dim}")
                found = faces.identify(query, gallery, self.config.verify_threshold)
            except BackendError as exc:
                self._retry_line(session, attempt, f"error={exc.code}")
                continue
            except ValueError as exc:
                self._retry_line(session, attempt, f"error=BAD_EMBEDDING ({exc})")
                continue
            if found.matched:
                session.employee_id = found.employee_id
                return True
            self._retry_line(session, attempt, f"no-match distance={found.distance:.4f}")
        self._deny(session, "DriverUnknown", "face attempts exhausted")
        return False

    def _decide(self, session: GateSession):
        """Conjunction rule: both vehicle and driver must belong; then a slot."""
        if session.plate is None or session.employee_id is None:
            raise RuntimeError("decide() called before both verifications")
        if self.config.binding_required:
            vehicle = self.store.get("vehicles", session.vehicle_id)
            drivers = vehicle.fields.get("drivers", []) if vehicle else []
            if session.employee_id not in drivers:
                self._deny(session, "DriverUnknown",
                           f"employee {session.employee_id} not bound to {session.plate}")
                return
        try:
            slot_id = self.store.allocate_slot()
        except LotFull:
            self._deny(session, "LotFull", "no free slot")
            return
        slot_doc = self.store.get("slots", slot_id)
        slot_fields = dict(slot_doc.fields)
        slot_fields["plate"] = session.plate
        slot_fields["session"] = session.session_id
        self.store.put("slots", slot_id, slot_fields)
        session.slot = slot_id
        session.granted_ms = self.clock.now_ms()
        self._transition(session, "Granted",
                         f"employee={session.employee_id} slot={slot_id}")
        self._event("granted", session.session_id, plate=session.plate,
                    employee=session.employee_id, slot=slot_id)
        self._open_barrier()

    def _deny(self, session: GateSession, reason: str, detail: str):
        session.deny_reason = reason
        self._transition(session, "Denied", f"reason={reason}")
        self._event("denied", session.session_id, reason=reason, detail=detail,
                    plate=session.plate)
        self._lane_freed()

    def _expire(self, session: GateSession):
        self._transition(session, "Expired", "reason=Expired")
        self._event("expired", session.session_id, plate=session.plate,
                    slot=session.slot)
        if session.slot is not None:
            self.store.release_slot(session.slot)
            session.slot = None
        if self._barrier_open:
            self._close_barrier()
            self._auto_close_at = None
        self._lane_freed()

    def _on_barrier_event(self, line: str):
        if line != "EVT PASSED":
            return
        session = self.active
        if session is None or session.state != "Granted":
            self._event("anomaly", detail="pass sensor fired with no granted session")
            return
        self._transition(session, "Passed")
        self._event("passed", session.session_id, plate=session.plate,
                    slot=session.slot)
        self._auto_close_at = self.clock.now_ms() + self.config.barrier_auto_close_ms
        self._lane_freed()

    def _lane_freed(self):
        self.active = None
        if self.pending:
            self._start_session(self.pending.popleft())

    def _open_barrier(self):
        # a fresh grant supersedes any auto-close scheduled by the previous pass
        self._auto_close_at = None
        reply = self.barrier.send("OPEN")
        if reply != "ACK OPEN":
            logger.warning("unexpected barrier reply %r to OPEN", reply)
        self._barrier_open = True

    def _close_barrier(self):
        reply = self.barrier.send("CLOSE")
        if reply != "ACK CLOSE":
            logger.warning("unexpected barrier reply %r to CLOSE", reply)
        self._barrier_open = False


# ---------------------------------------------------------------------------
# Scenario files: setup directives plus a timeline of events.
#
#   slots <n>                     seed n free slots "1".."n"
#   vehicle <plate> <class> [drivers,...]
#   employee <id> <name...>
#   enroll <employee> <v0> <v1> ...
#   flaky <op> <count>            fail the first <count> calls of <op>
#   arrive <frame>                vehicle at the gate (path relative to scenario)
#   tick <ms>                     advance the simulated clock
#   pass                          vehicle crosses the barrier sensor
#   exit <plate>                  exit-lane plate read

class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    setup: list[tuple]
    timeline: list[tuple]
    flaky: dict[str, int]


@dataclass
class ScenarioOutcome:
    trace: str
    barrier_transcript: str
    terminal_states: dict[str, str]
    controller: GateController


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    setup, timeline, flaky = [], [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        kind = fields[0]
        try:
            if kind == "slots":
                setup.append(("slots", int(fields[1])))
            elif kind == "vehicle":
                drivers = fields[3].split(",") if len(fields) > 3 else []
                setup.append(("vehicle", fields[1], fields[2], drivers))
            elif kind == "employee":
                setup.append(("employee", fields[1], " ".join(fields[2:])))
            elif kind == "enroll":
                setup.append(("enroll", fields[1], [float(v) for v in fields[2:]]))
            elif kind == "flaky":
                flaky[fields[1]] = int(fields[2])
            elif kind == "arrive":
                timeline.append(("arrive", fields[1]))
            elif kind == "tick":
                timeline.append(("tick", int(fields[1])))
            elif kind == "pass":
                timeline.append(("pass",))
            elif kind == "exit":
                timeline.append(("exit", fields[1]))
            else:
                raise ScenarioError(f"{source}:{lineno}: unknown directive {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{source}:{lineno}: bad {kind} line: {raw!r}") from None
    return Scenario(setup=setup, timeline=timeline, flaky=flaky)


def apply_setup(scenario: Scenario, store: Store):
    for entry in scenario.setup:
        if entry[0] == "slots":
            for i in range(entry[1]):
                store.put("slots", str(i + 1), {"status": "free"})
        elif entry[0] == "vehicle":
            _, plate, vclass, drivers = entry
            store.put("vehicles", plate, {"plate": plate, "class": vclass,
                                          "drivers": drivers})
        elif entry[0] == "employee":
            store.put("employees", entry[1], {"name": entry[2]})
        elif entry[0] == "enroll":
            faces.enroll(entry[1], faces.Embedding(tuple(entry[2]), source="enrollment"),
                         store)


def run_scenario(scenario_path: Path, config: GateConfig | None = None,
                 store_dir: Path | None = None, workdir: Path | None = None,
                 noise_sigma: float = 0.0, seed: int = 0) -> ScenarioOutcome:
    """Drive a controller through a scenario file on a simulated clock."""
    import tempfile

    from .backend import FlakyEndpoint, InProcessEndpoint, ReferenceBackend, ReferenceConfig
    from .barrier import BarrierSimulator, LocalSimLink
    from .clock import SimClock

    scenario_path = Path(scenario_path)
    scenario = parse_scenario(scenario_path.read_text(), source=str(scenario_path))
    config = config or GateConfig()
    root = scenario_path.parent

    tmp = None
    if store_dir is None or workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="parkgate-scenario-")
        store_dir = store_dir or Path(tmp.name) / "store"
        workdir = workdir or Path(tmp.name) / "work"
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    clock = SimClock()
    store = Store(store_dir, clock=clock)
    apply_setup(scenario, store)

    endpoint = InProcessEndpoint(ReferenceBackend(ReferenceConfig(
        noise_sigma=noise_sigma, seed=seed, embed_dim=config.embed_dim, root=root)))
    if scenario.flaky:
        endpoint = FlakyEndpoint(endpoint, scenario.flaky)
    sim = BarrierSimulator(clock)
    client = BarrierClient(LocalSimLink(sim), clock)
    controller = GateController(config, store, endpoint, client, clock,
                                frame_root=root, workdir=workdir)

    for event in scenario.timeline:
        if event[0] == "arrive":
            controller.handle_arrival(event[1])
        elif event[0] == "tick":
            clock.advance(event[1])
            controller.handle_tick()
        elif event[0] == "pass":
            controller.handle_pass_sensor()
        elif event[0] == "exit":
            controller.handle_exit(event[1])

    outcome = ScenarioOutcome(
        trace="\n".join(controller.trace) + "\n",
        barrier_transcript="\n".join(client.transcript) + "\n" if client.transcript else "",
        terminal_states={sid: s.state for sid, s in controller.sessions.items()},
        controller=controller,
    )
    store.close()
    if tmp is not None:
        tmp.cleanup()
    return outcome
