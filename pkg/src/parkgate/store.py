"""Journaled document store for vehicles, employees, events, and parking slots.

Every mutation is appended to a JSON-lines journal before it is acknowledged,
so replaying the journal (on top of the optional snapshot) reconstructs the
exact live state after a crash. Field values are strings, numbers, or lists
of strings. Writes are last-write-wins upserts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

__all__ = [
    "Store",
    "Document",
    "StoreError",
    "LotFull",
    "replay_journal",
]

COLLECTIONS = ("vehicles", "employees", "events", "slots")
REQUIRED_FIELDS = {
    "vehicles": ("plate", "class"),
    "employees": ("name",),
    "slots": ("status",),
    "events": (),
}

JOURNAL_FILE = "journal.jsonl"
SNAPSHOT_FILE = "snapshot.jsonl"


class StoreError(RuntimeError):
    pass


class LotFull(StoreError):
    """No free slot is available for allocation."""


@dataclass(frozen=True)
class Document:
    collection: str
    id: str
    fields: dict


def _check_fields(collection: str, fields: dict):
    if collection not in COLLECTIONS:
        raise StoreError(f"unknown collection {collection!r}")
    for key, value in fields.items():
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            continue
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            continue
        raise StoreError(f"field {key!r} has unsupported value {value!r}")
    for required in REQUIRED_FIELDS[collection]:
        if required not in fields:
            raise StoreError(f"{collection} document missing required field {required!r}")


def replay_journal(path: Path, state: dict | None = None) -> dict:
    """Fold journal entries into a state dict {collection: {id: fields}}.

    A truncated (undecodable) final line is discarded with a warning; a
    truncated or out-of-order line anywhere else is an error.
    """
    state = state if state is not None else {c: {} for c in COLLECTIONS}
    path = Path(path)
    if not path.exists():
        return state
    lines = path.read_bytes().split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    last_seq = 0
    for idx, raw in enumerate(lines):
        try:
            entry = json.loads(raw)
            seq = entry["seq"]
            op = entry["op"]
            collection = entry["collection"]
            doc_id = entry["id"]
        except (ValueError, KeyError, TypeError):
            if idx == len(lines) - 1:
                logger.warning("discarding truncated final journal line in %s", path)
                break
            raise StoreError(f"{path}: corrupt journal entry at line {idx + 1}") from None
        if seq <= last_seq:
            raise StoreError(f"{path}: out-of-order sequence {seq} after {last_seq}")
        last_seq = seq
        if op == "put":
            state[collection][doc_id] = dict(entry["fields"])
        elif op == "delete":
            state[collection].pop(doc_id, None)
        else:
            raise StoreError(f"{path}: unknown journal op {op!r}")
    return state


def _load_snapshot(path: Path) -> dict:
    state = {c: {} for c in COLLECTIONS}
    if not path.exists():
        return state
    for idx, raw in enumerate(path.read_text().splitlines()):
        if not raw.strip():
            continue
        try:
            doc = json.loads(raw)
            state[doc["collection"]][doc["id"]] = dict(doc["fields"])
        except (ValueError, KeyError) as exc:
            raise StoreError(f"{path}: corrupt snapshot line {idx + 1}: {exc}") from None
    return state


class Store:
    """Single-writer, file-backed document store with an append-only journal."""

    def __init__(self, directory: Path, clock=None, fsync: bool = False):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._fsync = fsync
        self._journal_path = self.directory / JOURNAL_FILE
        self._snapshot_path = self.directory / SNAPSHOT_FILE
        self._state = _load_snapshot(self._snapshot_path)
        replay_journal(self._journal_path, self._state)
        self._journal = open(self._journal_path, "a", encoding="utf-8")
        self._seq = self._last_seq()

    @classmethod
    def open(cls, directory: Path, **kwargs) -> "Store":
        return cls(directory, **kwargs)

    def close(self):
        self._journal.close()

    def _last_seq(self) -> int:
        last = 0
        if self._journal_path.exists():
            for raw in self._journal_path.read_bytes().split(b"\n"):
                try:
                    last = max(last, json.loads(raw)["seq"])
                except (ValueError, KeyError, TypeError):
                    continue
        return last

    def _now(self) -> int:
        if self._clock is not None:
            return self._clock.now_ms()
        import time

        return int(time.time() * 1000)

    def _append(self, op: str, collection: str, doc_id: str, fields: dict | None):
        self._seq += 1
        entry = {"seq": self._seq, "op": op, "collection": collection,
                 "id": doc_id, "ts": self._now()}
        if fields is not None:
            entry["fields"] = fields
        self._journal.write(json.dumps(entry, sort_keys=True) + "\n")
        self._journal.flush()
        if self._fsync:
            import os

            os.fsync(self._journal.fileno())

    # -- document operations -------------------------------------------------

    def put(self, collection: str, doc_id: str, fields: dict) -> Document:
        fields = dict(fields)
        _check_fields(collection, fields)
        self._append("put", collection, doc_id, fields)
        self._state[collection][doc_id] = fields
        return Document(collection, doc_id, dict(fields))

    def get(self, collection: str, doc_id: str) -> Document | None:
        if collection not in COLLECTIONS:
            raise StoreError(f"unknown collection {collection!r}")
        fields = self._state[collection].get(doc_id)
        return Document(collection, doc_id, dict(fields)) if fields is not None else None

    def delete(self, collection: str, doc_id: str):
        if collection not in COLLECTIONS:
            raise StoreError(f"unknown collection {collection!r}")
        self._append("delete", collection, doc_id, None)
        self._state[collection].pop(doc_id, None)

    def query(self, collection: str, field: str, value) -> list[Document]:
        """Equality filter over one field, results ordered by document id."""
        if collection not in COLLECTIONS:
            raise StoreError(f"unknown collection {collection!r}")
        out = []
        for doc_id in sorted(self._state[collection]):
            fields = self._state[collection][doc_id]
            if fields.get(field) == value:
                out.append(Document(collection, doc_id, dict(fields)))
        return out

    def ids(self, collection: str) -> list[str]:
        return sorted(self._state[collection])

    def snapshot_state(self) -> dict:
        """Deep copy of the live state, for tests and compaction."""
        return {c: {i: dict(f) for i, f in docs.items()} for c, docs in self._state.items()}

    # -- compaction ----------------------------------------------------------

    def compact(self):
        """Write the live state as a snapshot and start a fresh journal."""
        tmp = self._snapshot_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for collection in COLLECTIONS:
                for doc_id in sorted(self._state[collection]):
                    fh.write(json.dumps(
                        {"collection": collection, "id": doc_id,
                         "fields": self._state[collection][doc_id]},
                        sort_keys=True) + "\n")
        tmp.replace(self._snapshot_path)
        self._journal.close()
        self._journal_path.unlink()
        self._journal = open(self._journal_path, "a", encoding="utf-8")
        self._seq = 0

    # -- slot allocation -----------------------------------------------------

    def allocate_slot(self) -> str:
        """Flip the lowest-id free slot to assigned; raises LotFull when none."""
        for doc_id in sorted(self._state["slots"]):
            fields = self._state["slots"][doc_id]
            if fields.get("status") == "free":
                updated = dict(fields)
                updated["status"] = "assigned"
                self.put("slots", doc_id, updated)
                return doc_id
        raise LotFull("no free slot")

    def release_slot(self, slot_id: str):
        fields = self._state["slots"].get(slot_id)
        if fields is None:
            raise StoreError(f"unknown slot {slot_id!r}")
        if fields.get("status") != "assigned":
            raise StoreError(f"slot {slot_id!r} is not assigned")
        updated = dict(fields)
        updated["status"] = "free"
        updated.pop("plate", None)
        updated.pop("session", None)
        self.put("slots", slot_id, updated)

    def slot_counts(self) -> tuple[int, int]:
        free = sum(1 for f in self._state["slots"].values() if f.get("status") == "free")
        assigned = sum(1 for f in self._state["slots"].values() if f.get("status") == "assigned")
        return free, assigned
