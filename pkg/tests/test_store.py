import json
import random

import pytest

from parkgate.clock import SimClock
from parkgate.store import LotFull, Store, StoreError, replay_journal

import oracles


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "store", clock=SimClock())
    yield s
    s.close()


class TestBasicOps:
    def test_put_then_get(self, store):
        store.put("vehicles", "LEA123", {"plate": "LEA123", "class": "car"})
        doc = store.get("vehicles", "LEA123")
        assert doc.fields == {"plate": "LEA123", "class": "car"}

    def test_get_absent_is_none(self, store):
        assert store.get("vehicles", "nope") is None

    def test_missing_required_field(self, store):
        with pytest.raises(StoreError, match="required"):
            store.put("vehicles", "x", {"plate": "X"})

    def test_unknown_collection(self, store):
        with pytest.raises(StoreError):
            store.put("gadgets", "g", {})

    def test_last_write_wins(self, store):
        store.put("employees", "e1", {"name": "a"})
        store.put("employees", "e1", {"name": "b"})
        assert store.get("employees", "e1").fields["name"] == "b"

    def test_delete(self, store):
        store.put("employees", "e1", {"name": "a"})
        store.delete("employees", "e1")
        assert store.get("employees", "e1") is None

    def test_unsupported_field_value(self, store):
        with pytest.raises(StoreError, match="unsupported"):
            store.put("events", "e1", {"payload": {"nested": 1}})


class TestQuery:
    def test_equality_singleton(self, store):
        store.put("vehicles", "LEA123", {"plate": "LEA123", "class": "car"})
        store.put("vehicles", "LEB999", {"plate": "LEB999", "class": "bus"})
        hits = store.query("vehicles", "plate", "LEA123")
        assert [d.id for d in hits] == ["LEA123"]

    def test_empty_result(self, store):
        assert store.query("vehicles", "plate", "ZZZ999") == []

    def test_matches_linear_scan(self, store):
        rng = random.Random(0)
        for i in range(30):
            store.put("slots", f"s{i:02d}", {"status": rng.choice(["free", "assigned"])})
        state = store.snapshot_state()
        for status in ("free", "assigned"):
            expect = oracles.linear_scan_query(state, "slots", "status", status)
            assert [d.id for d in store.query("slots", "status", status)] == expect


class TestReplay:
    def test_three_puts(self, tmp_path):
        s = Store(tmp_path, clock=SimClock())
        for i in range(3):
            s.put("employees", f"e{i}", {"name": f"n{i}"})
        s.close()
        state = replay_journal(tmp_path / "journal.jsonl")
        assert sorted(state["employees"]) == ["e0", "e1", "e2"]

    def test_put_then_delete_absent(self, tmp_path):
        s = Store(tmp_path, clock=SimClock())
        s.put("employees", "e1", {"name": "x"})
        s.delete("employees", "e1")
        s.close()
        state = replay_journal(tmp_path / "journal.jsonl")
        assert state["employees"] == {}

    def test_truncated_final_line_discarded(self, tmp_path):
        s = Store(tmp_path, clock=SimClock())
        s.put("employees", "e1", {"name": "x"})
        s.put("employees", "e2", {"name": "y"})
        s.close()
        journal = tmp_path / "journal.jsonl"
        data = journal.read_bytes()
        journal.write_bytes(data[:-10])  # cut into the last entry
        state = replay_journal(journal)
        assert sorted(state["employees"]) == ["e1"]

    def test_out_of_order_sequence_rejected(self, tmp_path):
        journal = tmp_path / "journal.jsonl"
        entries = [
            {"seq": 2, "op": "put", "collection": "employees", "id": "a",
             "fields": {"name": "x"}, "ts": 0},
            {"seq": 1, "op": "put", "collection": "employees", "id": "b",
             "fields": {"name": "y"}, "ts": 0},
        ]
        journal.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
        with pytest.raises(StoreError, match="out-of-order"):
            replay_journal(journal)

    def test_reopen_reflects_acknowledged_writes(self, tmp_path):
        s = Store(tmp_path, clock=SimClock())
        s.put("vehicles", "LEA123", {"plate": "LEA123", "class": "car"})
        s.close()
        s2 = Store(tmp_path, clock=SimClock())
        assert s2.get("vehicles", "LEA123").fields["plate"] == "LEA123"
        s2.close()


def _random_op(rng, store, model):
    kind = rng.randrange(4)
    if kind == 0:
        doc_id = f"e{rng.randrange(10)}"
        fields = {"name": f"name{rng.randrange(100)}"}
        store.put("employees", doc_id, fields)
        model["employees"][doc_id] = dict(fields)
    elif kind == 1:
        doc_id = f"e{rng.randrange(10)}"
        store.delete("employees", doc_id)
        model["employees"].pop(doc_id, None)
    elif kind == 2:
        doc_id = f"v{rng.randrange(6)}"
        fields = {"plate": f"LEA{rng.randrange(999):03d}", "class": "car"}
        store.put("vehicles", doc_id, fields)
        model["vehicles"][doc_id] = dict(fields)
    else:
        doc_id = f"s{rng.randrange(5)}"
        fields = {"status": rng.choice(["free", "assigned"])}
        store.put("slots", doc_id, fields)
        model["slots"][doc_id] = dict(fields)


class TestCrashSafety:
    def test_replay_equals_model_after_every_prefix(self, tmp_path):
        rng = random.Random(2024)
        store = Store(tmp_path, clock=SimClock())
        model = {c: {} for c in ("vehicles", "employees", "events", "slots")}
        journal = tmp_path / "journal.jsonl"
        for step in range(300):
            _random_op(rng, store, model)
            if step % 10 == 0 or step > 290:
                replayed = replay_journal(journal)
                assert replayed == {**{c: {} for c in replayed}, **model}
        store.close()

    def test_compaction_preserves_state(self, tmp_path):
        rng = random.Random(7)
        store = Store(tmp_path, clock=SimClock())
        model = {c: {} for c in ("vehicles", "employees", "events", "slots")}
        for _ in range(60):
            _random_op(rng, store, model)
        before = store.snapshot_state()
        store.compact()
        assert store.snapshot_state() == before
        for _ in range(40):
            _random_op(rng, store, model)
        after = store.snapshot_state()
        store.close()
        reopened = Store(tmp_path, clock=SimClock())
        assert reopened.snapshot_state() == after
        reopened.close()

    def test_compacted_journal_smaller(self, tmp_path):
        store = Store(tmp_path, clock=SimClock())
        for i in range(50):
            store.put("employees", "e1", {"name": f"rev{i}"})
        size_before = (tmp_path / "journal.jsonl").stat().st_size
        store.compact()
        size_after = (tmp_path / "journal.jsonl").stat().st_size
        store.close()
        assert size_after < size_before


class TestSlots:
    def _seed(self, store, n=3):
        for i in range(n):
            store.put("slots", str(i + 1), {"status": "free"})

    def test_lowest_id_first(self, store):
        self._seed(store)
        assert store.allocate_slot() == "1"
        assert store.allocate_slot() == "2"

    def test_lot_full(self, store):
        self._seed(store, 2)
        store.allocate_slot()
        store.allocate_slot()
        with pytest.raises(LotFull):
            store.allocate_slot()

    def test_release_frees(self, store):
        self._seed(store, 1)
        slot = store.allocate_slot()
        store.release_slot(slot)
        assert store.allocate_slot() == slot

    def test_release_free_slot_is_anomaly(self, store):
        self._seed(store, 1)
        with pytest.raises(StoreError, match="not assigned"):
            store.release_slot("1")

    def test_accounting_under_random_interleavings(self, store):
        self._seed(store, 5)
        rng = random.Random(99)
        held = []
        for _ in range(300):
            if held and rng.random() < 0.5:
                store.release_slot(held.pop(rng.randrange(len(held))))
            else:
                try:
                    held.append(store.allocate_slot())
                except LotFull:
                    assert len(held) == 5
            free, assigned = store.slot_counts()
            assert free + assigned == 5
            assert assigned == len(held)
