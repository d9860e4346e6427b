import random

import numpy as np
import pytest

from parkgate.imaging import Raster
from parkgate.occupancy import (
    OccupancyParams,
    Slot,
    SlotMap,
    analyze_frame,
    format_slotmap,
    generate_synthetic_lot,
    load_slotmap,
    parse_slotmap,
    render_overlay,
)


class TestSlotMap:
    def test_parse_fixture(self):
        text = "camera gate1 640 480\nslot 1 10 10 100 200\nslot 2 120 10 210 200\n"
        slotmap = parse_slotmap(text)
        assert slotmap.camera_id == "gate1"
        assert [s.slot_id for s in slotmap.slots] == ["1", "2"]

    def test_duplicate_id_rejected(self):
        text = "camera c 100 100\nslot 1 0 0 10 10\nslot 1 20 0 30 10\n"
        with pytest.raises(ValueError, match="duplicate"):
            parse_slotmap(text)

    def test_out_of_frame_rejected(self):
        text = "camera c 100 100\nslot 1 0 0 10 101\n"
        with pytest.raises(ValueError, match="outside"):
            parse_slotmap(text)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Slot("1", 5, 5, 5, 10)

    def test_round_trip(self, tmp_path):
        _, slotmap, _ = generate_synthetic_lot(seed=3, slot_count=3, occupied={"2"})
        path = tmp_path / "map.txt"
        path.write_text(format_slotmap(slotmap))
        again = load_slotmap(path)
        assert again.slots == slotmap.slots
        assert (again.width, again.height) == (slotmap.width, slotmap.height)


class TestAnalyzeFrame:
    def test_empty_lot_all_free(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=1, slot_count=4, occupied=set())
        state = analyze_frame(frame, slotmap)
        assert state.occupied_ids() == set()
        assert all(s.fill_ratio == 0.0 for s in state.slots)

    def test_generator_truth_recovered(self):
        frame, slotmap, truth = generate_synthetic_lot(seed=2, slot_count=5,
                                                       occupied={"1", "3"})
        state = analyze_frame(frame, slotmap)
        assert state.occupied_ids() == truth == {"1", "3"}

    def test_uniform_black_frame_all_free(self):
        slotmap = SlotMap("c", 64, 64, [Slot("1", 8, 8, 30, 30)])
        frame = Raster(64, 64, 1, bytes(64 * 64))
        state = analyze_frame(frame, slotmap)
        assert state.occupied_ids() == set()
        assert state.slots[0].fill_ratio == 0.0

    def test_dimension_mismatch(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=1, slot_count=3)
        wrong = SlotMap("c", 100, 100, [Slot("1", 0, 0, 10, 10)])
        with pytest.raises(ValueError, match="match"):
            analyze_frame(frame, wrong)

    def test_deterministic(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=6, slot_count=5,
                                                   occupied={"2", "5"})
        a = analyze_frame(frame, slotmap)
        b = analyze_frame(frame, slotmap)
        assert [(s.slot_id, s.occupied, s.fill_ratio) for s in a.slots] == \
            [(s.slot_id, s.occupied, s.fill_ratio) for s in b.slots]

    def test_threshold_monotonicity(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=8, slot_count=5,
                                                   occupied={"1", "4"})
        lower = analyze_frame(frame, slotmap,
                              OccupancyParams(fill_ratio_threshold=0.05))
        higher = analyze_frame(frame, slotmap,
                               OccupancyParams(fill_ratio_threshold=0.5))
        assert higher.occupied_ids() <= lower.occupied_ids()

    def test_status_matches_threshold_rule(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=9, slot_count=5,
                                                   occupied={"2"})
        params = OccupancyParams()
        state = analyze_frame(frame, slotmap, params)
        for s in state.slots:
            assert s.occupied == (s.fill_ratio > params.fill_ratio_threshold)

    def test_far_pixels_do_not_affect_status(self):
        frame, slotmap, truth = generate_synthetic_lot(seed=4, slot_count=5,
                                                       occupied={"3"})
        arr = frame.to_array().copy()
        arr[:30, :] = 255  # noise far above all slot rectangles
        arr[-20:, :] = 0
        state = analyze_frame(Raster.from_array(arr), slotmap)
        assert state.occupied_ids() == truth


class TestGenerator:
    def test_same_seed_identical_bytes(self):
        a, _, _ = generate_synthetic_lot(seed=11, slot_count=5, occupied={"1"})
        b, _, _ = generate_synthetic_lot(seed=11, slot_count=5, occupied={"1"})
        assert a.data == b.data

    def test_unknown_occupied_id_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic_lot(seed=0, slot_count=3, occupied={"9"})

    def test_closed_loop_over_seeds(self):
        for seed in range(25):
            rng = random.Random(seed * 17 + 1)
            occupied = set(rng.sample(["1", "2", "3", "4", "5"], rng.randint(0, 5)))
            frame, slotmap, truth = generate_synthetic_lot(seed=seed, slot_count=5,
                                                           occupied=occupied)
            assert analyze_frame(frame, slotmap).occupied_ids() == truth


class TestOverlay:
    def test_changes_only_border_and_glyph_pixels(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=5, slot_count=3,
                                                   occupied={"2"})
        state = analyze_frame(frame, slotmap)
        overlay = render_overlay(frame, state, slotmap)
        diff = overlay.to_array() != frame.to_array()
        ys, xs = np.nonzero(diff)
        for y, x in zip(ys, xs):
            inside_some = False
            for slot in slotmap.slots:
                if slot.x1 <= x < slot.x2 and slot.y1 <= y < slot.y2:
                    inside_some = True
            assert inside_some, f"pixel ({x}, {y}) outside every slot changed"

    def test_free_slots_bright_borders(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=5, slot_count=2, occupied=set())
        state = analyze_frame(frame, slotmap)
        arr = render_overlay(frame, state, slotmap).to_array()
        slot = slotmap.slots[0]
        assert np.all(arr[slot.y1, slot.x1:slot.x2] == 255)

    def test_occupied_slots_dark_borders(self):
        frame, slotmap, _ = generate_synthetic_lot(seed=5, slot_count=2,
                                                   occupied={"1"})
        state = analyze_frame(frame, slotmap)
        arr = render_overlay(frame, state, slotmap).to_array()
        slot = slotmap.slots[0]
        assert np.all(arr[slot.y1, slot.x1:slot.x2] == 0)


class TestParams:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            OccupancyParams(blur_kernel=4)

    def test_fill_threshold_range(self):
        with pytest.raises(ValueError):
            OccupancyParams(fill_ratio_threshold=0.0)
