import random

import pytest

from parkgate.dataset import (
    DatasetManifest,
    LabelFormatError,
    dataset_stats,
    format_label_line,
    parse_label_line,
    scan_dataset,
    split_dataset,
    validate_dataset,
)


def make_fixture(tmp_path, stems, class_names=("car", "bus", "truck"),
                 records="0 0.5 0.5 0.2 0.1"):
    (tmp_path / "images").mkdir(exist_ok=True)
    (tmp_path / "labels").mkdir(exist_ok=True)
    (tmp_path / "classes.txt").write_text("\n".join(class_names) + "\n")
    for stem in stems:
        (tmp_path / "images" / f"{stem}.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
        (tmp_path / "labels" / f"{stem}.txt").write_text(records + "\n")
    return tmp_path


class TestParseLabelLine:
    def test_basic(self):
        rec = parse_label_line("0 0.5 0.5 0.2 0.1")
        assert rec.class_id == 0
        assert (rec.bbox.cx, rec.bbox.cy, rec.bbox.w, rec.bbox.h) == (0.5, 0.5, 0.2, 0.1)

    def test_other_class(self):
        assert parse_label_line("2 0.1 0.9 0.05 0.05").class_id == 2

    def test_out_of_range(self):
        with pytest.raises(LabelFormatError):
            parse_label_line("0 1.5 0.5 0.2 0.1")

    @pytest.mark.parametrize("line", ["0 0.5 0.5 0.2", "0 a 0.5 0.2 0.1",
                                      "-1 0.5 0.5 0.2 0.1", "0 0.5 0.5 0 0.1"])
    def test_rejects(self, line):
        with pytest.raises(LabelFormatError):
            parse_label_line(line)

    def test_reserialize_six_decimals(self):
        rng = random.Random(0)
        for _ in range(200):
            w = round(rng.uniform(0.001, 1.0), 6)
            h = round(rng.uniform(0.001, 1.0), 6)
            line = f"{rng.randrange(3)} {rng.random():.6f} {rng.random():.6f} {w} {h}"
            rec = parse_label_line(line)
            again = parse_label_line(format_label_line(rec))
            for a, b in [(rec.bbox.cx, again.bbox.cx), (rec.bbox.cy, again.bbox.cy),
                         (rec.bbox.w, again.bbox.w), (rec.bbox.h, again.bbox.h)]:
                assert abs(a - b) < 5e-7


class TestSplitDataset:
    def _items(self, tmp_path, n):
        root = make_fixture(tmp_path, [f"img{i:02d}" for i in range(n)])
        items, _ = scan_dataset(root)
        return items

    def test_paper_sixty_twenty_twenty(self, tmp_path):
        items = self._items(tmp_path, 10)
        manifest = split_dataset(items, (0.6, 0.2, 0.2), seed=7)
        sizes = tuple(len(manifest.splits[k]) for k in ("train", "val", "test"))
        assert sizes == (6, 2, 2)

    def test_floor_boundaries_five_items(self, tmp_path):
        items = self._items(tmp_path, 5)
        manifest = split_dataset(items, (0.8, 0.1, 0.1), seed=0)
        sizes = tuple(len(manifest.splits[k]) for k in ("train", "val", "test"))
        assert sizes == (4, 0, 1)

    def test_deterministic(self, tmp_path):
        items = self._items(tmp_path, 12)
        a = split_dataset(items, (0.6, 0.2, 0.2), seed=42)
        b = split_dataset(items, (0.6, 0.2, 0.2), seed=42)
        assert a.splits == b.splits

    def test_partition_exact_for_many_seeds(self, tmp_path):
        items = self._items(tmp_path, 17)
        all_stems = {it.stem for it in items}
        for seed in range(50):
            manifest = split_dataset(items, (0.6, 0.2, 0.2), seed=seed)
            parts = [set(manifest.splits[k]) for k in ("train", "val", "test")]
            assert parts[0] | parts[1] | parts[2] == all_stems
            assert sum(len(p) for p in parts) == len(all_stems)

    def test_bad_ratios(self, tmp_path):
        items = self._items(tmp_path, 4)
        with pytest.raises(ValueError):
            split_dataset(items, (0.5, 0.2, 0.2), seed=0)

    def test_empty_items(self):
        with pytest.raises(ValueError):
            split_dataset([], (0.6, 0.2, 0.2), seed=0)


class TestValidate:
    def test_clean(self, tmp_path):
        root = make_fixture(tmp_path, ["a", "b"])
        assert validate_dataset(root).clean

    def test_orphan_label(self, tmp_path):
        root = make_fixture(tmp_path, ["a"])
        (root / "labels" / "ghost.txt").write_text("0 0.5 0.5 0.1 0.1\n")
        report = validate_dataset(root)
        assert report.orphan_labels == ["ghost.txt"]

    def test_missing_label(self, tmp_path):
        root = make_fixture(tmp_path, ["a"])
        (root / "labels" / "a.txt").unlink()
        report = validate_dataset(root)
        assert report.missing_labels == ["a"]

    def test_unknown_class(self, tmp_path):
        root = make_fixture(tmp_path, ["a"], records="9 0.5 0.5 0.1 0.1")
        report = validate_dataset(root)
        assert len(report.unknown_classes) == 1


class TestStats:
    def test_counts(self, tmp_path):
        root = make_fixture(tmp_path, ["a", "b", "c"])
        (tmp_path / "labels" / "a.txt").write_text(
            "0 0.5 0.5 0.2 0.1\n0 0.2 0.2 0.1 0.1\n1 0.8 0.8 0.1 0.1\n")
        items, class_map = scan_dataset(root)
        manifest = DatasetManifest(items=items, splits={}, class_map=class_map)
        stats = dataset_stats(manifest)
        assert stats["per_class"] == {"car": 4, "bus": 1}

    def test_sum_matches_brute_force(self, tmp_path):
        root = make_fixture(tmp_path, ["a", "b"])
        items, class_map = scan_dataset(root)
        manifest = DatasetManifest(items=items, splits={}, class_map=class_map)
        stats = dataset_stats(manifest)
        brute = sum(len([ln for ln in it.label.read_text().splitlines() if ln.strip()])
                    for it in items)
        assert stats["total_records"] == sum(stats["per_class"].values()) == brute
