"""YOLO-format detection dataset handling: label parsing, splitting, validation, stats.

Expected layout under a dataset root:

    classes.txt        one class name per line, line number = class id
    images/            image files (searched recursively)
    labels/            one .txt per image, same relative stem

Each label line is "class_id cx cy w h" with coordinates normalized to [0, 1].
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "NormBBox",
    "AnnotationRecord",
    "DatasetItem",
    "DatasetManifest",
    "ValidationReport",
    "LabelFormatError",
    "parse_label_line",
    "format_label_line",
    "load_label_file",
    "scan_dataset",
    "split_dataset",
    "validate_dataset",
    "dataset_stats",
]

IMAGE_SUFFIXES = (".pgm", ".ppm", ".png", ".jpg", ".jpeg")


class LabelFormatError(ValueError):
    """A label line that does not follow the five-field YOLO format."""


@dataclass(frozen=True)
class NormBBox:
    """Box center/size as fractions of image width and height."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"size out of range: ({self.w}, {self.h})")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2), still normalized, not clipped to [0, 1]."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class AnnotationRecord:
    class_id: int
    bbox: NormBBox


@dataclass(frozen=True)
class DatasetItem:
    image: Path
    label: Path
    stem: str


@dataclass
class DatasetManifest:
    items: list[DatasetItem]
    splits: dict[str, list[str]]  # split name -> item stems
    class_map: dict[int, str]


def parse_label_line(line: str) -> AnnotationRecord:
    """Parse one 'class cx cy w h' line; raises LabelFormatError on bad input."""
    fields = line.split()
    if len(fields) != 5:
        raise LabelFormatError(f"expected 5 fields, got {len(fields)}: {line!r}")
    try:
        class_id = int(fields[0])
        coords = [float(f) for f in fields[1:]]
    except ValueError:
        raise LabelFormatError(f"non-numeric field in {line!r}") from None
    if class_id < 0:
        raise LabelFormatError(f"negative class id in {line!r}")
    try:
        bbox = NormBBox(*coords)
    except ValueError as exc:
        raise LabelFormatError(f"{exc} in {line!r}") from None
    return AnnotationRecord(class_id, bbox)


def format_label_line(rec: AnnotationRecord) -> str:
    b = rec.bbox
    return f"{rec.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"


def load_label_file(path: Path) -> list[AnnotationRecord]:
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(parse_label_line(line))
        except LabelFormatError as exc:
            raise LabelFormatError(f"{path}:{lineno}: {exc}") from None
    return records


def load_class_map(path: Path) -> dict[int, str]:
    names = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    return {i: name for i, name in enumerate(names)}


def scan_dataset(root: Path) -> tuple[list[DatasetItem], dict[int, str]]:
    """Pair images with labels by relative stem; returns (items, class_map)."""
    root = Path(root)
    images_dir, labels_dir = root / "images", root / "labels"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"missing images directory: {images_dir}")
    class_file = root / "classes.txt"
    class_map = load_class_map(class_file) if class_file.exists() else {}
    items = []
    for img in sorted(images_dir.rglob("*")):
        if img.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        rel = img.relative_to(images_dir)
        stem = str(rel.with_suffix(""))
        items.append(DatasetItem(img, labels_dir / rel.with_suffix(".txt"), stem))
    return items, class_map


def split_dataset(items: list[DatasetItem], ratios: tuple[float, float, float],
                  seed: int, class_map: dict[int, str] | None = None) -> DatasetManifest:
    """Deterministic seeded shuffle, then contiguous train/val/test partition.

    Split boundaries are the floors of the cumulative ratios, so the three
    splits always partition the items exactly.
    """
    if not items:
        raise ValueError("cannot split an empty dataset")
    if any(r < 0 for r in ratios) or len(ratios) != 3:
        raise ValueError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    order = list(items)
    random.Random(seed).shuffle(order)
    n = len(order)
    b1 = math.floor(n * ratios[0])
    b2 = math.floor(n * (ratios[0] + ratios[1]))
    splits = {
        "train": [it.stem for it in order[:b1]],
        "val": [it.stem for it in order[b1:b2]],
        "test": [it.stem for it in order[b2:]],
    }
    return DatasetManifest(items=order, splits=splits, class_map=dict(class_map or {}))


@dataclass
class ValidationReport:
    orphan_labels: list[str] = field(default_factory=list)
    missing_labels: list[str] = field(default_factory=list)
    bad_records: list[str] = field(default_factory=list)
    unknown_classes: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.orphan_labels or self.missing_labels
                    or self.bad_records or self.unknown_classes)

    def findings(self) -> list[str]:
        out = []
        out += [f"orphan label: {p}" for p in self.orphan_labels]
        out += [f"missing label: {p}" for p in self.missing_labels]
        out += [f"bad record: {p}" for p in self.bad_records]
        out += [f"unknown class: {p}" for p in self.unknown_classes]
        return out


def validate_dataset(root: Path) -> ValidationReport:
    """Check image/label pairing, record syntax, and class-map coverage."""
    root = Path(root)
    items, class_map = scan_dataset(root)
    report = ValidationReport()
    labeled = set()
    for item in items:
        labeled.add(item.label.resolve())
        if not item.label.exists():
            report.missing_labels.append(item.stem)
            continue
        try:
            records = load_label_file(item.label)
        except LabelFormatError as exc:
            report.bad_records.append(str(exc))
            continue
        for rec in records:
            if class_map and rec.class_id not in class_map:
                report.unknown_classes.append(f"{item.stem}: class {rec.class_id}")
    labels_dir = root / "labels"
    if labels_dir.is_dir():
        for lbl in sorted(labels_dir.rglob("*.txt")):
            if lbl.resolve() not in labeled:
                report.orphan_labels.append(str(lbl.relative_to(labels_dir)))
    return report


def dataset_stats(manifest: DatasetManifest) -> dict:
    """Per-class and per-split record/item counts."""
    per_class: dict[str, int] = {}
    total = 0
    for item in manifest.items:
        if not item.label.exists():
            continue
        for rec in load_label_file(item.label):
            name = manifest.class_map.get(rec.class_id, str(rec.class_id))
            per_class[name] = per_class.get(name, 0) + 1
            total += 1
    per_split = {name: len(stems) for name, stems in manifest.splits.items()}
    return {"per_class": per_class, "per_split": per_split, "total_records": total,
            "total_items": len(manifest.items)}
