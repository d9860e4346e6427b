"""Detection evaluation: IOU, greedy matching, average precision, and report building.

Matching convention: predictions are processed in descending confidence order
(ties keep input order); each prediction claims the unmatched same-class truth
with the highest IOU at or above the threshold (ties go to the lowest truth
index). AP uses all-point interpolation. Precision/recall/IOU are reported at
the confidence threshold that maximizes F1 (ties resolved toward the lower
threshold). Rate arithmetic is exact (integer fractions) until final output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

__all__ = [
    "PixelBox",
    "ScoredDetection",
    "GroundTruth",
    "MatchResult",
    "EvalReport",
    "iou",
    "match_detections",
    "average_precision",
    "evaluate",
    "render_report_table",
    "render_report_kv",
]


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box with exclusive max corner; x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class ScoredDetection:
    box: PixelBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    box: PixelBox
    class_id: int


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection area over union area; 0 for disjoint, 1 for identical boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((a.area + b.area) - inter)


@dataclass
class MatchResult:
    order: list[int]                       # prediction indices, descending confidence
    matched: dict[int, tuple[int, float]]  # pred index -> (truth index, iou)
    tp: int
    fp: int
    fn: int

    def flag(self, pred_index: int) -> bool:
        return pred_index in self.matched


def match_detections(preds: list[ScoredDetection], truths: list[GroundTruth],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy confidence-ordered matching with single assignment per truth."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou threshold out of range: {iou_threshold}")
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    taken = [False] * len(truths)
    matched: dict[int, tuple[int, float]] = {}
    for pi in order:
        pred = preds[pi]
        best_j, best_iou = -1, 0.0
        for j, truth in enumerate(truths):
            if taken[j] or truth.class_id != pred.class_id:
                continue
            overlap = iou(pred.box, truth.box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j >= 0:
            taken[best_j] = True
            matched[pi] = (best_j, best_iou)
    tp = len(matched)
    return MatchResult(order, matched, tp, len(preds) - tp, len(truths) - tp)


def _ap_fraction(flags: list[bool], truth_count: int) -> Fraction:
    if truth_count == 0:
        return Fraction(0) if flags else Fraction(1)
    recalls: list[Fraction] = []
    precisions: list[Fraction] = []
    tp = 0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
        recalls.append(Fraction(tp, truth_count))
        precisions.append(Fraction(tp, rank))
    # Monotone envelope: best precision achievable at this recall or beyond.
    envelope = list(precisions)
    for i in range(len(envelope) - 2, -1, -1):
        if envelope[i + 1] > envelope[i]:
            envelope[i] = envelope[i + 1]
    ap = Fraction(0)
    prev = Fraction(0)
    for i, r in enumerate(recalls):
        if r > prev:
            ap += (r - prev) * envelope[i]
            prev = r
    return ap


def average_precision(flags: list[bool], truth_count: int) -> float:
    """Area under the all-point-interpolated precision/recall curve.

    `flags` are TP markers in descending-confidence order. With no truths the
    AP is 1 for an empty prediction list and 0 otherwise.
    """
    if truth_count < 0:
        raise ValueError("truth_count must be >= 0")
    return float(_ap_fraction(flags, truth_count))


@dataclass
class EvalReport:
    per_class_ap: dict[int, float]
    map50: float
    precision: float
    recall: float
    mean_iou: float
    tp: int
    fp: int
    fn: int
    threshold: float
    iou_threshold: float = 0.5
    class_names: dict[int, str] = field(default_factory=dict)


def evaluate(truths: dict[str, list[GroundTruth]], preds: dict[str, list[ScoredDetection]],
             iou_threshold: float = 0.5) -> EvalReport:
    """Evaluate a prediction set against ground truth over a whole dataset.

    Both arguments map an image id to that image's boxes. Matching runs per
    image; ranking pools images (sorted by image id, input order within an
    image, then stable-sorted by descending confidence).
    """
    image_ids = sorted(set(truths) | set(preds))
    ranked: list[tuple[float, int, bool, float]] = []  # conf, class, tp flag, matched iou
    truth_counts: dict[int, int] = {}
    for image_id in image_ids:
        image_truths = truths.get(image_id, [])
        image_preds = preds.get(image_id, [])
        for t in image_truths:
            truth_counts[t.class_id] = truth_counts.get(t.class_id, 0) + 1
        result = match_detections(image_preds, image_truths, iou_threshold)
        for pi in result.order:
            pred = image_preds[pi]
            hit = result.matched.get(pi)
            ranked.append((pred.confidence, pred.class_id,
                           hit is not None, hit[1] if hit else 0.0))
    ranked.sort(key=lambda row: -row[0])

    class_ids = sorted(set(truth_counts) | {row[1] for row in ranked})
    ap_fracs: dict[int, Fraction] = {}
    for cid in class_ids:
        flags = [row[2] for row in ranked if row[1] == cid]
        ap_fracs[cid] = _ap_fraction(flags, truth_counts.get(cid, 0))
    if ap_fracs:
        map_frac = sum(ap_fracs.values(), Fraction(0)) / len(ap_fracs)
    else:
        map_frac = Fraction(1)

    total_truths = sum(truth_counts.values())
    best = None  # (f1, threshold index preference) -> kept as explicit scan
    if ranked:
        # Candidate operating points: every distinct confidence, scanned from
        # the lowest so that ties keep the lower threshold.
        flags_total = 0
        prefix_tp = []
        for _, _, flag, _ in ranked:
            flags_total += 1 if flag else 0
            prefix_tp.append(flags_total)
        n = len(ranked)
        candidates = []
        for i in range(n - 1, -1, -1):
            conf = ranked[i][0]
            if i + 1 < n and ranked[i + 1][0] == conf:
                continue  # same threshold as the row below it
            candidates.append((conf, i + 1))  # include ranks [0, i]
        for conf, size in candidates:
            tp = prefix_tp[size - 1]
            fp = size - tp
            precision = Fraction(tp, tp + fp)
            recall = Fraction(tp, total_truths) if total_truths else Fraction(1)
            f1 = (2 * precision * recall / (precision + recall)
                  if precision + recall > 0 else Fraction(0))
            if best is None or f1 > best[0]:
                best = (f1, conf, size, tp, fp)
    if best is None:
        tp = fp = 0
        size = 0
        threshold = 1.0
        precision = Fraction(1) if total_truths == 0 else Fraction(0)
        recall = Fraction(1) if total_truths == 0 else Fraction(0)
    else:
        _, threshold, size, tp, fp = best
        precision = Fraction(tp, tp + fp)
        recall = Fraction(tp, total_truths) if total_truths else Fraction(1)
    fn = total_truths - tp
    matched_ious = [row[3] for row in ranked[:size] if row[2]]
    mean_iou = math.fsum(matched_ious) / len(matched_ious) if matched_ious else 0.0

    return EvalReport(
        per_class_ap={cid: float(frac) for cid, frac in ap_fracs.items()},
        map50=float(map_frac),
        precision=float(precision),
        recall=float(recall),
        mean_iou=mean_iou,
        tp=tp, fp=fp, fn=fn,
        threshold=threshold,
        iou_threshold=iou_threshold,
    )


_FOOTNOTE = ("IOU column: mean IOU over true-positive matches at the best-F1 "
             "operating point (threshold shown as 'conf').")


def render_report_table(report: EvalReport) -> str:
    """Aligned text table in the Precision/Recall/mAP/IOU column layout."""
    lines = []
    name = lambda cid: report.class_names.get(cid, f"class{cid}")
    width = max([len(name(c)) for c in report.per_class_ap] + [5])
    lines.append(f"{'class':<{width}}  AP@{report.iou_threshold * 100:.0f}")
    for cid in sorted(report.per_class_ap):
        lines.append(f"{name(cid):<{width}}  {report.per_class_ap[cid]:.4f}")
    lines.append("")
    lines.append("Precision  Recall  mAP@50  IOU     conf")
    lines.append(f"{report.precision:<9.4f}  {report.recall:<6.4f}  "
                 f"{report.map50:<6.4f}  {report.mean_iou:<6.4f}  {report.threshold:.4f}")
    lines.append("")
    lines.append(_FOOTNOTE)
    return "\n".join(lines)


def render_report_kv(report: EvalReport) -> str:
    """Machine-readable key=value lines."""
    lines = []
    for cid in sorted(report.per_class_ap):
        lines.append(f"ap.{cid}={report.per_class_ap[cid]!r}")
    lines.append(f"map50={report.map50!r}")
    lines.append(f"precision={report.precision!r}")
    lines.append(f"recall={report.recall!r}")
    lines.append(f"mean_iou={report.mean_iou!r}")
    lines.append(f"tp={report.tp}")
    lines.append(f"fp={report.fp}")
    lines.append(f"fn={report.fn}")
    lines.append(f"threshold={report.threshold!r}")
    return "\n".join(lines)
