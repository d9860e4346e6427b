"""Plate text handling: crop, normalization, grammar parsing, and registry matching.

Plate grammar: 2-3 letter series, an optional 2-digit year (only when it is
followed by 3-4 more digits), then a 1-4 digit number. OCR confusion repair is
zone-restricted: digit look-alikes may become letters only inside the series,
letter look-alikes may become digits only inside the numeric tail, and repair
is attempted only when the string does not already fit the grammar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import NormBBox
from .imaging import Raster

__all__ = [
    "RawPlateText",
    "CanonicalPlate",
    "PlateFormatError",
    "Matched",
    "RetrySuggested",
    "NoMatch",
    "crop_plate",
    "normalize_plate",
    "parse_plate",
    "match_registry",
]

# OCR confusables, keyed by the zone the *output* character belongs to.
DIGIT_TO_LETTER = {"0": "O", "1": "I", "4": "A", "8": "B", "5": "S"}
LETTER_TO_DIGIT = {"O": "0", "I": "1", "B": "8", "S": "5", "A": "4"}

_ALNUM = set("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")
_LETTERS = set("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
_DIGITS = set("0123456789")


class PlateFormatError(ValueError):
    """Normalized text that fits no plate pattern, even after confusion repair."""


@dataclass(frozen=True)
class RawPlateText:
    text: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class CanonicalPlate:
    series: str
    number: str
    year: str = ""

    def __post_init__(self):
        if not (2 <= len(self.series) <= 3 and all(c in _LETTERS for c in self.series)):
            raise ValueError(f"bad series {self.series!r}")
        if not (1 <= len(self.number) <= 4 and all(c in _DIGITS for c in self.number)):
            raise ValueError(f"bad number {self.number!r}")
        if self.year and not (len(self.year) == 2 and all(c in _DIGITS for c in self.year)):
            raise ValueError(f"bad year {self.year!r}")
        if self.year and len(self.number) < 3:
            raise ValueError("year requires a 3-4 digit number")

    @property
    def canonical(self) -> str:
        return self.series + self.year + self.number


def crop_plate(frame: Raster, box: NormBBox, margin: float = 0.05) -> Raster:
    """Pixel crop of a normalized box expanded by `margin` of its own size."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    half_w = box.w * (1 + 2 * margin) / 2
    half_h = box.h * (1 + 2 * margin) / 2
    x1 = max(0, int(round((box.cx - half_w) * frame.width)))
    x2 = min(frame.width, int(round((box.cx + half_w) * frame.width)))
    y1 = max(0, int(round((box.cy - half_h) * frame.height)))
    y2 = min(frame.height, int(round((box.cy + half_h) * frame.height)))
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"box {box} does not intersect the frame")
    arr = frame.to_array()
    return Raster.from_array(np.ascontiguousarray(arr[y1:y2, x1:x2]))


def normalize_plate(raw: str) -> str:
    """Uppercase and strip to [A-Z0-9]; empty results are an error."""
    cleaned = "".join(c for c in raw.upper() if c in _ALNUM)
    if not cleaned:
        raise PlateFormatError(f"nothing left after normalizing {raw!r}")
    return cleaned


def _structure(series: str, digits: str) -> CanonicalPlate:
    if len(digits) in (5, 6):
        return CanonicalPlate(series=series, year=digits[:2], number=digits[2:])
    return CanonicalPlate(series=series, number=digits)


def _try_exact(text: str) -> CanonicalPlate | None:
    i = 0
    while i < len(text) and text[i] in _LETTERS:
        i += 1
    series, tail = text[:i], text[i:]
    if not (2 <= len(series) <= 3):
        return None
    if not (1 <= len(tail) <= 6 and all(c in _DIGITS for c in tail)):
        return None
    return _structure(series, tail)


def _try_repaired(text: str) -> CanonicalPlate | None:
    # Choose the segmentation needing the fewest repairs; prefer the longer
    # series on a tie. Characters already in their zone are never touched.
    best = None
    for series_len in (3, 2):
        if not series_len < len(text) <= series_len + 6:
            continue
        repairs = 0
        series = []
        for ch in text[:series_len]:
            if ch in _LETTERS:
                series.append(ch)
            elif ch in DIGIT_TO_LETTER:
                series.append(DIGIT_TO_LETTER[ch])
                repairs += 1
            else:
                series = None
                break
        if series is None:
            continue
        digits = []
        for ch in text[series_len:]:
            if ch in _DIGITS:
                digits.append(ch)
            elif ch in LETTER_TO_DIGIT:
                digits.append(LETTER_TO_DIGIT[ch])
                repairs += 1
            else:
                digits = None
                break
        if digits is None:
            continue
        if best is None or repairs < best[0]:
            best = (repairs, "".join(series), "".join(digits))
    if best is None:
        return None
    return _structure(best[1], best[2])


def parse_plate(normalized: str) -> CanonicalPlate:
    """Parse normalized text into a canonical plate.

    A string that already fits the grammar is returned as-is; confusion repair
    is only attempted before rejecting.
    """
    if any(c not in _ALNUM for c in normalized):
        raise PlateFormatError(f"{normalized!r} is not normalized plate text")
    plate = _try_exact(normalized)
    if plate is None:
        plate = _try_repaired(normalized)
    if plate is None:
        raise PlateFormatError(f"{normalized!r} fits no plate pattern")
    return plate


# -- registry matching -------------------------------------------------------

@dataclass(frozen=True)
class Matched:
    vehicle: "object"  # store Document


@dataclass(frozen=True)
class RetrySuggested:
    candidate: str


@dataclass(frozen=True)
class NoMatch:
    pass


def _within_edit_one(a: str, b: str) -> bool:
    if a == b:
        return True
    la, lb = len(a), len(b)
    if abs(la - lb) > 1:
        return False
    if la == lb:
        return sum(1 for x, y in zip(a, b) if x != y) == 1
    if la > lb:
        a, b, la, lb = b, a, lb, la
    # one insertion into a
    i = 0
    while i < la and a[i] == b[i]:
        i += 1
    return a[i:] == b[i + 1:]


def match_registry(plate: CanonicalPlate, store) -> Matched | RetrySuggested | NoMatch:
    """Exact canonical match, else a unique edit-distance-1 retry candidate.

    A retry suggestion never grants access by itself; the caller is expected
    to re-capture and try again.
    """
    exact = store.query("vehicles", "plate", plate.canonical)
    if exact:
        return Matched(vehicle=exact[0])
    candidates = []
    for doc_id in store.ids("vehicles"):
        registered = store.get("vehicles", doc_id).fields.get("plate", "")
        if registered and _within_edit_one(plate.canonical, registered):
            candidates.append(registered)
    if len(candidates) == 1:
        return RetrySuggested(candidate=candidates[0])
    return NoMatch()
