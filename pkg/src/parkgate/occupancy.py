"""Parking slot occupancy from camera frames, plus a synthetic lot generator.

Per-frame pipeline: grayscale, Gaussian blur, local-mean threshold, median
despeckle, dilate. A slot counts as occupied when the foreground fill ratio
inside its rectangle exceeds the configured threshold. Bright paint (lane
lines) and car edges survive the threshold; flat asphalt does not.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import glyphs
from .imaging import BinaryRaster, Raster, adaptive_threshold, gaussian_blur, median_filter, morphology, to_grayscale

__all__ = [
    "Slot",
    "SlotMap",
    "OccupancyParams",
    "SlotState",
    "OccupancyState",
    "load_slotmap",
    "parse_slotmap",
    "format_slotmap",
    "analyze_frame",
    "foreground_mask",
    "generate_synthetic_lot",
    "render_overlay",
]


@dataclass(frozen=True)
class Slot:
    slot_id: str
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate slot rectangle {self}")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass
class SlotMap:
    camera_id: str
    width: int
    height: int
    slots: list[Slot]

    def __post_init__(self):
        seen = set()
        for slot in self.slots:
            if slot.slot_id in seen:
                raise ValueError(f"duplicate slot id {slot.slot_id!r}")
            seen.add(slot.slot_id)
            if slot.x1 < 0 or slot.y1 < 0 or slot.x2 > self.width or slot.y2 > self.height:
                raise ValueError(f"slot {slot.slot_id} outside the {self.width}x{self.height} frame")


@dataclass(frozen=True)
class OccupancyParams:
    blur_kernel: int = 5
    blur_sigma: float = 1.0
    threshold_block: int = 25
    threshold_offset: int = 16
    median_kernel: int = 3
    dilate_kernel: int = 3
    fill_ratio_threshold: float = 0.25

    def __post_init__(self):
        for name in ("blur_kernel", "threshold_block", "median_kernel", "dilate_kernel"):
            if getattr(self, name) % 2 == 0 or getattr(self, name) < 1:
                raise ValueError(f"{name} must be odd and positive")
        if not 0.0 < self.fill_ratio_threshold < 1.0:
            raise ValueError("fill_ratio_threshold must be in (0, 1)")


@dataclass(frozen=True)
class SlotState:
    slot_id: str
    occupied: bool
    fill_ratio: float


@dataclass
class OccupancyState:
    slots: list[SlotState]
    timestamp: int = 0

    def occupied_ids(self) -> set[str]:
        return {s.slot_id for s in self.slots if s.occupied}


def parse_slotmap(text: str, source: str = "<slotmap>") -> SlotMap:
    camera = None
    slots = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if fields[0] == "camera":
            if camera is not None:
                raise ValueError(f"{source}:{lineno}: duplicate camera header")
            if len(fields) != 4:
                raise ValueError(f"{source}:{lineno}: camera line needs id, width, height")
            camera = (fields[1], int(fields[2]), int(fields[3]))
        elif fields[0] == "slot":
            if camera is None:
                raise ValueError(f"{source}:{lineno}: slot line before camera header")
            if len(fields) != 6:
                raise ValueError(f"{source}:{lineno}: slot line needs id and 4 coordinates")
            slots.append(Slot(fields[1], *(int(v) for v in fields[2:])))
        else:
            raise ValueError(f"{source}:{lineno}: unknown directive {fields[0]!r}")
    if camera is None:
        raise ValueError(f"{source}: missing camera header")
    return SlotMap(camera_id=camera[0], width=camera[1], height=camera[2], slots=slots)


def load_slotmap(path: Path) -> SlotMap:
    return parse_slotmap(Path(path).read_text(), source=str(path))


def format_slotmap(slotmap: SlotMap) -> str:
    lines = [f"camera {slotmap.camera_id} {slotmap.width} {slotmap.height}"]
    for s in slotmap.slots:
        lines.append(f"slot {s.slot_id} {s.x1} {s.y1} {s.x2} {s.y2}")
    return "\n".join(lines) + "\n"


def foreground_mask(frame: Raster, params: OccupancyParams = OccupancyParams()) -> BinaryRaster:
    gray = to_grayscale(frame)
    blurred = gaussian_blur(gray, params.blur_kernel, params.blur_sigma)
    mask = adaptive_threshold(blurred, params.threshold_block, params.threshold_offset)
    mask = median_filter(mask, params.median_kernel)
    return morphology(mask, "dilate", params.dilate_kernel)


def analyze_frame(frame: Raster, slotmap: SlotMap,
                  params: OccupancyParams = OccupancyParams(),
                  timestamp: int = 0) -> OccupancyState:
    """Classify every mapped slot as free or occupied."""
    if frame.width != slotmap.width or frame.height != slotmap.height:
        raise ValueError(f"frame {frame.width}x{frame.height} does not match "
                         f"slot map {slotmap.width}x{slotmap.height}")
    mask = foreground_mask(frame, params).to_array()
    states = []
    for slot in slotmap.slots:
        region = mask[slot.y1:slot.y2, slot.x1:slot.x2]
        fill = float(np.count_nonzero(region)) / slot.area
        states.append(SlotState(slot.slot_id, fill > params.fill_ratio_threshold, fill))
    return OccupancyState(slots=states, timestamp=timestamp)


# ---------------------------------------------------------------------------
# Synthetic lot rendering (test oracle: the generator knows the truth)

ASPHALT = 90
ASPHALT_NOISE = 8
LINE_VALUE = 255
CAR_BODY = 230
CAR_DARK = 40

SLOT_W, SLOT_H, SLOT_GAP = 100, 240, 20


def generate_synthetic_lot(seed: int, slot_count: int = 5,
                           occupied: set[str] | None = None,
                           width: int = 640, height: int = 480
                           ) -> tuple[Raster, SlotMap, set[str]]:
    """Deterministic lot scene: noisy asphalt, lane lines, cars in `occupied`.

    Returns (frame, slot map, ground-truth occupied ids). Slot ids are "1"..n.
    """
    occupied = set(occupied or ())
    slot_ids = [str(i + 1) for i in range(slot_count)]
    unknown = occupied - set(slot_ids)
    if unknown:
        raise ValueError(f"occupied ids not in slot map: {sorted(unknown)}")
    total_w = slot_count * SLOT_W + (slot_count - 1) * SLOT_GAP
    if total_w > width - 20 or SLOT_H > height - 40:
        raise ValueError("frame too small for the requested slot count")
    x0 = (width - total_w) // 2
    y0 = (height - SLOT_H) // 2

    rng = random.Random(seed)
    noise = np.array([[rng.randint(-ASPHALT_NOISE, ASPHALT_NOISE) for _ in range(width)]
                      for _ in range(height)], dtype=np.int16)
    canvas = np.clip(ASPHALT + noise, 0, 255).astype(np.uint8)

    slots = []
    for i, slot_id in enumerate(slot_ids):
        sx = x0 + i * (SLOT_W + SLOT_GAP)
        slots.append(Slot(slot_id, sx, y0, sx + SLOT_W, y0 + SLOT_H))
        if i < slot_count - 1:
            lx = sx + SLOT_W + SLOT_GAP // 2 - 1
            canvas[y0 - 15 : y0 + SLOT_H + 15, lx : lx + 3] = LINE_VALUE

    for slot in slots:
        if slot.slot_id not in occupied:
            continue
        inset_x = rng.randint(9, 13)
        inset_y = rng.randint(14, 20)
        body = CAR_BODY + rng.randint(-10, 5)
        cx1, cy1 = slot.x1 + inset_x, slot.y1 + inset_y
        cx2, cy2 = slot.x2 - inset_x, slot.y2 - inset_y
        _draw_car(canvas, cx1, cy1, cx2, cy2, body)
    frame = Raster.from_array(canvas)
    slotmap = SlotMap(camera_id=f"synthetic-{seed}", width=width, height=height, slots=slots)
    return frame, slotmap, occupied


def _draw_car(canvas: np.ndarray, x1: int, y1: int, x2: int, y2: int, body: int):
    h, w = y2 - y1, x2 - x1
    canvas[y1:y2, x1:x2] = body
    # Rounded corners: restore asphalt outside a quarter-circle of radius 10.
    r = 10
    yy, xx = np.ogrid[:r, :r]
    corner = (r - yy) ** 2 + (r - xx) ** 2 > r * r
    for sy, sx, flip_y, flip_x in ((y1, x1, False, False), (y1, x2 - r, False, True),
                                   (y2 - r, x1, True, False), (y2 - r, x2 - r, True, True)):
        mask = corner[::-1 if flip_y else 1, ::-1 if flip_x else 1]
        patch = canvas[sy : sy + r, sx : sx + r]
        patch[mask] = ASPHALT
    # Windshield and rear window bands.
    ws1, ws2 = y1 + int(0.14 * h), y1 + int(0.30 * h)
    rw1, rw2 = y1 + int(0.70 * h), y1 + int(0.86 * h)
    canvas[ws1:ws2, x1 + 6 : x2 - 6] = CAR_DARK
    canvas[rw1:rw2, x1 + 6 : x2 - 6] = CAR_DARK
    # Roof detail grid between the windows keeps the local mean below the
    # body value everywhere, so the body survives the adaptive threshold.
    pitch, square = 22, 10
    for gy in range(ws2 + 8, rw1 - 8 - square, pitch):
        for gx in range(x1 + 8, x2 - 8 - square, pitch):
            canvas[gy : gy + square, gx : gx + square] = CAR_DARK


def render_overlay(frame: Raster, state: OccupancyState, slotmap: SlotMap) -> Raster:
    """Outline each slot (bright = free, dark = occupied) and stamp the fill percent."""
    by_id = {s.slot_id: s for s in state.slots}
    arr = to_grayscale(frame).to_array().copy()
    for slot in slotmap.slots:
        st = by_id.get(slot.slot_id)
        if st is None:
            raise ValueError(f"state missing slot {slot.slot_id!r}")
        value = 255 if not st.occupied else 0
        arr[slot.y1 : slot.y1 + 2, slot.x1 : slot.x2] = value
        arr[slot.y2 - 2 : slot.y2, slot.x1 : slot.x2] = value
        arr[slot.y1 : slot.y2, slot.x1 : slot.x1 + 2] = value
        arr[slot.y1 : slot.y2, slot.x2 - 2 : slot.x2] = value
        label = str(int(round(st.fill_ratio * 100)))
        glyphs.draw_glyphs(arr, slot.x1 + 5, slot.y1 + 6, label, scale=2, value=value)
    return Raster.from_array(arr)
