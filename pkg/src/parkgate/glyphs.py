"""Built-in 5x7 pixel font: plate rendering, overlay text, and template matching.

Rendered plates use a fixed layout measured in glyph units of `scale` pixels:
a one-unit white border all around, glyphs 5 units wide with a one-unit gap,
7 units tall. Total size: (1 + 6*len(text)) x 9 units. Ink is 0, background 255.
"""

from __future__ import annotations

import numpy as np

from .imaging import Raster

# Fraction of cell pixels that must agree with the best template; below this
# the cell is reported as '?'.
MATCH_FLOOR = 0.9

_FONT_ROWS = {
    "0": (".XXX.", "X...X", "X..XX", "X.X.X", "XX..X", "X...X", ".XXX."),
    "1": ("..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "2": (".XXX.", "X...X", "....X", "...X.", "..X..", ".X...", "XXXXX"),
    "3": ("XXXXX", "...X.", "..X..", "...X.", "....X", "X...X", ".XXX."),
    "4": ("...X.", "..XX.", ".X.X.", "X..X.", "XXXXX", "...X.", "...X."),
    "5": ("XXXXX", "X....", "XXXX.", "....X", "....X", "X...X", ".XXX."),
    "6": ("..XX.", ".X...", "X....", "XXXX.", "X...X", "X...X", ".XXX."),
    "7": ("XXXXX", "....X", "...X.", "..X..", ".X...", ".X...", ".X..."),
    "8": (".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."),
    "9": (".XXX.", "X...X", "X...X", ".XXXX", "....X", "...X.", ".XX.."),
    "A": (".XXX.", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "B": ("XXXX.", "X...X", "X...X", "XXXX.", "X...X", "X...X", "XXXX."),
    "C": (".XXX.", "X...X", "X....", "X....", "X....", "X...X", ".XXX."),
    "D": ("XXXX.", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXX."),
    "E": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "XXXXX"),
    "F": ("XXXXX", "X....", "X....", "XXXX.", "X....", "X....", "X...."),
    "G": (".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXXX"),
    "H": ("X...X", "X...X", "X...X", "XXXXX", "X...X", "X...X", "X...X"),
    "I": (".XXX.", "..X..", "..X..", "..X..", "..X..", "..X..", ".XXX."),
    "J": ("..XXX", "...X.", "...X.", "...X.", "...X.", "X..X.", ".XX.."),
    "K": ("X...X", "X..X.", "X.X..", "XX...", "X.X..", "X..X.", "X...X"),
    "L": ("X....", "X....", "X....", "X....", "X....", "X....", "XXXXX"),
    "M": ("X...X", "XX.XX", "X.X.X", "X.X.X", "X...X", "X...X", "X...X"),
    "N": ("X...X", "X...X", "XX..X", "X.X.X", "X..XX", "X...X", "X...X"),
    "O": (".XXX.", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "P": ("XXXX.", "X...X", "X...X", "XXXX.", "X....", "X....", "X...."),
    "Q": (".XXX.", "X...X", "X...X", "X...X", "X.X.X", "X..X.", ".XX.X"),
    "R": ("XXXX.", "X...X", "X...X", "XXXX.", "X.X..", "X..X.", "X...X"),
    "S": (".XXXX", "X....", "X....", ".XXX.", "....X", "....X", "XXXX."),
    "T": ("XXXXX", "..X..", "..X..", "..X..", "..X..", "..X..", "..X.."),
    "U": ("X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX."),
    "V": ("X...X", "X...X", "X...X", "X...X", "X...X", ".X.X.", "..X.."),
    "W": ("X...X", "X...X", "X...X", "X.X.X", "X.X.X", "XX.XX", "X...X"),
    "X": ("X...X", "X...X", ".X.X.", "..X..", ".X.X.", "X...X", "X...X"),
    "Y": ("X...X", "X...X", ".X.X.", "..X..", "..X..", "..X..", "..X.."),
    "Z": ("XXXXX", "....X", "...X.", "..X..", ".X...", "X....", "XXXXX"),
}

GLYPHS = {ch: np.array([[c == "X" for c in row] for row in rows], dtype=bool)
          for ch, rows in _FONT_ROWS.items()}


def render_plate(text: str, scale: int = 4) -> Raster:
    """Render text as a white plate with black fixed-pitch glyphs."""
    if not text:
        raise ValueError("cannot render empty text")
    if scale < 1:
        raise ValueError("scale must be >= 1")
    for ch in text:
        if ch not in GLYPHS:
            raise ValueError(f"no glyph for {ch!r}")
    h = 9 * scale
    w = (1 + 6 * len(text)) * scale
    canvas = np.full((h, w), 255, dtype=np.uint8)
    for i, ch in enumerate(text):
        draw_glyphs(canvas, (1 + 6 * i) * scale, scale, ch, scale, value=0)
    return Raster.from_array(canvas)


def draw_glyphs(canvas: np.ndarray, x: int, y: int, text: str, scale: int, value: int = 255):
    """Stamp glyph ink pixels onto a 2-d array; background pixels are untouched."""
    cx = x
    for ch in text:
        glyph = GLYPHS.get(ch)
        if glyph is not None:
            for gy in range(7):
                for gx in range(5):
                    if glyph[gy, gx]:
                        y0, x0 = y + gy * scale, cx + gx * scale
                        canvas[y0 : y0 + scale, x0 : x0 + scale] = value
        cx += 6 * scale


def _bright_bbox(arr: np.ndarray, floor: int = 200):
    rows = np.any(arr >= floor, axis=1)
    cols = np.any(arr >= floor, axis=0)
    if not rows.any():
        raise ValueError("no plate-like bright region found")
    y0, y1 = np.argmax(rows), len(rows) - np.argmax(rows[::-1])
    x0, x1 = np.argmax(cols), len(cols) - np.argmax(cols[::-1])
    return int(y0), int(y1), int(x0), int(x1)


def match_plate(img: Raster) -> tuple[str, float]:
    """Read text back from a rendered plate (possibly embedded in a larger crop).

    Locates the white plate by its bright extent, then template-matches each
    fixed-pitch cell against the font. A cell below the match floor becomes
    '?' and contributes zero confidence. Returns (text, mean cell confidence).
    """
    if img.channels != 1:
        from .imaging import to_grayscale

        img = to_grayscale(img)
    arr = img.to_array()
    y0, y1, x0, x1 = _bright_bbox(arr)
    ph, pw = y1 - y0, x1 - x0
    if ph % 9 != 0:
        raise ValueError(f"plate height {ph} is not a multiple of 9")
    scale = ph // 9
    if scale < 1 or (pw // scale - 1) % 6 != 0 or pw % scale != 0:
        raise ValueError(f"plate width {pw} does not fit the glyph layout")
    count = (pw // scale - 1) // 6
    if count < 1:
        raise ValueError("empty plate region")

    plate = arr[y0:y1, x0:x1]
    ink = plate < 128
    chars = []
    confidences = []
    for i in range(count):
        cy, cx = scale, (1 + 6 * i) * scale
        cell = ink[cy : cy + 7 * scale, cx : cx + 5 * scale]
        best_ch, best_frac = "?", 0.0
        for ch, glyph in GLYPHS.items():
            template = np.kron(glyph, np.ones((scale, scale), dtype=bool))
            frac = float(np.mean(cell == template))
            if frac > best_frac:
                best_ch, best_frac = ch, frac
        if best_frac < MATCH_FLOOR:
            chars.append("?")
            confidences.append(0.0)
        else:
            chars.append(best_ch)
            confidences.append(best_frac)
    return "".join(chars), float(sum(confidences) / len(confidences))
