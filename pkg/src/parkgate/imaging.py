"""Raster image type, portable-anymap I/O, and the classical filters used by the lot analyzer.

Only binary P5 (grayscale) and P6 (RGB) files with maxval 255 are supported.
All neighborhood operations replicate edge pixels at the borders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Raster",
    "BinaryRaster",
    "PnmError",
    "decode_pnm",
    "encode_pnm",
    "to_grayscale",
    "gaussian_blur",
    "gaussian_kernel",
    "adaptive_threshold",
    "morphology",
    "median_filter",
]


class PnmError(ValueError):
    """Malformed portable-anymap data."""


@dataclass(frozen=True)
class Raster:
    """In-memory 8-bit image, row-major, 1 (gray) or 3 (RGB) channels."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bad dimensions {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expect = self.width * self.height * self.channels
        if len(self.data) != expect:
            raise ValueError(f"data length {len(self.data)} != {expect}")

    def to_array(self) -> np.ndarray:
        """(h, w) uint8 for gray, (h, w, 3) for RGB."""
        arr = np.frombuffer(self.data, dtype=np.uint8)
        if self.channels == 1:
            return arr.reshape(self.height, self.width)
        return arr.reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Raster":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            h, w = arr.shape
            return cls(w, h, 1, arr.tobytes())
        if arr.ndim == 3 and arr.shape[2] == 3:
            h, w, _ = arr.shape
            return cls(w, h, 3, arr.tobytes())
        raise ValueError(f"unsupported array shape {arr.shape}")


@dataclass(frozen=True)
class BinaryRaster:
    """Single-channel mask; every byte is 0 or 255."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bad dimensions {self.width}x{self.height}")
        if len(self.data) != self.width * self.height:
            raise ValueError("data length does not match dimensions")
        arr = np.frombuffer(self.data, dtype=np.uint8)
        if not np.all((arr == 0) | (arr == 255)):
            raise ValueError("binary raster bytes must be 0 or 255")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BinaryRaster":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValueError(f"binary raster needs a 2-d array, got shape {arr.shape}")
        h, w = arr.shape
        return cls(w, h, arr.tobytes())


def decode_pnm(data: bytes) -> Raster:
    """Decode a binary P5/P6 file (maxval 255) into a Raster."""
    tokens = []
    pos = 0
    # Header is four whitespace-separated tokens: magic, width, height, maxval.
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PnmError("truncated header")
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PnmError("missing whitespace after maxval")
    pos += 1  # single whitespace byte, then the binary body

    magic = tokens[0]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PnmError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise PnmError(f"non-numeric header field: {exc}") from None
    if width <= 0 or height <= 0:
        raise PnmError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PnmError(f"unsupported maxval {maxval}")

    body = data[pos:]
    expect = width * height * channels
    if len(body) < expect:
        raise PnmError(f"truncated body: {len(body)} of {expect} bytes")
    if len(body) > expect:
        raise PnmError(f"trailing bytes after body: {len(body) - expect}")
    return Raster(width, height, channels, bytes(body))


def encode_pnm(img: Raster) -> bytes:
    """Canonical encoding: 'P5\\n<w> <h>\\n255\\n' (or P6) followed by the raw body."""
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.data


def to_grayscale(img: Raster) -> Raster:
    """Convert RGB to gray with the 0.299/0.587/0.114 luma weights; gray passes through."""
    if img.channels == 1:
        return img
    arr = img.to_array().astype(np.float64)
    luma = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    return Raster.from_array(np.rint(luma).astype(np.uint8))


def gaussian_kernel(size: int, sigma: float) -> list[list[float]]:
    """Discrete 2-d Gaussian, normalized so the weights sum to 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = size // 2
    raw = [
        [math.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) for dx in range(-r, r + 1)]
        for dy in range(-r, r + 1)
    ]
    total = math.fsum(math.fsum(row) for row in raw)
    return [[w / total for w in row] for row in raw]


def _require_gray(img: Raster, op: str):
    if img.channels != 1:
        raise ValueError(f"{op} expects a grayscale raster")


def gaussian_blur(img: Raster, kernel: int, sigma: float) -> Raster:
    """Blur a grayscale raster; replicate borders, round to nearest at the end.

    Accumulates taps in (dy, dx) order so the result is bit-identical to a
    naive per-pixel convolution. The padded image is pre-multiplied once per
    distinct weight (the kernel is symmetric), which changes nothing about the
    products being summed.
    """
    _require_gray(img, "gaussian_blur")
    weights = gaussian_kernel(kernel, sigma)
    r = kernel // 2
    padded = np.pad(img.to_array(), r, mode="edge").astype(np.float64)
    h, w = img.height, img.width
    premultiplied = {}
    for row in weights:
        for weight in row:
            if weight not in premultiplied:
                premultiplied[weight] = padded * weight
    acc = np.zeros((h, w), dtype=np.float64)
    for dy in range(kernel):
        for dx in range(kernel):
            acc += premultiplied[weights[dy][dx]][dy : dy + h, dx : dx + w]
    return Raster.from_array(np.rint(acc).astype(np.uint8))


def adaptive_threshold(img: Raster, block: int, offset: int) -> BinaryRaster:
    """Local-mean threshold: foreground where pixel > block mean + offset.

    The block neighborhood replicates edge pixels. Means come from exact
    integer box sums, so results match a per-pixel reference bit for bit.
    """
    _require_gray(img, "adaptive_threshold")
    if block < 3 or block % 2 == 0:
        raise ValueError(f"block must be odd and >= 3, got {block}")
    src = img.to_array()
    r = block // 2
    padded = np.pad(src, r, mode="edge").astype(np.int64)
    # Summed-area table with a zero row/column on top/left.
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = padded.cumsum(axis=1).cumsum(axis=0)
    h, w = src.shape
    sums = (
        sat[block : block + h, block : block + w]
        - sat[block : block + h, 0:w]
        - sat[0:h, block : block + w]
        + sat[0:h, 0:w]
    )
    # pixel > sum/area + offset, rearranged to exact integer arithmetic. The
    # smallest nonzero gap between a pixel and a block mean is 1/area, far
    # above float rounding, so this matches a floating-point mean comparison.
    area = block * block
    foreground = (src.astype(np.int64) - offset) * area > sums
    out = np.where(foreground, 255, 0).astype(np.uint8)
    return BinaryRaster.from_array(out)


def morphology(img: BinaryRaster, op: str, kernel: int) -> BinaryRaster:
    """Max filter (dilate) or min filter (erode) over a square window."""
    if op not in ("dilate", "erode"):
        raise ValueError(f"unknown morphology op {op!r}")
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel}")
    if kernel == 1:
        return img
    src = img.to_array()
    r = kernel // 2
    padded = np.pad(src, r, mode="edge")
    h, w = src.shape
    out = padded[0:h, 0:w].copy()
    reduce_fn = np.maximum if op == "dilate" else np.minimum
    for dy in range(kernel):
        for dx in range(kernel):
            out = reduce_fn(out, padded[dy : dy + h, dx : dx + w])
    return BinaryRaster.from_array(out)


def median_filter(img: BinaryRaster, kernel: int) -> BinaryRaster:
    """Median over a square window; for binary data this is a majority vote."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel}")
    if kernel == 1:
        return img
    src = (img.to_array() == 255).astype(np.int32)
    r = kernel // 2
    padded = np.pad(src, r, mode="edge")
    h, w = src.shape
    count = np.zeros((h, w), dtype=np.int32)
    for dy in range(kernel):
        for dx in range(kernel):
            count += padded[dy : dy + h, dx : dx + w]
    majority = (kernel * kernel + 1) // 2
    out = np.where(count >= majority, 255, 0).astype(np.uint8)
    return BinaryRaster.from_array(out)
