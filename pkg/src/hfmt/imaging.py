"""Pixel-level primitives: PNM I/O, binarization and blob extraction."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage


class PNMError(ValueError):
    """Raised when a PNM byte stream cannot be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


class Image:
    """8-bit grayscale image, stored as a read-only (height, width) uint8 array."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("pixel intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.pixels = _frozen(arr)

    @classmethod
    def from_sequence(cls, width: int, height: int, values: Sequence[int]) -> Image:
        if width < 1 or height < 1:
            raise ValueError("width and height must be positive")
        if len(values) != width * height:
            raise ValueError(f"expected {width * height} pixels, got {len(values)}")
        return cls(np.asarray(values, dtype=np.int64).reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"Image(width={self.width}, height={self.height})"


class BinaryImage:
    """Boolean foreground mask, shape (height, width); True is foreground."""

    __slots__ = ("mask",)

    def __init__(self, mask: np.ndarray):
        arr = np.asarray(mask, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2D array, got shape {arr.shape}")
        self.mask = _frozen(arr)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryImage):
            return NotImplemented
        return np.array_equal(self.mask, other.mask)

    def __repr__(self) -> str:
        return f"BinaryImage(width={self.width}, height={self.height}, fg={int(self.mask.sum())})"


@dataclass(frozen=True)
class Blob:
    area: int
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (inclusive)
    label: int


class Polarity(enum.Enum):
    BRIGHT = "bright"
    DARK = "dark"


# --------------------------------------------------------------------------- PNM

_MAGIC = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}
_WS = b" \t\r\n\v\f"


class _Tokenizer:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_space(self) -> None:
        data = self.data
        while self.pos < len(data):
            ch = data[self.pos : self.pos + 1]
            if ch in (b"#",):
                end = data.find(b"\n", self.pos)
                self.pos = len(data) if end < 0 else end + 1
            elif ch and ch in _WS:
                self.pos += 1
            else:
                break

    def token(self, what: str) -> bytes:
        self.skip_space()
        start = self.pos
        data = self.data
        while self.pos < len(data) and data[self.pos] not in _WS and data[self.pos : self.pos + 1] != b"#":
            self.pos += 1
        if self.pos == start:
            raise PNMError(f"missing {what}", start)
        return data[start : self.pos]

    def integer(self, what: str) -> int:
        self.skip_space()
        start = self.pos
        tok = self.token(what)
        if not re.fullmatch(rb"\d+", tok):
            raise PNMError(f"invalid {what} {tok!r}", start)
        return int(tok)


def _luma(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64)
    gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8)


def load_pnm(data: bytes) -> Image:
    """Parse a P2/P3/P5/P6 byte stream; color input is reduced to ITU-R 601 luma."""
    tok = _Tokenizer(bytes(data))
    magic = data[:2]
    if magic not in _MAGIC:
        raise PNMError(f"unsupported magic {bytes(magic)!r}", 0)
    channels, binary = _MAGIC[magic]
    tok.pos = 2
    if tok.pos < len(data) and data[tok.pos] not in _WS and data[tok.pos : tok.pos + 1] != b"#":
        raise PNMError("magic must be followed by whitespace", tok.pos)
    width = tok.integer("width")
    height = tok.integer("height")
    tok.skip_space()
    maxval_at = tok.pos
    maxval = tok.integer("maxval")
    if width < 1 or height < 1:
        raise PNMError("width and height must be positive", maxval_at)
    if not 1 <= maxval <= 255:
        raise PNMError(f"maxval {maxval} outside 1..255", maxval_at)
    count = width * height * channels

    if binary:
        # exactly one whitespace byte separates the header from the raster
        if tok.pos >= len(data) or data[tok.pos] not in _WS:
            raise PNMError("missing whitespace after maxval", tok.pos)
        start = tok.pos + 1
        raw = data[start : start + count]
        if len(raw) < count:
            raise PNMError(f"truncated raster: expected {count} bytes, got {len(raw)}", start + len(raw))
        values = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
        if values.max(initial=0) > maxval:
            bad = int(np.argmax(values > maxval))
            raise PNMError(f"sample exceeds maxval {maxval}", start + bad)
    else:
        values = np.empty(count, dtype=np.int64)
        for i in range(count):
            tok.skip_space()
            if tok.pos >= len(data):
                raise PNMError(f"truncated raster: expected {count} samples, got {i}", tok.pos)
            at = tok.pos
            v = tok.integer("sample")
            if v > maxval:
                raise PNMError(f"sample {v} exceeds maxval {maxval}", at)
            values[i] = v

    if maxval != 255:
        values = np.floor(values * 255.0 / maxval + 0.5).astype(np.int64)
    if channels == 3:
        return Image(_luma(values.reshape(height, width, 3)))
    return Image(values.reshape(height, width))


def save_pnm(img: Image) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def read_pnm(path) -> Image:
    with open(path, "rb") as fh:
        return load_pnm(fh.read())


def write_pnm(path, img: Image) -> None:
    with open(path, "wb") as fh:
        fh.write(save_pnm(img))


# ------------------------------------------------------------------ binarization

def binarize_fixed(img: Image, threshold: int, polarity: Polarity = Polarity.BRIGHT) -> BinaryImage:
    if polarity is Polarity.BRIGHT:
        return BinaryImage(img.pixels >= threshold)
    return BinaryImage(img.pixels < threshold)


def window_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Mean over a ``window x window`` box with edge-replicated borders.

    Uses a summed-area table, so the cost per pixel is constant in ``window``.
    """
    r = window // 2
    padded = np.pad(values.astype(np.int64), r, mode="edge")
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = values.shape
    total = (
        sat[window : window + h, window : window + w]
        - sat[0:h, window : window + w]
        - sat[window : window + h, 0:w]
        + sat[0:h, 0:w]
    )
    return total / float(window * window)


def binarize_adaptive(img: Image, window: int, offset_c: float) -> BinaryImage:
    """Bright-foreground local threshold: pixel >= local mean - offset_c."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if window > min(img.width, img.height):
        raise ValueError(f"window {window} exceeds image size {img.width}x{img.height}")
    mean = window_mean(img.pixels, window)
    return BinaryImage(img.pixels >= mean - offset_c)


# -------------------------------------------------------------------------- blobs

_EIGHT = np.ones((3, 3), dtype=bool)


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling of a boolean array (labels in raster order of first pixel)."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    return labels, int(n)


def connected_components(bin_img: BinaryImage, min_area: int = 1) -> list[Blob]:
    """All 8-connected foreground components with area >= ``min_area``.

    Blobs are ordered by the top-left corner of their bounding box, (y_min, x_min),
    and relabelled 1..n in that order.
    """
    labels, n = label_components(bin_img.mask)
    if n == 0:
        return []
    flat = labels.ravel()
    ys, xs = np.indices(labels.shape)
    idx = np.arange(1, n + 1)
    area = np.bincount(flat, minlength=n + 1)[1:]
    sum_x = np.bincount(flat, weights=xs.ravel(), minlength=n + 1)[1:]
    sum_y = np.bincount(flat, weights=ys.ravel(), minlength=n + 1)[1:]
    slices = ndimage.find_objects(labels)

    found = []
    for k, sl in zip(idx, slices):
        a = int(area[k - 1])
        if a < min_area:
            continue
        rows, cols = sl
        bbox = (cols.start, rows.start, cols.stop - 1, rows.stop - 1)
        centroid = (float(sum_x[k - 1] / a), float(sum_y[k - 1] / a))
        # ndimage numbers labels by first pixel in raster order, which breaks bbox ties
        found.append(((bbox[1], bbox[0], k), a, centroid, bbox))
    found.sort(key=lambda item: item[0])
    return [
        Blob(area=a, centroid=c, bbox=b, label=i)
        for i, (_, a, c, b) in enumerate(found, start=1)
    ]


def largest_component(bin_img: BinaryImage) -> BinaryImage:
    """Keep only the largest 8-connected component (ties: first in raster order)."""
    labels, n = label_components(bin_img.mask)
    if n == 0:
        return BinaryImage(np.zeros_like(bin_img.mask))
    area = np.bincount(labels.ravel(), minlength=n + 1)
    area[0] = 0
    return BinaryImage(labels == int(np.argmax(area)))


def blobs_as_points(blobs: Iterable[Blob]) -> np.ndarray:
    return np.array([b.centroid for b in blobs], dtype=float).reshape(-1, 2)
