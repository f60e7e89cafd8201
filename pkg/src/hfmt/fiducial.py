"""Dot-pattern board detection and classification.

A board is a bright face carrying dark dots: one dot means turn left, three
dots in a triangle mean turn right, four dots in a square mark a terminal
(start or destination).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .imaging import Blob, Image, Polarity, binarize_fixed, connected_components


class FiducialPattern(enum.Enum):
    LEFT_TURN = "LeftTurn"
    RIGHT_TURN = "RightTurn"
    TERMINAL = "Terminal"
    UNKNOWN = "Unknown"
    NONE = "None"

    @classmethod
    def parse(cls, name: str) -> FiducialPattern:
        key = name.strip().lower().replace("_", "").replace("-", "")
        aliases = {"left": cls.LEFT_TURN, "right": cls.RIGHT_TURN}
        if key in aliases:
            return aliases[key]
        for p in cls:
            if p.value.lower() == key:
                return p
        raise ValueError(f"unknown pattern name {name!r}")


#: dot count implied by each classified pattern
DOT_COUNT = {
    FiducialPattern.LEFT_TURN: 1,
    FiducialPattern.RIGHT_TURN: 3,
    FiducialPattern.TERMINAL: 4,
    FiducialPattern.NONE: 0,
}

TRIANGLE_MIN_SHAPE = 0.05


@dataclass(frozen=True)
class FiducialConfig:
    threshold: int = 128
    min_area: int = 9
    tol: float = 0.15
    min_board_fraction: float = 0.5


@dataclass(frozen=True)
class FiducialDetection:
    pattern: FiducialPattern
    dots: tuple[Blob, ...] = field(default_factory=tuple)
    board_fraction: float = 0.0


def detect_dots(img: Image, threshold: int = 128, min_area: int = 9) -> list[Blob]:
    """Dark blobs that do not touch the frame border."""
    blobs = connected_components(binarize_fixed(img, threshold, Polarity.DARK), min_area)
    xmax, ymax = img.width - 1, img.height - 1
    return [
        b for b in blobs
        if b.bbox[0] > 0 and b.bbox[1] > 0 and b.bbox[2] < xmax and b.bbox[3] < ymax
    ]


def _within(values: np.ndarray, tol: float) -> bool:
    mean = values.mean()
    return bool(mean > 0 and np.all(np.abs(values - mean) <= tol * mean))


def _is_triangle(pts: np.ndarray) -> bool:
    a, b, c = pts
    area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    longest = max(np.sum((a - b) ** 2), np.sum((b - c) ** 2), np.sum((a - c) ** 2))
    return longest > 0 and area / longest > TRIANGLE_MIN_SHAPE


def _is_square(pts: np.ndarray, tol: float) -> bool:
    d = np.sort([math.dist(p, q) for p, q in itertools.combinations(pts, 2)])
    sides, diagonals = d[:4], d[4:]
    if not (_within(sides, tol) and _within(diagonals, tol)):
        return False
    ratio = diagonals.mean() / sides.mean()
    return abs(ratio - math.sqrt(2)) <= tol * math.sqrt(2)


def classify_pattern(dots: Sequence[Blob], tol: float = 0.15) -> FiducialPattern:
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    n = len(dots)
    if n == 0:
        return FiducialPattern.NONE
    if n == 1:
        return FiducialPattern.LEFT_TURN
    pts = np.array([d.centroid for d in dots], dtype=float)
    if n == 3:
        return FiducialPattern.RIGHT_TURN if _is_triangle(pts) else FiducialPattern.UNKNOWN
    if n == 4:
        return FiducialPattern.TERMINAL if _is_square(pts, tol) else FiducialPattern.UNKNOWN
    return FiducialPattern.UNKNOWN


def board_fraction(img: Image, threshold: int = 128) -> float:
    return float(np.count_nonzero(img.pixels >= threshold)) / img.pixels.size


def detect_fiducial(img: Image, cfg: FiducialConfig = FiducialConfig()) -> FiducialDetection:
    frac = board_fraction(img, cfg.threshold)
    if frac < cfg.min_board_fraction:
        return FiducialDetection(FiducialPattern.NONE, (), frac)
    dots = detect_dots(img, cfg.threshold, cfg.min_area)
    pattern = classify_pattern(dots, cfg.tol)
    kept = () if pattern is FiducialPattern.NONE else tuple(dots)
    return FiducialDetection(pattern, kept, frac)
