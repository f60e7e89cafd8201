"""Strip extraction, offset/gradient estimation and the steering law."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import BinaryImage, Image, Polarity, binarize_fixed, largest_component

#: fraction of rows, counted from the bottom, used for the offset measurement
OFFSET_BAND = 0.25
MIN_BAND_PIXELS = 5
MIN_ROWS = 3


@dataclass(frozen=True)
class PathEstimate:
    """Strip position in one lower-camera frame.

    ``offset`` is the normalized horizontal displacement of the strip in the
    bottom band (positive: strip right of center). ``gradient`` is the angle of
    the fitted strip axis from the image vertical (positive: strip leans right
    toward the top of the frame).
    """

    offset: float = 0.0
    gradient: float = 0.0
    valid: bool = False


INVALID = PathEstimate()


@dataclass(frozen=True)
class SteeringGains:
    k_offset: float = 1.0
    k_gradient: float = 1.5
    max_rate: float = 1.2

    def __post_init__(self):
        if not (self.k_offset >= 0 and self.k_gradient >= 0):
            raise ValueError("steering gains must be non-negative")
        if not self.max_rate > 0:
            raise ValueError("max_rate must be positive")


@dataclass(frozen=True)
class SteeringCommand:
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0  # rad/s, positive turns left


STOP = SteeringCommand()
DEFAULT_CRUISE_V = 0.2


def extract_path_mask(img: Image, threshold: int = 128) -> BinaryImage:
    """Bright pixels of the largest bright component; everything else cleared."""
    return largest_component(binarize_fixed(img, threshold, Polarity.BRIGHT))


def estimate_path(mask: BinaryImage) -> PathEstimate:
    m = mask.mask
    height, width = m.shape
    half = (width - 1) / 2.0

    band_rows = max(1, int(math.ceil(OFFSET_BAND * height)))
    band = m[height - band_rows :]
    band_ys, band_xs = np.nonzero(band)
    row_counts = m.sum(axis=1)
    rows = np.flatnonzero(row_counts)
    if band_xs.size < MIN_BAND_PIXELS or rows.size < MIN_ROWS:
        return INVALID

    offset = (band_xs.mean() - half) / half if half > 0 else 0.0

    cols = np.arange(width, dtype=float)
    centers = (m[rows] * cols).sum(axis=1) / row_counts[rows]
    ys = rows.astype(float)
    dy = ys - ys.mean()
    # x = a*y + b; a strip leaning right has x growing as y decreases, so a < 0
    slope = float((dy * (centers - centers.mean())).sum() / (dy * dy).sum())
    gradient = math.atan(-slope)
    return PathEstimate(offset=float(offset), gradient=gradient, valid=True)


def steering(est: PathEstimate, gains: SteeringGains = SteeringGains(),
             cruise_v: float = DEFAULT_CRUISE_V) -> SteeringCommand:
    if not est.valid:
        return STOP
    raw = -(gains.k_offset * est.offset + gains.k_gradient * est.gradient)
    omega = min(max(raw, -gains.max_rate), gains.max_rate)
    return SteeringCommand(linear_velocity=cruise_v, angular_velocity=omega)


def track_frame(img: Image, threshold: int = 128) -> PathEstimate:
    return estimate_path(extract_path_mask(img, threshold))
