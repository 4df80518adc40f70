"""Domain types and the cardiothoracic-ratio arithmetic.

The CTR is the maximal horizontal cardiac width divided by the maximal
horizontal thoracic width, both measured in whole pixels on a frontal
radiograph. Everything in this module is pure and side-effect free.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Clinical cutoffs for the ratio bands.
CTR_NORMAL_LOW = 0.42
CTR_NORMAL_HIGH = 0.50


class CtrError(Exception):
    """Base class for domain errors raised by this package."""


class ZeroThoraxWidth(CtrError):
    """The thorax detection produced a box with no usable width."""


class CtrCategory(enum.Enum):
    BELOW_NORMAL = "below_normal"
    NORMAL = "normal"
    CARDIOMEGALY = "cardiomegaly"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle; all four coordinates are inclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class MaskPair:
    """Heart and thorax binary masks sharing one image grid."""

    heart: np.ndarray
    thorax: np.ndarray

    def __post_init__(self):
        if self.heart.shape != self.thorax.shape:
            raise ValueError(
                f"mask shapes differ: {self.heart.shape} vs {self.thorax.shape}"
            )


@dataclass(frozen=True)
class CtrMeasurement:
    heart_width: int
    thorax_width: int
    ctr: float
    category: CtrCategory


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check a 2-D grayscale image with intensities in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected 2-D image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def validate_mask(mask: np.ndarray) -> np.ndarray:
    """Check a 2-D binary mask (values 0/1 only)."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError(f"expected 2-D mask, got shape {mask.shape}")
    vals = np.unique(mask)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return mask


def classify_ctr(ctr: float) -> CtrCategory:
    """Place a ratio into the below-normal / normal / cardiomegaly band.

    The normal band is closed on both ends: 0.42 and 0.50 both count as
    normal; cardiomegaly requires a ratio strictly above 0.50.
    """
    if ctr <= 0:
        raise ValueError(f"ctr must be positive, got {ctr}")
    if ctr < CTR_NORMAL_LOW:
        return CtrCategory.BELOW_NORMAL
    if ctr <= CTR_NORMAL_HIGH:
        return CtrCategory.NORMAL
    return CtrCategory.CARDIOMEGALY


def binary_label(ctr: float) -> bool:
    """True iff the ratio indicates cardiomegaly (strictly above 0.5)."""
    if ctr <= 0:
        raise ValueError(f"ctr must be positive, got {ctr}")
    return ctr > CTR_NORMAL_HIGH


def compute_ctr(heart_box: BoundingBox, thorax_box: BoundingBox) -> CtrMeasurement:
    """Measure the ratio of heart to thorax width from two pixel boxes.

    Widths are inclusive pixel counts (``x_max - x_min + 1``), so a valid
    single-column box still has width 1.
    """
    if thorax_box.width < 1:
        raise ZeroThoraxWidth(
            f"thorax box {thorax_box.as_tuple()} has no horizontal extent"
        )
    if heart_box.width < 1:
        raise ValueError(f"degenerate heart box {heart_box.as_tuple()}")
    ctr = heart_box.width / thorax_box.width
    return CtrMeasurement(heart_box.width, thorax_box.width, ctr, classify_ctr(ctr))
