"""Probability-map post-processing: threshold, morphology, component and
box extraction, ending in a CTR measurement.

Default cleanup is threshold at 0.5, two erosions, one dilation with a 3x3
square element. Out-of-image pixels are background for both erosion tests
and dilation sources.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import backend
from .core import BoundingBox, CtrError, CtrMeasurement, compute_ctr


class EmptyMask(CtrError):
    """No foreground pixel left for a structure; detection failed."""

    def __init__(self, structure: str = "mask"):
        super().__init__(f"no foreground pixels in {structure} mask")
        self.structure = structure


class StructuringElement(enum.Enum):
    SQUARE3 = "square3"
    CROSS3 = "cross3"

    def offsets(self) -> np.ndarray:
        """(k, 2) array of (row, col) neighborhood offsets incl. center."""
        if self is StructuringElement.SQUARE3:
            offs = [(du, dv) for du in (-1, 0, 1) for dv in (-1, 0, 1)]
        else:
            offs = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
        return np.array(offs, dtype=np.int64)


@dataclass(frozen=True)
class MorphConfig:
    threshold: float = 0.5
    erosion_iters: int = 2
    dilation_iters: int = 1
    element: StructuringElement = StructuringElement.SQUARE3

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        if self.erosion_iters < 0 or self.dilation_iters < 0:
            raise ValueError("iteration counts must be non-negative")


def threshold(prob: np.ndarray, t: float) -> np.ndarray:
    """Binarize a probability channel; p >= t maps to 1."""
    prob = np.asarray(prob)
    return (prob >= t).astype(np.uint8)


def erode(mask: np.ndarray, element: StructuringElement = StructuringElement.SQUARE3) -> np.ndarray:
    return backend.binary_erode(np.ascontiguousarray(mask, dtype=np.uint8), element.offsets())


def dilate(mask: np.ndarray, element: StructuringElement = StructuringElement.SQUARE3) -> np.ndarray:
    return backend.binary_dilate(np.ascontiguousarray(mask, dtype=np.uint8), element.offsets())


def cleanup(prob: np.ndarray, config: MorphConfig = MorphConfig()) -> np.ndarray:
    """threshold -> erode^n -> dilate^m, in that order."""
    mask = threshold(prob, config.threshold)
    for _ in range(config.erosion_iters):
        mask = erode(mask, config.element)
    for _ in range(config.dilation_iters):
        mask = dilate(mask, config.element)
    return mask


def largest_component(mask: np.ndarray, structure: str = "mask") -> np.ndarray:
    """Keep only the largest 8-connected component.

    Area ties go to the component whose topmost-leftmost pixel comes first
    in row-major order (labels are assigned in discovery order, and argmax
    returns the first maximum).
    """
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    labels = backend.label_components(mask)
    n_labels = int(labels.max())
    if n_labels == 0:
        raise EmptyMask(structure)
    areas = np.bincount(labels.ravel(), minlength=n_labels + 1)[1:]
    best = int(areas.argmax()) + 1
    return (labels == best).astype(np.uint8)


def extract_box(mask: np.ndarray, structure: str = "mask") -> BoundingBox:
    """Tight inclusive bounding box over the foreground pixels."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyMask(structure)
    return BoundingBox(
        x_min=int(cols[0]), y_min=int(rows[0]), x_max=int(cols[-1]), y_max=int(rows[-1])
    )


def mask_to_box(prob: np.ndarray, config: MorphConfig, structure: str) -> BoundingBox:
    """Full single-channel pipeline: cleanup, largest component, box."""
    mask = cleanup(prob, config)
    mask = largest_component(mask, structure)
    return extract_box(mask, structure)


def masks_to_ctr(prob: np.ndarray, config: MorphConfig = MorphConfig()) -> CtrMeasurement:
    """Two-channel map (heart, thorax) to a CTR measurement.

    Raises EmptyMask naming the failing structure; callers report this as a
    detection failure rather than skipping the image silently.
    """
    prob = np.asarray(prob)
    if prob.ndim != 3 or prob.shape[0] != 2:
        raise ValueError(f"expected (2, H, W) probability map, got {prob.shape}")
    heart_box = mask_to_box(prob[0], config, "heart")
    thorax_box = mask_to_box(prob[1], config, "thorax")
    return compute_ctr(heart_box, thorax_box)
