"""Joint image/mask augmentation: shear, scale, grid distortion, blur.

Geometric ops use one shared transform for the image and both masks
(bilinear for the image, nearest-neighbor for masks, so masks stay
binary); Gaussian blur touches the image only. Each sample receives one
or two distinct ops at a time, and a dataset can be upsampled by a fixed
fraction with freshly drawn plans.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import CtrError, MaskPair


class DegenerateTransform(CtrError):
    """Scale factor is not positive; the transform collapses the image."""


class OpKind(enum.Enum):
    SHEAR_X = "shear_x"
    SHEAR_Y = "shear_y"
    SCALE = "scale"
    GRID_DISTORT = "grid_distort"
    GAUSSIAN_BLUR = "gaussian_blur"


# Default magnitude ranges; deliberately small so anatomy stays plausible.
MAGNITUDE_RANGES = {
    OpKind.SHEAR_X: (-0.10, 0.10),
    OpKind.SHEAR_Y: (-0.10, 0.10),
    OpKind.SCALE: (0.85, 1.15),
    OpKind.GRID_DISTORT: (0.01, 0.05),  # jitter as a fraction of a grid cell
    OpKind.GAUSSIAN_BLUR: (0.5, 1.5),  # sigma, pixels
}

GRID_CELLS = 4


@dataclass(frozen=True)
class AugmentOp:
    kind: OpKind
    magnitude: float
    grid_cells: int = GRID_CELLS

    def __post_init__(self):
        if self.kind is OpKind.SCALE and self.magnitude <= 0:
            raise DegenerateTransform(f"scale factor must be positive, got {self.magnitude}")


@dataclass(frozen=True)
class AugmentPlan:
    ops: tuple[AugmentOp, ...]
    seed: int = 0

    def __post_init__(self):
        if not 1 <= len(self.ops) <= 2:
            raise ValueError(f"a plan holds 1 or 2 ops, got {len(self.ops)}")
        kinds = [op.kind for op in self.ops]
        if len(set(kinds)) != len(kinds):
            raise ValueError("ops within one plan must be of distinct kinds")

    def describe(self) -> list[dict]:
        return [{"kind": op.kind.value, "magnitude": op.magnitude} for op in self.ops]


def sample_plan(rng: np.random.Generator) -> AugmentPlan:
    """Draw a fresh plan: 1 or 2 distinct op kinds, uniform magnitudes."""
    k = int(rng.integers(1, 3))
    kinds = rng.choice(len(OpKind), size=k, replace=False)
    ops = []
    for kind_idx in kinds:
        kind = list(OpKind)[int(kind_idx)]
        lo, hi = MAGNITUDE_RANGES[kind]
        ops.append(AugmentOp(kind=kind, magnitude=float(rng.uniform(lo, hi))))
    return AugmentPlan(ops=tuple(ops), seed=int(rng.integers(0, 2**63)))


def _affine_coords(shape, matrix) -> np.ndarray:
    """Source coordinates for an affine transform about the image center."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    inv = np.linalg.inv(matrix)
    src_y = inv[0, 0] * dy + inv[0, 1] * dx + cy
    src_x = inv[1, 0] * dy + inv[1, 1] * dx + cx
    return np.stack([src_y, src_x])


def _grid_coords(shape, magnitude, cells, rng) -> np.ndarray:
    """Smooth random displacement field pinned to zero at the border nodes."""
    h, w = shape
    nodes = cells + 1
    disp = rng.uniform(-magnitude, magnitude, size=(2, nodes, nodes))
    disp[:, 0, :] = disp[:, -1, :] = disp[:, :, 0] = disp[:, :, -1] = 0.0
    disp[0] *= h / cells
    disp[1] *= w / cells
    node_y = np.linspace(0, nodes - 1, h)
    node_x = np.linspace(0, nodes - 1, w)
    grid = np.meshgrid(node_y, node_x, indexing="ij")
    full = np.stack([ndimage.map_coordinates(disp[k], grid, order=1) for k in range(2)])
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([yy + full[0], xx + full[1]])


def _op_coords(op: AugmentOp, shape, rng):
    if op.kind is OpKind.SHEAR_X:
        # x' = x + m*y, rows unchanged
        return _affine_coords(shape, np.array([[1.0, 0.0], [op.magnitude, 1.0]]))
    if op.kind is OpKind.SHEAR_Y:
        return _affine_coords(shape, np.array([[1.0, op.magnitude], [0.0, 1.0]]))
    if op.kind is OpKind.SCALE:
        if op.magnitude <= 0:
            raise DegenerateTransform(f"scale factor must be positive, got {op.magnitude}")
        m = op.magnitude
        return _affine_coords(shape, np.array([[m, 0.0], [0.0, m]]))
    if op.kind is OpKind.GRID_DISTORT:
        return _grid_coords(shape, op.magnitude, op.grid_cells, rng)
    raise ValueError(f"{op.kind} has no geometric coordinates")


def apply(image: np.ndarray, masks: MaskPair, plan: AugmentPlan) -> tuple[np.ndarray, MaskPair]:
    """Run a plan on one sample; deterministic given (sample, plan)."""
    if image.shape != masks.heart.shape:
        raise ValueError(f"image {image.shape} and masks {masks.heart.shape} differ in shape")
    img = image.astype(np.float64, copy=True)
    heart = masks.heart.astype(np.uint8, copy=True)
    thorax = masks.thorax.astype(np.uint8, copy=True)
    for op_index, op in enumerate(plan.ops):
        if op.kind is OpKind.GAUSSIAN_BLUR:
            img = ndimage.gaussian_filter(img, sigma=op.magnitude)
            continue
        rng = np.random.default_rng([plan.seed, op_index])
        coords = _op_coords(op, img.shape, rng)
        img = ndimage.map_coordinates(img, coords, order=1, mode="constant", cval=0.0)
        heart = _warp_mask(heart, coords)
        thorax = _warp_mask(thorax, coords)
    img = np.clip(img, 0.0, 1.0)
    return img, MaskPair(heart=heart, thorax=thorax)


def _warp_mask(mask: np.ndarray, coords) -> np.ndarray:
    out = ndimage.map_coordinates(mask, coords, order=0, mode="constant", cval=0)
    return (out > 0).astype(np.uint8)


@dataclass(frozen=True)
class AugmentedSample:
    image: np.ndarray
    masks: MaskPair
    source_index: int
    plan: AugmentPlan


def upsample_dataset(samples, fraction: float, seed: int = 0) -> list[AugmentedSample]:
    """Create round(fraction * n) augmented samples from random sources.

    ``samples`` is a sequence of (image, MaskPair) pairs. Each output picks
    a uniformly random source sample and a fresh plan; the whole batch is
    deterministic for a given seed so it can be generated once and stored.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    n_out = round(fraction * len(samples))
    out = []
    for _ in range(n_out):
        src = int(rng.integers(0, len(samples)))
        plan = sample_plan(rng)
        image, masks = samples[src]
        aug_img, aug_masks = apply(image, masks, plan)
        out.append(AugmentedSample(image=aug_img, masks=aug_masks, source_index=src, plan=plan))
    return out
