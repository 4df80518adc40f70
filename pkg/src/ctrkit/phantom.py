"""Synthetic chest phantoms with analytic ground truth.

Each phantom is a pair of nested ellipses (thorax, heart) over a dark
background, with faint horizontal rib bands and optional Gaussian pixel
noise. Since the geometry is analytic, the true CTR is known exactly and
the rasterized masks deviate from it only by pixel quantization.

Rasterization uses the center-of-pixel inclusion test
((x-cx)^2/a^2 + (y-cy)^2/b^2 <= 1), so with integer centers a row through
the center has exactly 2*floor(a)+1 pixels. The dataset generator picks
half-integer semi-axes (a = m + 0.5), which makes the mask-derived width
exactly 2m+1 = 2a and the mask-derived CTR equal to the analytic one.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import ingest
from .core import CtrError, MaskPair


class SpecOutOfBounds(CtrError):
    """An ellipse does not fit inside the requested canvas."""


@dataclass(frozen=True)
class PhantomSpec:
    image_size: int = 64
    thorax_a: float = 24.5  # horizontal semi-axis, pixels
    thorax_b: float = 28.5  # vertical semi-axis, pixels
    heart_a: float = 11.5
    heart_b: float = 13.0
    heart_dx: int = 0  # heart center offset from thorax center
    heart_dy: int = 2
    background_level: float = 0.05
    lung_level: float = 0.30
    heart_level: float = 0.65
    bone_level: float = 0.80
    rib_spacing: int = 9
    rib_phase: int = 0
    noise_sigma: float = 0.02
    seed: int = 0

    @property
    def analytic_ctr(self) -> float:
        return self.heart_a / self.thorax_a


@dataclass(frozen=True)
class PhantomSample:
    image: np.ndarray
    masks: MaskPair
    analytic_ctr: float
    heart_width: int  # rasterized mask widths, pixels
    thorax_width: int
    spec: PhantomSpec

    @property
    def label(self) -> bool:
        return self.analytic_ctr > 0.5


def _ellipse_mask(size: int, cx: float, cy: float, a: float, b: float) -> np.ndarray:
    yy = np.arange(size)[:, None]
    xx = np.arange(size)[None, :]
    return ((((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2) <= 1.0).astype(np.uint8)


def _mask_width(mask: np.ndarray) -> int:
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[-1] - cols[0] + 1) if cols.size else 0


def _validate(spec: PhantomSpec) -> None:
    if spec.heart_a >= spec.thorax_a:
        raise ValueError(f"heart_a {spec.heart_a} must be smaller than thorax_a {spec.thorax_a}")
    size = spec.image_size
    cx = cy = size // 2
    hx, hy = cx + spec.heart_dx, cy + spec.heart_dy
    for name, (x0, y0, a, b) in {
        "thorax": (cx, cy, spec.thorax_a, spec.thorax_b),
        "heart": (hx, hy, spec.heart_a, spec.heart_b),
    }.items():
        if x0 - a < 0 or x0 + a > size - 1 or y0 - b < 0 or y0 + b > size - 1:
            raise SpecOutOfBounds(f"{name} ellipse exceeds the {size}x{size} canvas")
    if abs(spec.heart_dx) + spec.heart_a >= spec.thorax_a:
        raise SpecOutOfBounds("heart extends to or beyond the thorax horizontally")


def generate(spec: PhantomSpec) -> PhantomSample:
    """Render one phantom; bit-identical for identical specs."""
    _validate(spec)
    size = spec.image_size
    cx = cy = size // 2
    thorax = _ellipse_mask(size, cx, cy, spec.thorax_a, spec.thorax_b)
    heart = _ellipse_mask(size, cx + spec.heart_dx, cy + spec.heart_dy, spec.heart_a, spec.heart_b)

    img = np.full((size, size), spec.background_level, dtype=np.float64)
    img[thorax == 1] = spec.lung_level
    rib_rows = ((np.arange(size) - spec.rib_phase) % spec.rib_spacing) < 2
    img[rib_rows[:, None] & (thorax == 1)] = spec.bone_level
    img[heart == 1] = spec.heart_level

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
        img = np.clip(img, 0.0, 1.0)

    return PhantomSample(
        image=img,
        masks=MaskPair(heart=heart, thorax=thorax),
        analytic_ctr=spec.analytic_ctr,
        heart_width=_mask_width(heart),
        thorax_width=_mask_width(thorax),
        spec=spec,
    )


def generate_dataset(
    n: int,
    ctr_range: tuple[float, float] = (0.35, 0.65),
    seed: int = 0,
    image_size: int = 64,
) -> list[PhantomSample]:
    """Generate n phantoms, ceil(n/2) with CTR > 0.5 and the rest <= 0.5.

    Semi-axes are snapped to the half-integer grid so the analytic CTR is
    an exact ratio of odd pixel widths; the target CTRs are drawn uniformly
    from ``ctr_range`` on each side of 0.5.
    """
    low, high = ctr_range
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if not (0.0 < low < high < 1.0):
        raise ValueError(f"ctr_range must satisfy 0 < low < high < 1, got {ctr_range}")
    if not (low < 0.5 < high):
        raise ValueError(f"ctr_range must straddle 0.5 to allow both labels, got {ctr_range}")

    rng = np.random.default_rng(seed)
    n_pos = math.ceil(n / 2)
    positive = np.zeros(n, dtype=bool)
    positive[:n_pos] = True
    rng.shuffle(positive)

    m_t_low = max(8, int(0.30 * image_size))
    m_t_high = int(0.40 * image_size)
    b_cap = image_size // 2 - 3

    samples = []
    for i in range(n):
        pos = bool(positive[i])
        target = rng.uniform(0.505, high) if pos else rng.uniform(low, 0.5)
        m_t = int(rng.integers(m_t_low, m_t_high + 1))
        wt = 2 * m_t + 1
        m_h = int(round((target * wt - 1) / 2))
        # Snapping may cross the 0.5 boundary; push back onto the right side.
        if pos and 2 * m_h + 1 <= 0.5 * wt:
            m_h += 1
        elif not pos and 2 * m_h + 1 > 0.5 * wt:
            m_h -= 1
        a_t, a_h = m_t + 0.5, m_h + 0.5

        b_t = min(a_t * rng.uniform(1.10, 1.25), b_cap)
        b_h = min(a_h * rng.uniform(1.05, 1.20), b_t - 2.0)
        dx_max = m_t - m_h - 1
        dx = int(rng.integers(-dx_max, dx_max + 1)) if dx_max > 0 else 0
        dy = int(rng.integers(-2, 3))

        spec = PhantomSpec(
            image_size=image_size,
            thorax_a=a_t,
            thorax_b=b_t,
            heart_a=a_h,
            heart_b=b_h,
            heart_dx=dx,
            heart_dy=dy,
            rib_phase=int(rng.integers(0, 9)),
            seed=seed + i,
        )
        samples.append(generate(spec))
    return samples


def write_dataset(samples, out_dir, prefix: str = "phantom", splits=None) -> list[dict]:
    """Write images, masks and a manifest; returns the manifest rows."""
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    rows = []
    for i, sample in enumerate(samples):
        sid = f"{prefix}_{i:05d}"
        image_path = os.path.join("images", f"{sid}.png")
        heart_path = os.path.join("masks", f"{sid}_heart.png")
        thorax_path = os.path.join("masks", f"{sid}_thorax.png")
        ingest.save_image(sample.image, os.path.join(out_dir, image_path))
        ingest.save_mask(sample.masks.heart, os.path.join(out_dir, heart_path))
        ingest.save_mask(sample.masks.thorax, os.path.join(out_dir, thorax_path))
        row = {
            "id": sid,
            "image": image_path,
            "heart_mask": heart_path,
            "thorax_mask": thorax_path,
            "ctr": sample.analytic_ctr,
            "label": int(sample.label),
        }
        if splits is not None:
            row["split"] = splits.get(sid, "train")
        rows.append(row)
    ingest.write_manifest(rows, os.path.join(out_dir, "manifest.jsonl"))
    return rows
