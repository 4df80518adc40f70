"""Data handling: image loading/normalization, VIA annotation parsing,
dataset splits, and the line-delimited manifest format.

Images are 8-bit grayscale PNG or PGM on disk and 2-D float arrays in
[0, 1] in memory (pixel value / 255). Masks travel as 0/255 PNGs and are
{0,1} uint8 arrays in memory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .core import BoundingBox, CtrError


class UnreadableImage(CtrError):
    """File missing or not decodable as an image."""


class UnsupportedBitDepth(CtrError):
    """Image is not 8-bit single-channel grayscale."""


class MalformedDocument(CtrError):
    """Annotation document does not follow the expected VIA layout."""


class MissingRegion(CtrError):
    """An image lacks a heart or thorax rectangle."""


class DuplicateRegion(CtrError):
    """An image carries more than one rectangle for the same structure."""


@dataclass(frozen=True)
class Annotation:
    """Radiologist-style annotation: one heart and one thorax box."""

    image_id: str
    heart_box: BoundingBox
    thorax_box: BoundingBox

    @property
    def annotated_ctr(self) -> float:
        return self.heart_box.width / self.thorax_box.width


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    seed: int = 0

    def as_dict(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for name in ("train", "validation", "test"):
            for i in getattr(self, name):
                out[i] = name
        return out


# ---------------------------------------------------------------- images


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG/PGM and normalize intensities to [0,1]."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode != "L":
                raise UnsupportedBitDepth(
                    f"{path}: expected 8-bit grayscale, got mode {mode!r}"
                )
            arr = np.asarray(im, dtype=np.float64)
    except FileNotFoundError as e:
        raise UnreadableImage(f"{path}: {e}") from e
    except UnidentifiedImageError as e:
        raise UnreadableImage(f"{path}: not a decodable image") from e
    return arr / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Write a [0,1] float image as 8-bit grayscale PNG/PGM (atomic)."""
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    _atomic_save(Image.fromarray(data, "L"), path)


def load_mask(path) -> np.ndarray:
    """Read a mask PNG; any nonzero pixel counts as foreground."""
    return (load_image(path) >= 0.5).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    _atomic_save(Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, "L"), path)


def _atomic_save(im: Image.Image, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    fmt = "PPM" if path.lower().endswith((".pgm", ".ppm")) else "PNG"
    im.save(tmp, format=fmt)
    os.replace(tmp, path)


def _resize_coords(src_len: int, dst_len: int) -> np.ndarray:
    # Pixel-area mapping: dst center k maps to (k + 0.5) * scale - 0.5.
    scale = src_len / dst_len
    return (np.arange(dst_len) + 0.5) * scale - 0.5


def resize_image(img: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize to a square target; intensities stay in [0,1]."""
    if target < 8:
        raise ValueError(f"target size must be >= 8, got {target}")
    h, w = img.shape
    if (h, w) == (target, target):
        return img.copy()
    rr = np.clip(_resize_coords(h, target), 0, h - 1)
    cc = np.clip(_resize_coords(w, target), 0, w - 1)
    grid = np.meshgrid(rr, cc, indexing="ij")
    return ndimage.map_coordinates(img, grid, order=1, mode="nearest")


def resize_mask(mask: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor resize for masks; keeps values binary."""
    if target < 8:
        raise ValueError(f"target size must be >= 8, got {target}")
    h, w = mask.shape
    if (h, w) == (target, target):
        return mask.copy()
    rr = np.clip(np.rint(_resize_coords(h, target)).astype(int), 0, h - 1)
    cc = np.clip(np.rint(_resize_coords(w, target)).astype(int), 0, w - 1)
    return mask[np.ix_(rr, cc)].astype(np.uint8)


# ------------------------------------------------------- VIA annotations

_STRUCTURES = ("heart", "thorax")


def parse_via(doc) -> list[Annotation]:
    """Parse a VIA 2.x project/export document into annotations.

    Accepts either the bare image-metadata mapping or a full project file
    (with ``_via_img_metadata``). Every image must carry exactly one rect
    labeled ``heart`` and one labeled ``thorax``.
    """
    if not isinstance(doc, dict):
        raise MalformedDocument(f"expected a JSON object, got {type(doc).__name__}")
    meta = doc.get("_via_img_metadata", doc)
    if not isinstance(meta, dict):
        raise MalformedDocument("_via_img_metadata is not an object")

    annotations = []
    for key, entry in meta.items():
        if not isinstance(entry, dict) or "regions" not in entry:
            raise MalformedDocument(f"entry {key!r} has no region list")
        image_id = entry.get("filename") or key
        boxes: dict[str, BoundingBox] = {}
        for region in entry["regions"]:
            boxes_update = _parse_region(key, region)
            for label, box in boxes_update.items():
                if label in boxes:
                    raise DuplicateRegion(f"{image_id}: more than one {label} rect")
                boxes[label] = box
        for label in _STRUCTURES:
            if label not in boxes:
                raise MissingRegion(f"{image_id}: no {label} rect")
        annotations.append(
            Annotation(image_id=image_id, heart_box=boxes["heart"], thorax_box=boxes["thorax"])
        )
    return annotations


def _parse_region(key: str, region) -> dict[str, BoundingBox]:
    if not isinstance(region, dict):
        raise MalformedDocument(f"entry {key!r}: region is not an object")
    shape = region.get("shape_attributes")
    attrs = region.get("region_attributes")
    if not isinstance(shape, dict) or not isinstance(attrs, dict):
        raise MalformedDocument(f"entry {key!r}: region missing attribute maps")
    if shape.get("name") != "rect":
        raise MalformedDocument(f"entry {key!r}: region shape {shape.get('name')!r} is not a rect")
    label = attrs.get("label")
    if label not in _STRUCTURES:
        raise MalformedDocument(f"entry {key!r}: region label {label!r} not in {_STRUCTURES}")
    try:
        x, y = int(shape["x"]), int(shape["y"])
        w, h = int(shape["width"]), int(shape["height"])
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedDocument(f"entry {key!r}: bad rect geometry") from e
    if w < 1 or h < 1:
        raise MalformedDocument(f"entry {key!r}: empty rect")
    return {label: BoundingBox(x_min=x, y_min=y, x_max=x + w - 1, y_max=y + h - 1)}


def emit_via(annotations: list[Annotation]) -> dict:
    """Produce a VIA 2.x image-metadata document (parse_via round-trips it)."""
    doc = {}
    for ann in annotations:
        regions = []
        for label, box in (("heart", ann.heart_box), ("thorax", ann.thorax_box)):
            regions.append(
                {
                    "shape_attributes": {
                        "name": "rect",
                        "x": box.x_min,
                        "y": box.y_min,
                        "width": box.width,
                        "height": box.height,
                    },
                    "region_attributes": {"label": label},
                }
            )
        doc[f"{ann.image_id}-1"] = {
            "filename": ann.image_id,
            "size": -1,
            "regions": regions,
            "file_attributes": {},
        }
    return doc


# ----------------------------------------------------------------- split


def split(
    ids,
    fractions=(0.8, 0.1, 0.1),
    seed: int = 0,
    stratify_by_label: bool = False,
    labels=None,
) -> DatasetSplit:
    """Deterministic shuffled train/validation/test split.

    With ``stratify_by_label`` the positive/negative proportions are
    preserved per split (within one item); ``labels`` must then map every
    id to its label.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    if not stratify_by_label:
        parts = _split_group(ids, fractions, rng)
    else:
        if labels is None:
            raise ValueError("stratified split requires labels")
        groups: dict[object, list[str]] = {}
        for i in ids:
            groups.setdefault(labels[i], []).append(i)
        parts = [[], [], []]
        for lab in sorted(groups, key=repr):
            sub = _split_group(groups[lab], fractions, rng)
            for k in range(3):
                parts[k].extend(sub[k])
        for k in range(3):
            rng.shuffle(parts[k])
    return DatasetSplit(train=parts[0], validation=parts[1], test=parts[2], seed=seed)


def _split_group(ids, fractions, rng) -> list[list[str]]:
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = round(fractions[0] * n)
    n_val = min(round(fractions[1] * n), n - n_train)
    return [
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    ]


# -------------------------------------------------------------- manifest


def write_manifest(rows: list[dict], path) -> None:
    """Write one JSON object per line (atomic; keys sorted for stable bytes)."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise MalformedDocument(f"{path}:{line_no}: bad manifest line") from e
    return rows
