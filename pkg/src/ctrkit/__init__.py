"""ctrkit: chest-phantom segmentation with cardiothoracic-ratio measurement.

Pipeline pieces: synthetic phantoms with exact geometric ground truth,
joint image/mask augmentation, a small attention-gated encoder-decoder
network trained from scratch, probability-map post-processing, CTR
computation with cardiomegaly classification, and evaluation reports.
"""

from .core import (
    BoundingBox,
    CtrCategory,
    CtrError,
    CtrMeasurement,
    MaskPair,
    ZeroThoraxWidth,
    binary_label,
    classify_ctr,
    compute_ctr,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CtrCategory",
    "CtrError",
    "CtrMeasurement",
    "MaskPair",
    "ZeroThoraxWidth",
    "binary_label",
    "classify_ctr",
    "compute_ctr",
    "__version__",
]
