"""The two window feature formats: the 50x8 image and the 16-dim mean/variance vector."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal import DOWNSAMPLE_FACTOR, SignalWindow, median_downsample

IMAGE_ROWS = 50
N_CHANNELS = 8
VECTOR_DIM = 2 * N_CHANNELS


@dataclass(frozen=True, eq=False)
class ImageFeature:
    """50x8 image in [0, 1] plus provenance (source stream key, window start)."""

    pixels: np.ndarray
    start_t: float
    source: tuple | None = None

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_ROWS, N_CHANNELS):
            raise ValueError(f"image must be {IMAGE_ROWS}x{N_CHANNELS}, got {self.pixels.shape}")


@dataclass(frozen=True, eq=False)
class VectorFeature:
    """16 values: per-channel means then per-channel population variances."""

    values: np.ndarray
    start_t: float
    source: tuple | None = None

    def __post_init__(self):
        if self.values.shape != (VECTOR_DIM,):
            raise ValueError(f"vector must have {VECTOR_DIM} values, got {self.values.shape}")


def image_feature(window: SignalWindow, source: tuple | None = None) -> ImageFeature:
    """Median-downsample a 150x8 window by 3 into the 50x8 image."""
    return ImageFeature(median_downsample(window.frames, DOWNSAMPLE_FACTOR), window.start_t, source)


def vector_feature(image: ImageFeature) -> VectorFeature:
    """Per-channel mean and population variance of the image, concatenated [means | variances]."""
    means = image.pixels.mean(axis=0)
    variances = image.pixels.var(axis=0)
    return VectorFeature(np.concatenate([means, variances]), image.start_t, image.source)


def write_vector_csv(features: Sequence[VectorFeature], path, comments: Sequence[str] = ()) -> None:
    """Debug dump: one CSV row per window (start_t, 8 means, 8 variances)."""
    header = "start_t," + ",".join(
        [f"mean_{c}" for c in range(N_CHANNELS)] + [f"var_{c}" for c in range(N_CHANNELS)]
    )
    lines = [f"# {c}" for c in comments]
    lines.append(header)
    for f in features:
        lines.append(",".join([repr(float(f.start_t))] + [repr(float(v)) for v in f.values]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
