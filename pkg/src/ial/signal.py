"""Raw 6-channel streams to normalized 8-channel windows.

A window covers 150 consecutive frames (3 s at 50 Hz).  Channel order is
ax, ay, az, |a|, gx, gy, gz, |g|; each channel is min-max normalized over the
window, so a later median downsample by 3 gives the 50x8 image fed to the
models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Stream
from .errors import (
    LengthNotDivisibleError,
    NonFiniteInputError,
    OutOfRangeError,
    StreamTooShortError,
)

WINDOW_FRAMES = 150
DOWNSAMPLE_FACTOR = 3
CHANNEL_NAMES = ("ax", "ay", "az", "a_mag", "gx", "gy", "gz", "g_mag")
DEFAULT_STRIDE_FRAMES = 15


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    """Per-channel extrema used for min-max scaling."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("per-channel min must not exceed max")


@dataclass(frozen=True, eq=False)
class SignalWindow:
    """150 frames x 8 normalized channels starting at ``start_t`` seconds."""

    frames: np.ndarray
    start_t: float
    frame_period: float

    @property
    def span_s(self) -> float:
        return self.frames.shape[0] * self.frame_period


def magnitude(x) -> float:
    """Euclidean norm of a 3-vector."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteInputError("magnitude of non-finite vector")
    return float(np.sqrt(v @ v))


def minmax_normalize(channel, lo: float, hi: float) -> np.ndarray:
    """Scale values to [0, 1] given channel extrema; constant channels map to 0.5."""
    x = np.asarray(channel, dtype=np.float64)
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    if hi > lo:
        return (x - lo) / (hi - lo)
    return np.full_like(x, 0.5)


def median_downsample(matrix: np.ndarray, factor: int = DOWNSAMPLE_FACTOR) -> np.ndarray:
    """Replace each non-overlapping group of ``factor`` rows with its per-column median."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows = m.shape[0]
    if rows % factor != 0:
        raise LengthNotDivisibleError(f"{rows} rows not divisible by {factor}")
    return np.median(m.reshape(rows // factor, factor, m.shape[1]), axis=1)


def eight_channels(values: np.ndarray) -> np.ndarray:
    """Expand (n, 6) raw samples to the (n, 8) channel layout with magnitudes."""
    if not np.all(np.isfinite(values)):
        raise NonFiniteInputError("non-finite sample values")
    a = values[:, 0:3]
    g = values[:, 3:6]
    a_mag = np.sqrt(np.einsum("ij,ij->i", a, a))
    g_mag = np.sqrt(np.einsum("ij,ij->i", g, g))
    return np.column_stack([a, a_mag, g, g_mag])


def window_stats(channels: np.ndarray) -> NormalizationStats:
    return NormalizationStats(channels.min(axis=0), channels.max(axis=0))


def make_window(stream: Stream, start_frame: int) -> SignalWindow:
    """Cut 150 frames at ``start_frame``, add magnitudes, min-max normalize per channel."""
    if start_frame < 0 or start_frame + WINDOW_FRAMES > len(stream):
        raise OutOfRangeError(
            f"window [{start_frame}, {start_frame + WINDOW_FRAMES}) outside stream of {len(stream)}"
        )
    raw = eight_channels(stream.values[start_frame : start_frame + WINDOW_FRAMES])
    stats = window_stats(raw)
    frames = np.empty_like(raw)
    for c in range(raw.shape[1]):
        frames[:, c] = minmax_normalize(raw[:, c], float(stats.lo[c]), float(stats.hi[c]))
    return SignalWindow(frames, float(stream.t[start_frame]), 1.0 / stream.sample_rate_hz)


def window_starts(n_frames: int, stride_frames: int) -> range:
    if stride_frames < 1:
        raise ValueError("stride_frames must be >= 1")
    if n_frames < WINDOW_FRAMES:
        raise StreamTooShortError(f"{n_frames} frames < {WINDOW_FRAMES}")
    return range(0, n_frames - WINDOW_FRAMES + 1, stride_frames)


def slide_windows(stream: Stream, stride_frames: int = DEFAULT_STRIDE_FRAMES) -> list[SignalWindow]:
    """All windows at start frames 0, s, 2s, ...; count = floor((L-150)/s) + 1."""
    return [make_window(stream, start) for start in window_starts(len(stream), stride_frames)]
