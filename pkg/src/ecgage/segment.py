"""Overlapping fixed-length windows over a recording.

Windows are resolved to integer sample counts at the recording rate, so
the closed-form segment count and the enumeration of starts always agree;
no float boundary fuzz.  A cycle belongs to a segment iff its R peak falls
inside, and segments touching any excised (masked) span are flagged
unusable and excluded from feature rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Segment:
    subject_id: str
    segment_id: int
    start_sample: int
    end_sample: int  # exclusive
    sampling_rate_hz: float
    usable: bool = True

    @property
    def start_s(self) -> float:
        return self.start_sample / self.sampling_rate_hz

    @property
    def end_s(self) -> float:
        return self.end_sample / self.sampling_rate_hz


def segment_count(n_samples: int, window_n: int, stride_n: int) -> int:
    """Closed form: floor((duration - window) / stride) + 1, in samples."""
    return (n_samples - window_n) // stride_n + 1


def make_segments(
    n_samples: int,
    sampling_rate_hz: float,
    window_s: float = 5.0,
    stride_s: float = 1.0,
    subject_id: str = "",
    mask: np.ndarray | None = None,
) -> list[Segment]:
    """Segments start at 0, stride, 2*stride, ... while they fit."""
    if window_s <= 0 or stride_s <= 0:
        raise DataError("window and stride must be positive")
    window_n = int(round(window_s * sampling_rate_hz))
    stride_n = int(round(stride_s * sampling_rate_hz))
    if window_n < 1 or stride_n < 1:
        raise DataError("window and stride must be at least one sample")
    if n_samples < window_n:
        raise DataError(
            f"recording ({n_samples} samples) shorter than the window ({window_n})"
        )
    count = segment_count(n_samples, window_n, stride_n)
    segments = []
    for i in range(count):
        start = i * stride_n
        end = start + window_n
        usable = True
        if mask is not None and not bool(mask[start:end].all()):
            usable = False
        segments.append(
            Segment(
                subject_id=subject_id,
                segment_id=i,
                start_sample=start,
                end_sample=end,
                sampling_rate_hz=sampling_rate_hz,
                usable=usable,
            )
        )
    return segments
