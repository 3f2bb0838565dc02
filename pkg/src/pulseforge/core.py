"""Shared domain types: frames, frame sequences, waveforms, HR estimates.

All types are immutable after construction and safe to share across threads.
Pixels are stored as floating values in [0, 1], channel order R, G, B.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .validation import require

DEFAULT_BAND_HZ = (0.7, 4.0)


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned face region; `present=False` marks a detector miss."""

    x: float = 0.0
    y: float = 0.0
    w: float = 0.0
    h: float = 0.0
    present: bool = True

    def __post_init__(self):
        if self.present:
            require(self.w > 0 and self.h > 0, "present box needs w>0 and h>0")

    @staticmethod
    def absent() -> "FaceBox":
        return FaceBox(0.0, 0.0, 0.0, 0.0, present=False)


@dataclass(frozen=True)
class Frame:
    """One RGB frame; data has shape (height, width, 3), values in [0, 1]."""

    data: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        require(arr.ndim == 3 and arr.shape[2] == 3, "frame data must be (h, w, 3)")
        require(arr.shape[0] > 0 and arr.shape[1] > 0, "frame must be non-empty")
        require(bool(np.all(np.isfinite(arr))), "frame pixels must be finite")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class BvpSignal:
    """Sampled pulse waveform. Amplitude units are arbitrary."""

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        require(self.rate > 0, "rate must be positive")
        arr = np.asarray(self.samples, dtype=np.float64)
        require(arr.ndim == 1 and arr.size >= 1, "samples must be a non-empty 1-d array")
        require(bool(np.all(np.isfinite(arr))), "samples must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate

    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.rate


@dataclass(frozen=True)
class HeartRateEstimate:
    bpm: float
    confidence_band_hz: tuple[float, float] = DEFAULT_BAND_HZ
    method: str = "fft-peak"

    def __post_init__(self):
        lo, hi = self.confidence_band_hz
        require(lo < hi, "band must be ordered")
        require(60.0 * lo - 1e-9 <= self.bpm <= 60.0 * hi + 1e-9,
                f"bpm {self.bpm} outside band {lo * 60}..{hi * 60}")


@dataclass(frozen=True)
class FrameSequence:
    """Ordered frames at a fixed rate, with optional per-frame face boxes and
    an optional reference waveform (round-tripped through the container)."""

    frames: tuple[Frame, ...]
    fps: float
    face_boxes: tuple[FaceBox, ...] | None = None
    ground_truth: BvpSignal | None = field(default=None, compare=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        require(len(frames) > 0, "sequence needs at least one frame")
        require(self.fps > 0, "fps must be positive")
        ts = np.array([f.timestamp for f in frames])
        if len(ts) > 1:
            deltas = np.diff(ts)
            require(bool(np.all(deltas > 0)), "timestamps must be strictly increasing")
            require(bool(np.all(np.abs(deltas - 1.0 / self.fps) <= 1e-6)),
                    "timestamp deltas must equal 1/fps within 1e-6")
        if self.face_boxes is not None:
            boxes = tuple(self.face_boxes)
            require(len(boxes) == len(frames), "need one face box entry per frame")
            h, w = frames[0].height, frames[0].width
            for b in boxes:
                if b.present:
                    require(b.x >= 0 and b.y >= 0 and b.x + b.w <= w and b.y + b.h <= h,
                            "face box must lie inside frame bounds")
            object.__setattr__(self, "face_boxes", boxes)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])


def window(seq: FrameSequence, start: int, length: int) -> FrameSequence:
    """Sub-sequence of `length` frames beginning at `start`; shares frame data."""
    require(start >= 0 and length >= 1, "start must be >= 0 and length >= 1")
    if start + length > len(seq):
        raise ValidationError(
            f"window [{start}, {start + length}) exceeds sequence of {len(seq)} frames")
    boxes = None if seq.face_boxes is None else seq.face_boxes[start:start + length]
    return FrameSequence(seq.frames[start:start + length], seq.fps, boxes,
                         seq.ground_truth)


def resample(bvp: BvpSignal, rate: float) -> BvpSignal:
    """Linear resampling onto a uniform grid at `rate`."""
    require(rate > 0, "rate must be positive")
    if abs(rate - bvp.rate) < 1e-12:
        return bvp
    require(len(bvp.samples) >= 2, "need at least 2 samples to resample")
    n_out = max(2, int(round(bvp.duration_s * rate)))
    t_out = np.arange(n_out) / rate
    out = np.interp(t_out, bvp.times(), bvp.samples)
    return BvpSignal(out, rate)
