"""Classical color-trace pulse extractors used as reference methods.

All three operate on the per-frame spatial mean RGB over the face region:

    green  bandpassed green channel
    chrom  chrominance projection X = 3R - 2G, Y = 1.5R + G - 1.5B,
           combined as X - (sigma_X / sigma_Y) * Y after bandpassing
    pos    plane-orthogonal-to-skin projection on sliding 1.6 s windows,
           S1 = G - B, S2 = G + B - 2R, h = S1 + (sigma_S1 / sigma_S2) * S2,
           overlap-added

Outputs keep their natural amplitude (the rate estimator is scale-free);
in particular pos() stays near zero on purely multiplicative illumination
changes instead of amplifying the residue to unit variance.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, filtfilt

from .core import DEFAULT_BAND_HZ, BvpSignal, FrameSequence
from .errors import InsufficientDataError
from .validation import require

POS_WINDOW_S = 1.6


def mean_rgb_trace(seq: FrameSequence) -> np.ndarray:
    """Spatial mean RGB inside the face box, one row per frame.

    Frames without a face reuse the nearest earlier box (or the first
    available one), so short dropouts do not split the trace.
    """
    require(seq.face_boxes is not None, "sequence has no face boxes")
    boxes = list(seq.face_boxes)
    present = [b.present for b in boxes]
    require(any(present), "no frame has a face box", InsufficientDataError)
    first = present.index(True)
    out = np.zeros((len(seq), 3), dtype=np.float64)
    active = boxes[first]
    for i, fr in enumerate(seq.frames):
        if present[i]:
            active = boxes[i]
        x0 = max(0, int(round(active.x)))
        y0 = max(0, int(round(active.y)))
        x1 = min(fr.width, x0 + max(1, int(round(active.w))))
        y1 = min(fr.height, y0 + max(1, int(round(active.h))))
        out[i] = fr.data[y0:y1, x0:x1].reshape(-1, 3).mean(axis=0)
    return out


def _bandpass(x: np.ndarray, rate: float,
              band: tuple[float, float] = DEFAULT_BAND_HZ) -> np.ndarray:
    lo, hi = band
    nyq = rate / 2.0
    hi = min(hi, 0.99 * nyq)
    require(lo < hi, f"band ({lo}, {hi}) Hz collapses at rate {rate}")
    b, a = butter(4, [lo / nyq, hi / nyq], btype="bandpass")
    return filtfilt(b, a, x)


def _check_length(seq: FrameSequence, min_s: float = 2.0) -> None:
    require(len(seq) >= int(min_s * seq.fps),
            f"need at least {min_s} s of frames", InsufficientDataError)


def green(seq: FrameSequence) -> BvpSignal:
    """Bandpassed green-channel mean."""
    _check_length(seq)
    rgb = mean_rgb_trace(seq)
    g = rgb[:, 1]
    return BvpSignal(_bandpass(g - g.mean(), seq.fps), seq.fps)


def chrom(seq: FrameSequence) -> BvpSignal:
    """Chrominance-combination estimate."""
    _check_length(seq)
    rgb = mean_rgb_trace(seq)
    mean = rgb.mean(axis=0)
    require(np.all(mean > 1e-12), "degenerate (all-black) face region")
    rn, gn, bn = (rgb / mean).T
    x = _bandpass(3.0 * rn - 2.0 * gn, seq.fps)
    y = _bandpass(1.5 * rn + gn - 1.5 * bn, seq.fps)
    sy = y.std()
    alpha = x.std() / sy if sy > 1e-12 else 0.0
    return BvpSignal(x - alpha * y, seq.fps)


def pos(seq: FrameSequence) -> BvpSignal:
    """Plane-orthogonal-to-skin estimate with overlap-added short windows."""
    _check_length(seq)
    rgb = mean_rgb_trace(seq)
    n = len(rgb)
    win = max(2, int(round(POS_WINDOW_S * seq.fps)))
    require(n >= win, "sequence shorter than one projection window",
            InsufficientDataError)
    h = np.zeros(n, dtype=np.float64)
    for t in range(n - win + 1):
        seg = rgb[t:t + win]
        mean = seg.mean(axis=0)
        if np.any(mean <= 1e-12):
            continue
        cn = seg / mean
        s1 = cn[:, 1] - cn[:, 2]
        s2 = cn[:, 1] + cn[:, 2] - 2.0 * cn[:, 0]
        sd2 = s2.std()
        alpha = s1.std() / sd2 if sd2 > 1e-12 else 0.0
        hw = s1 + alpha * s2
        h[t:t + win] += hw - hw.mean()
    return BvpSignal(h, seq.fps)


BASELINES = {"green": green, "chrom": chrom, "pos": pos}
