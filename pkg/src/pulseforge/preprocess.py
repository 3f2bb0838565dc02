"""Face-crop extraction, temporal differencing, and window normalization.

Patches are channel-first (3, 36, 36) floating tensors. The motion stream is
the frame-to-frame difference of consecutive patches; the normalization layer
applies a learnable per-channel affine transform first and then standardizes
over the window, exactly in that order (the conventional reversed ordering is
available for comparison).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import FaceBox, Frame, FrameSequence
from .errors import ValidationError
from .validation import require

PATCH_SIDE = 36
SIGMA_GUARD = 1e-5


@dataclass(frozen=True)
class Patch:
    """One preprocessed face crop, shape (3, 36, 36)."""

    data: np.ndarray
    source_frame_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.data)
        require(arr.shape == (3, PATCH_SIDE, PATCH_SIDE),
                f"patch must be (3, {PATCH_SIDE}, {PATCH_SIDE}), got {arr.shape}")
        require(bool(np.all(np.isfinite(arr))), "patch values must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class NormParams:
    """Per-channel scale/shift of the normalization layer."""

    beta: np.ndarray = field(default_factory=lambda: np.ones(3))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(3))
    learnable: bool = True

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=np.float64)
        g = np.asarray(self.gamma, dtype=np.float64)
        require(b.shape == g.shape and b.ndim == 1, "beta/gamma must be 1-d, same shape")
        require(bool(np.all(np.isfinite(b)) and np.all(np.isfinite(g))),
                "beta/gamma must be finite")
        if not self.learnable:
            require(bool(np.all(b != 0)), "fixed beta must be nonzero")
        for name, v in (("beta", b), ("gamma", g)):
            v = np.ascontiguousarray(v)
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def _bilinear(img: np.ndarray, y0: float, y1: float, x0: float, x1: float,
              out_side: int) -> np.ndarray:
    """Sample the [y0,y1)x[x0,x1) region of (h, w, 3) onto an out_side grid."""
    h, w = img.shape[:2]
    sy = (y1 - y0) / out_side
    sx = (x1 - x0) / out_side
    ys = y0 + (np.arange(out_side) + 0.5) * sy - 0.5
    xs = x0 + (np.arange(out_side) + 0.5) * sx - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    yf = np.floor(ys).astype(int)
    xf = np.floor(xs).astype(int)
    yc = np.minimum(yf + 1, h - 1)
    xc = np.minimum(xf + 1, w - 1)
    wy = (ys - yf)[:, None]
    wx = (xs - xf)[None, :]
    tl = img[yf[:, None], xf[None, :]]
    tr = img[yf[:, None], xc[None, :]]
    bl = img[yc[:, None], xf[None, :]]
    br = img[yc[:, None], xc[None, :]]
    wy3 = wy[..., None]
    wx3 = wx[..., None]
    top = tl * (1 - wx3) + tr * wx3
    bot = bl * (1 - wx3) + br * wx3
    return top * (1 - wy3) + bot * wy3


def crop_resize(frame: Frame, box: FaceBox, enlarge_ratio: float = 0.0,
                index: int = 0) -> Patch:
    """Grow the box symmetrically by enlarge_ratio, clamp to the frame, and
    bilinearly resample to the patch grid."""
    require(box.present, "box must be present (absent frames are skipped upstream)")
    require(enlarge_ratio >= 0, "enlarge_ratio must be >= 0")
    x0 = box.x - box.w * enlarge_ratio / 2.0
    x1 = box.x + box.w * (1.0 + enlarge_ratio / 2.0)
    y0 = box.y - box.h * enlarge_ratio / 2.0
    y1 = box.y + box.h * (1.0 + enlarge_ratio / 2.0)
    x0, x1 = max(0.0, x0), min(float(frame.width), x1)
    y0, y1 = max(0.0, y0), min(float(frame.height), y1)
    if x1 - x0 < 2.0 or y1 - y0 < 2.0:
        raise ValidationError("face box degenerate after clamping")
    sampled = _bilinear(np.asarray(frame.data, dtype=np.float64), y0, y1, x0, x1,
                        PATCH_SIDE)
    return Patch(sampled.transpose(2, 0, 1), source_frame_index=index)


def _stack(patches) -> np.ndarray:
    if isinstance(patches, np.ndarray):
        arr = patches
    else:
        arr = np.stack([p.data if isinstance(p, Patch) else np.asarray(p)
                        for p in patches])
    require(arr.ndim == 4 and arr.shape[1] == 3, "expected (n, 3, h, w) patches")
    return arr.astype(np.float64, copy=False)


def temporal_difference(patches) -> np.ndarray:
    """Frame-to-frame differences: out[t] = patch[t+1] - patch[t].

    Accepts a list of Patch or an (n, 3, h, w) array; returns (n-1, 3, h, w).
    """
    arr = _stack(patches)
    if arr.shape[0] < 2:
        raise ValidationError("temporal difference needs at least 2 patches")
    return arr[1:] - arr[:-1]


def normalize(diffs, params: NormParams | None = None,
              order: str = "affine-first") -> np.ndarray:
    """Per-channel window normalization of a difference batch.

    affine-first (default): standardize the affine-transformed values
    ((beta*d + gamma) - mean) / std.  affine-after: standardize first, then
    scale/shift (the conventional ordering, kept for comparison).
    Population std; channels with near-zero spread are epsilon-guarded and
    flagged with a warning.
    """
    require(order in ("affine-first", "affine-after"), f"unknown order '{order}'")
    params = params if params is not None else NormParams()
    arr = _stack(diffs)
    if arr.shape[0] < 2:
        raise ValidationError("normalization needs a batch of >= 2 diffs")
    n_ch = arr.shape[1]
    require(len(params.beta) == n_ch, "params do not match channel count")
    out = np.empty_like(arr)
    guarded = False
    for c in range(n_ch):
        d = arr[:, c]
        if order == "affine-first":
            a = params.beta[c] * d + params.gamma[c]
            mu = a.mean()
            sigma = a.std()
            if sigma < SIGMA_GUARD:
                sigma += SIGMA_GUARD
                guarded = True
            out[:, c] = (a - mu) / sigma
        else:
            mu = d.mean()
            sigma = d.std()
            if sigma < SIGMA_GUARD:
                sigma += SIGMA_GUARD
                guarded = True
            out[:, c] = params.beta[c] * ((d - mu) / sigma) + params.gamma[c]
    if guarded:
        warnings.warn("near-constant difference batch; std epsilon-guarded",
                      RuntimeWarning, stacklevel=2)
    return out


def appearance_patch(raw_patches) -> np.ndarray:
    """Window-mean of raw patches, standardized per channel over pixels.

    This is the motion-free stream the attention masks consume.
    """
    arr = _stack(raw_patches)
    mean = arr.mean(axis=0)  # (3, h, w)
    out = np.empty_like(mean)
    for c in range(mean.shape[0]):
        mu = mean[c].mean()
        sigma = mean[c].std()
        if sigma < SIGMA_GUARD:
            sigma += SIGMA_GUARD
        out[c] = (mean[c] - mu) / sigma
    return out


@dataclass(frozen=True)
class WindowBatch:
    """Preprocessed inference windows of one sequence."""

    motion: np.ndarray       # (n, window_len - 1, 3, side, side) raw diffs
    appearance: np.ndarray   # (n, 3, side, side)
    starts: tuple[int, ...]  # first frame index of each window
    skipped: int             # windows dropped because a frame had no box


def build_windows(seq: FrameSequence, window_len: int, stride: int | None = None,
                  enlarge_ratio: float = 0.0,
                  starts: list[int] | None = None) -> WindowBatch:
    """Crop every frame once, then assemble sliding windows.

    Window positions come from `starts` when given, otherwise from a regular
    stride. Windows touching a frame without a face box are skipped and
    counted.
    """
    require(window_len >= 4, "window_len must be >= 4")
    stride = stride if stride is not None else window_len - 1
    require(stride >= 1, "stride must be >= 1")
    require(len(seq) >= window_len, "sequence shorter than one window")
    if seq.face_boxes is None:
        raise ValidationError("sequence has no face boxes")

    present = np.array([b.present for b in seq.face_boxes])
    patches = np.zeros((len(seq), 3, PATCH_SIDE, PATCH_SIDE), dtype=np.float64)
    for i, (fr, box) in enumerate(zip(seq.frames, seq.face_boxes)):
        if present[i]:
            patches[i] = crop_resize(fr, box, enlarge_ratio, index=i).data
    diffs = patches[1:] - patches[:-1]

    if starts is None:
        starts = list(range(0, len(seq) - window_len + 1, stride))
    else:
        for s in starts:
            require(0 <= s <= len(seq) - window_len, f"window start {s} out of range")

    motion, appearance, kept = [], [], []
    skipped = 0
    for s in starts:
        if not present[s:s + window_len].all():
            skipped += 1
            continue
        motion.append(diffs[s:s + window_len - 1])
        appearance.append(appearance_patch(patches[s:s + window_len]))
        kept.append(s)
    if not motion:
        raise ValidationError("no usable windows (face missing everywhere?)")
    return WindowBatch(
        motion=np.stack(motion).astype(np.float32),
        appearance=np.stack(appearance).astype(np.float32),
        starts=tuple(kept),
        skipped=skipped,
    )
