"""End-to-end inference and dataset assembly for the learned estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import estimate_hr, hr_over_windows, integrate, metrics
from .core import BvpSignal, FrameSequence
from .errors import InsufficientDataError
from .network import NetworkWeights, forward
from .preprocess import build_windows
from .validation import require

_BATCH_WINDOWS = 64  # inference chunk; keeps conv slabs in cache-friendly range


@dataclass
class InferenceResult:
    bvp: BvpSignal
    per_transition: np.ndarray  # raw head outputs, one per covered frame gap
    window_starts: tuple[int, ...]
    skipped_windows: int = 0


def _window_plan(n_frames: int, window_len: int) -> list[int]:
    """Non-overlapping window starts covering every frame gap.

    Windows advance by window_len - 1 so adjacent windows share one boundary
    frame and their transition outputs tile without gaps. A final window
    anchored at the end covers any remainder.
    """
    stride = window_len - 1
    starts = list(range(0, n_frames - window_len + 1, stride))
    last_covered = starts[-1] + window_len - 1 if starts else 0
    if last_covered < n_frames - 1:
        starts.append(n_frames - window_len)
    return starts


def infer_sequence(seq: FrameSequence, weights: NetworkWeights, *,
                   enlarge_ratio: float = 0.0, use_mask: bool = True,
                   use_shift: bool = True, parallel_groups: bool = False
                   ) -> InferenceResult:
    """Estimate the pulse derivative for every frame transition, then integrate.

    Windows are tiled with stride window_len - 1; a shorter-stride tail window
    contributes only the transitions no earlier window covered. Windows whose
    frames lack a face box are skipped and their transitions contribute zeros.
    """
    cfg = weights.cfg
    wl = cfg.window_len
    require(len(seq) >= wl, f"need at least {wl} frames, got {len(seq)}",
            InsufficientDataError)
    starts = _window_plan(len(seq), wl)
    batch = build_windows(seq, wl, starts=starts, enlarge_ratio=enlarge_ratio)
    n_trans = len(seq) - 1
    derivative = np.zeros(n_trans, dtype=np.float64)
    covered = np.zeros(n_trans, dtype=bool)
    outputs = []
    for i in range(0, batch.motion.shape[0], _BATCH_WINDOWS):
        outputs.append(forward(batch.motion[i:i + _BATCH_WINDOWS],
                               batch.appearance[i:i + _BATCH_WINDOWS], weights,
                               use_mask=use_mask, use_shift=use_shift,
                               train_mode=False, parallel_groups=parallel_groups))
    out = np.concatenate(outputs, axis=0) if outputs else np.zeros((0, wl - 1))
    for row, s in zip(out, batch.starts):
        span = slice(s, s + wl - 1)
        fresh = ~covered[span]
        derivative[span][fresh] = row.astype(np.float64)[fresh]
        covered[span] |= True
    bvp = integrate(derivative, seq.fps)
    return InferenceResult(bvp=bvp, per_transition=derivative,
                           window_starts=batch.starts,
                           skipped_windows=batch.skipped)


def make_training_set(seqs: list[FrameSequence], window_len: int, *,
                      enlarge_ratio: float = 0.0, stride: int | None = None
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build (motion, appearance, targets) arrays from labeled sequences.

    Targets are the first differences of the reference pulse resampled to the
    frame grid, standardized per window so the loss is scale-free.
    """
    motions, apps, targets = [], [], []
    for seq in seqs:
        require(seq.ground_truth is not None,
                "training sequences need an attached reference pulse")
        batch = build_windows(seq, window_len, stride=stride,
                              enlarge_ratio=enlarge_ratio)
        ts = np.asarray(seq.timestamps())
        gt = seq.ground_truth
        ref = np.interp(ts, gt.times(), gt.samples)
        diff = np.diff(ref)
        for i, s in enumerate(batch.starts):
            tgt = diff[s:s + window_len - 1].astype(np.float64)
            sd = tgt.std()
            if sd < 1e-12:  # flat reference stretch carries no signal
                continue
            motions.append(batch.motion[i])
            apps.append(batch.appearance[i])
            targets.append(((tgt - tgt.mean()) / sd).astype(np.float32))
    require(len(motions) > 0, "no usable training windows", InsufficientDataError)
    return (np.stack(motions), np.stack(apps), np.stack(targets))


def evaluate_sequences(seqs: list[FrameSequence], weights: NetworkWeights, *,
                       enlarge_ratio: float = 0.0, use_mask: bool = True,
                       use_shift: bool = True, config_hash: str = ""):
    """Whole-sequence HR comparison against each sequence's reference pulse."""
    pred, true = [], []
    last_bvp = None
    last_true_hr = None
    for seq in seqs:
        require(seq.ground_truth is not None,
                "evaluation sequences need an attached reference pulse")
        res = infer_sequence(seq, weights, enlarge_ratio=enlarge_ratio,
                             use_mask=use_mask, use_shift=use_shift)
        pred.append(estimate_hr(res.bvp).bpm)
        true.append(estimate_hr(seq.ground_truth).bpm)
        last_bvp = res.bvp
        last_true_hr = true[-1]
    return metrics(np.array(pred), np.array(true), pred_bvp=last_bvp,
                   true_hr_for_snr=last_true_hr, config_hash=config_hash)


def hr_windows_from_inference(res: InferenceResult, *, window_s: float = 20.0,
                              hop_s: float = 10.0):
    """Windowed HR readings from an inference result (start_s, end_s, bpm)."""
    return hr_over_windows(res.bvp, window_s=window_s, hop_s=hop_s)
