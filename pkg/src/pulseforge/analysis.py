"""Waveform post-processing and evaluation metrics.

Covers reconstruction from predicted derivatives, spectral heart-rate
estimation, peak/inter-beat-interval extraction, pNN50, and the metric
bundle (MAE, MAPE, RMSE, Pearson, SNR).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.signal

from .core import DEFAULT_BAND_HZ, BvpSignal, HeartRateEstimate
from .errors import InsufficientDataError, ValidationError
from .validation import as_float_array, require

DETREND_SEGMENT_S = 10.0
PNN_THRESHOLD_MS = 50.0
IBI_MIN_MS = 200.0
IBI_MAX_MS = 2000.0
SNR_HALF_WIDTH_HZ = 0.1


@dataclass(frozen=True)
class IbiSeries:
    """Inter-beat intervals in milliseconds, physiologically filtered."""

    intervals_ms: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.intervals_ms, "intervals_ms")
        require(arr.ndim == 1, "intervals must be 1-d")
        require(bool(np.all((arr > IBI_MIN_MS) & (arr < IBI_MAX_MS))),
                f"intervals must lie in ({IBI_MIN_MS}, {IBI_MAX_MS}) ms")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "intervals_ms", arr)

    def __len__(self) -> int:
        return len(self.intervals_ms)


@dataclass(frozen=True)
class MetricReport:
    mae_bpm: float
    mape_pct: float
    rmse_bpm: float
    pearson_r: float
    snr_db: float
    n_windows: int
    config_hash: str = ""
    pearson_degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        require(self.mape_pct >= 0, "mape must be >= 0")
        require(-1.0 - 1e-9 <= self.pearson_r <= 1.0 + 1e-9, "pearson out of range")

    def to_json(self) -> str:
        return json.dumps({
            "mae_bpm": self.mae_bpm, "mape_pct": self.mape_pct,
            "rmse_bpm": self.rmse_bpm, "pearson_r": self.pearson_r,
            "snr_db": self.snr_db, "n_windows": self.n_windows,
            "config_hash": self.config_hash,
            "pearson_degenerate": self.pearson_degenerate,
        }, sort_keys=True)

    CSV_HEADER = "mae_bpm,mape_pct,rmse_bpm,pearson_r,snr_db,n_windows,config_hash"

    def to_csv_row(self) -> str:
        return (f"{self.mae_bpm:.6g},{self.mape_pct:.6g},{self.rmse_bpm:.6g},"
                f"{self.pearson_r:.6g},{self.snr_db:.6g},{self.n_windows},"
                f"{self.config_hash}")


def integrate(derivative, rate: float) -> BvpSignal:
    """Reconstruct a waveform from its first differences.

    Cumulative sum, then piecewise-linear detrend over 10 s segments, then
    unit-variance scaling. Accepts a flat array or a list of per-window
    arrays which are concatenated in order.
    """
    if isinstance(derivative, (list, tuple)):
        parts = [np.asarray(p, dtype=np.float64).ravel() for p in derivative]
        require(len(parts) > 0, "empty derivative stream")
        deriv = np.concatenate(parts)
    else:
        deriv = np.asarray(derivative, dtype=np.float64).ravel()
    require(deriv.size > 0, "empty derivative stream")
    x = np.cumsum(deriv)
    seg = max(2, int(round(DETREND_SEGMENT_S * rate)))
    if len(x) >= 4:
        bp = np.arange(seg, len(x) - 1, seg, dtype=int)
        x = scipy.signal.detrend(x, bp=bp)
    else:
        x = x - x.mean()
    sd = float(x.std())
    if sd > 1e-12:
        x = x / sd
    return BvpSignal(x, rate)


def periodogram(bvp: BvpSignal) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed power spectrum, zero-padded to 4x the signal length."""
    x = np.asarray(bvp.samples, dtype=np.float64)
    if len(x) < 2:
        raise ValidationError("signal too short for a spectrum")
    x = x - x.mean()
    w = np.hanning(len(x))
    nfft = 4 * len(x)
    spec = np.abs(scipy.fft.rfft(x * w, n=nfft)) ** 2
    freqs = scipy.fft.rfftfreq(nfft, d=1.0 / bvp.rate)
    return freqs, spec


def estimate_hr(bvp: BvpSignal, band: tuple[float, float] = DEFAULT_BAND_HZ) -> HeartRateEstimate:
    """Heart rate from the dominant spectral peak inside `band`."""
    lo, hi = band
    require(lo < hi, "band must be ordered")
    freqs, power = periodogram(bvp)
    sel = (freqs >= lo) & (freqs <= hi)
    if not np.any(sel):
        raise ValidationError("band contains no spectral bins; signal too short")
    idx = np.argmax(power[sel])
    f0 = float(freqs[sel][idx])
    return HeartRateEstimate(bpm=60.0 * f0, confidence_band_hz=band, method="fft-peak")


def detect_peaks(bvp: BvpSignal, band: tuple[float, float] = DEFAULT_BAND_HZ) -> IbiSeries:
    """Systolic peak detection and inter-beat intervals.

    Minimum spacing is half the period of the spectral HR estimate;
    prominence must reach 0.3 of the signal standard deviation.
    """
    est = estimate_hr(bvp, band)
    x = np.asarray(bvp.samples, dtype=np.float64)
    spacing_s = 0.5 * (60.0 / est.bpm)
    distance = max(1, int(round(spacing_s * bvp.rate)))
    prominence = 0.3 * float(x.std())
    peaks, _ = scipy.signal.find_peaks(x, distance=distance, prominence=prominence)
    if len(peaks) < 2:
        raise InsufficientDataError(f"found {len(peaks)} peaks, need >= 2")
    ibis = np.diff(peaks) / bvp.rate * 1000.0
    ibis = ibis[(ibis > IBI_MIN_MS) & (ibis < IBI_MAX_MS)]
    if len(ibis) < 1:
        raise InsufficientDataError("no physiologically plausible intervals")
    return IbiSeries(ibis)


def pnn50(ibis: IbiSeries) -> float:
    """Percent of successive interval differences strictly exceeding 50 ms."""
    iv = ibis.intervals_ms
    if len(iv) < 2:
        raise InsufficientDataError("pNN50 needs at least 2 intervals")
    deltas = np.abs(np.diff(iv))
    return 100.0 * float(np.count_nonzero(deltas > PNN_THRESHOLD_MS)) / len(deltas)


def ibi_mean_bpm(ibis: IbiSeries) -> HeartRateEstimate:
    """Heart rate from the mean inter-beat interval."""
    mean_ms = float(np.mean(ibis.intervals_ms))
    return HeartRateEstimate(bpm=60000.0 / mean_ms, method="ibi-mean")


def pearson(a, b) -> tuple[float, bool]:
    """Correlation with an explicit constant-series policy.

    Returns (r, degenerate). Identical constant pairs give (1.0, True);
    any other constant case gives (0.0, True).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require(a.shape == b.shape, "pearson needs equal-length series")
    require(a.size >= 2, "pearson needs at least 2 points")
    tol = 1e-12
    if a.std() < tol or b.std() < tol:
        if np.allclose(a, b):
            return 1.0, True
        return 0.0, True
    r = float(np.corrcoef(a, b)[0, 1])
    return max(-1.0, min(1.0, r)), False


def snr_db(pred_bvp: BvpSignal, true_hr_bpm: float,
           band: tuple[float, float] = DEFAULT_BAND_HZ) -> float:
    """Spectral signal-to-noise ratio around the reference rate.

    Signal power integrates +-0.1 Hz around the fundamental and its second
    harmonic (clipped to the band); noise power is the rest of the band.
    """
    freqs, power = periodogram(pred_bvp)
    lo, hi = band
    in_band = (freqs >= lo) & (freqs <= hi)
    f0 = true_hr_bpm / 60.0
    sig_mask = in_band & (
        (np.abs(freqs - f0) <= SNR_HALF_WIDTH_HZ)
        | (np.abs(freqs - 2.0 * f0) <= SNR_HALF_WIDTH_HZ))
    p_sig = float(power[sig_mask].sum())
    p_noise = float(power[in_band & ~sig_mask].sum())
    if p_noise <= 0.0:
        return 120.0
    if p_sig <= 0.0:
        return -120.0
    return 10.0 * np.log10(p_sig / p_noise)


def metrics(pred_bpm, true_bpm, pred_bvp: BvpSignal | None = None,
            true_hr_for_snr: float | None = None,
            config_hash: str = "") -> MetricReport:
    """MAE/MAPE/RMSE/Pearson over paired rate series, plus spectral SNR.

    SNR needs the predicted waveform and a reference rate; it is NaN-free
    (reported as 0.0) when either is missing.
    """
    p = as_float_array(pred_bpm, "pred_bpm")
    t = as_float_array(true_bpm, "true_bpm")
    require(p.shape == t.shape and p.ndim == 1, "pred/true must be equal-length 1-d")
    require(p.size >= 1, "need at least one pair")
    require(bool(np.all(t != 0)), "true_bpm must be nonzero for MAPE")
    err = p - t
    mae = float(np.mean(np.abs(err)))
    mape = float(100.0 * np.mean(np.abs(err) / np.abs(t)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    if p.size >= 2:
        r, degenerate = pearson(p, t)
    else:
        r, degenerate = 1.0 if np.allclose(p, t) else 0.0, True
    snr = 0.0
    if pred_bvp is not None and true_hr_for_snr is not None:
        snr = float(snr_db(pred_bvp, true_hr_for_snr))
    return MetricReport(mae_bpm=mae, mape_pct=mape, rmse_bpm=rmse, pearson_r=r,
                        snr_db=snr, n_windows=int(p.size),
                        config_hash=config_hash, pearson_degenerate=degenerate)


def hr_over_windows(bvp: BvpSignal, window_s: float = 20.0, hop_s: float = 10.0,
                    band: tuple[float, float] = DEFAULT_BAND_HZ
                    ) -> list[tuple[float, float, float]]:
    """Sliding-window HR estimates: (start_s, end_s, bpm) rows.

    Falls back to a single whole-signal row when the signal is shorter than
    one window.
    """
    n = len(bvp.samples)
    w = int(round(window_s * bvp.rate))
    h = max(1, int(round(hop_s * bvp.rate)))
    rows = []
    if n < w:
        est = estimate_hr(bvp, band)
        return [(0.0, n / bvp.rate, est.bpm)]
    for start in range(0, n - w + 1, h):
        chunk = BvpSignal(bvp.samples[start:start + w], bvp.rate)
        est = estimate_hr(chunk, band)
        rows.append((start / bvp.rate, (start + w) / bvp.rate, est.bpm))
    return rows
