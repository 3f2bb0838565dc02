"""Synthetic oracle: pulse waveform generation and facial-video rendering.

The renderer follows a dichromatic reflection decomposition. Inside the face
box every pixel carries

    c(t) = I(t) * (u_s * (s0 + phi(t)) + u_d * d0 + u_p * p(t)) + noise

per channel, where I(t) is a slow illumination modulation, phi(t) a
non-physiological sway term, and p(t) the pulse waveform. Outside the box the
background is a static seeded texture plus per-frame sensor noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import BvpSignal, FaceBox, Frame, FrameSequence, resample
from .validation import require

# Beat-schedule constants for the double-gaussian waveform: the primary lobe
# peaks exactly at each beat time; the smaller bump trails it.
_PRIMARY_SIGMA_S = 0.07
_DICROTIC_OFFSET_S = 0.25
_DICROTIC_SIGMA_S = 0.10
_DICROTIC_AMP = 0.30
_MIN_IBI_S = 0.20


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class PulseSpec:
    hr_bpm: float = 72.0
    hrv_jitter_ms: float = 0.0
    duration_s: float = 30.0
    rate: float = 30.0
    waveform: str = "sinusoid"  # or "double-gaussian-pulse"

    def __post_init__(self):
        require(30.0 <= self.hr_bpm <= 240.0, f"hr_bpm {self.hr_bpm} outside [30, 240]")
        require(self.hrv_jitter_ms >= 0, "hrv_jitter_ms must be >= 0")
        require(self.duration_s > 0, "duration_s must be > 0")
        require(self.rate > 0, "rate must be > 0")
        require(self.waveform in ("sinusoid", "double-gaussian-pulse"),
                f"unknown waveform '{self.waveform}'")


@dataclass(frozen=True)
class OpticalParams:
    u_d: np.ndarray = field(default_factory=lambda: _unit((0.80, 0.55, 0.42)))
    d0: float = 0.55
    u_p: np.ndarray = field(default_factory=lambda: 0.01 * 0.55 * _unit((0.33, 0.77, 0.53)))
    u_s: np.ndarray = field(default_factory=lambda: _unit((1.0, 1.0, 1.0)))
    s0: float = 0.12
    illum_drift_amp: float = 0.0
    illum_drift_freq_hz: float = 0.05
    motion_amp: float = 0.0
    motion_freq_hz: float = 0.35
    channel_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("u_d", "u_p", "u_s"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            require(v.shape == (3,), f"{name} must be a 3-vector")
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        require(abs(np.linalg.norm(self.u_d) - 1.0) < 1e-6, "u_d must be unit length")
        require(abs(np.linalg.norm(self.u_s) - 1.0) < 1e-6, "u_s must be unit length")
        require(self.d0 >= 0 and self.s0 >= 0, "d0 and s0 must be >= 0")


@dataclass(frozen=True)
class NoiseParams:
    sensor_sigma: float = 0.0
    quantize: bool = False

    def __post_init__(self):
        require(self.sensor_sigma >= 0, "sensor_sigma must be >= 0")


def generate_pulse_with_beats(spec: PulseSpec, seed: int) -> tuple[BvpSignal, np.ndarray]:
    """Pulse waveform plus the beat schedule that produced it.

    The returned beat times are those inside [0, duration_s); the schedule
    itself extends past the end so the waveform has no edge fade.
    """
    rng = np.random.default_rng(seed)
    mean_ibi = 60.0 / spec.hr_bpm
    sigma = spec.hrv_jitter_ms / 1000.0
    beats = [0.0]
    while beats[-1] < spec.duration_s + 2.0 * mean_ibi:
        ibi = mean_ibi + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        beats.append(beats[-1] + max(ibi, _MIN_IBI_S))
    beats_arr = np.asarray(beats)

    n = int(round(spec.duration_s * spec.rate))
    ts = np.arange(n) / spec.rate
    if spec.waveform == "sinusoid":
        # Piecewise-linear phase: each inter-beat interval spans 2*pi, so the
        # zero-jitter case is a pure tone at hr/60 Hz.
        phase = np.interp(ts, beats_arr, 2.0 * np.pi * np.arange(len(beats_arr)))
        samples = np.sin(phase)
    else:
        samples = np.zeros(n)
        half_support = 4.0 * _DICROTIC_SIGMA_S + _DICROTIC_OFFSET_S
        for b in beats_arr:
            lo = max(0, int(np.floor((b - half_support) * spec.rate)))
            hi = min(n, int(np.ceil((b + half_support) * spec.rate)) + 1)
            if lo >= hi:
                continue
            t_local = ts[lo:hi]
            samples[lo:hi] += np.exp(-0.5 * ((t_local - b) / _PRIMARY_SIGMA_S) ** 2)
            samples[lo:hi] += _DICROTIC_AMP * np.exp(
                -0.5 * ((t_local - b - _DICROTIC_OFFSET_S) / _DICROTIC_SIGMA_S) ** 2)
    visible = beats_arr[beats_arr < spec.duration_s]
    return BvpSignal(samples, spec.rate), visible


def generate_pulse(spec: PulseSpec, seed: int) -> BvpSignal:
    """Deterministic pulse waveform for (spec, seed)."""
    bvp, _ = generate_pulse_with_beats(spec, seed)
    return bvp


def render_video(bvp: BvpSignal, optics: OpticalParams, noise: NoiseParams,
                 width: int, height: int, face_box: FaceBox, fps: float,
                 seed: int = 0) -> FrameSequence:
    """Render the pulse into a frame sequence; ground truth is attached.

    The pulse is spatially uniform over the face box. The waveform must
    already be sampled at fps (use core.resample first if it is not).
    """
    require(face_box.present, "face_box must be present")
    require(abs(bvp.rate - fps) < 1e-9, "bvp.rate must equal fps (resample first)")
    x0, y0 = int(round(face_box.x)), int(round(face_box.y))
    x1, y1 = int(round(face_box.x + face_box.w)), int(round(face_box.y + face_box.h))
    require(0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height,
            "face_box outside frame geometry")

    p = np.asarray(bvp.samples)
    n = len(p)
    ts = np.arange(n) / fps
    illum = 1.0 + optics.illum_drift_amp * np.sin(
        2.0 * np.pi * optics.illum_drift_freq_hz * ts)
    sway = optics.motion_amp * np.sin(2.0 * np.pi * optics.motion_freq_hz * ts)

    gains = np.asarray(optics.channel_gains, dtype=np.float64)
    base = optics.u_s * optics.s0 + optics.u_d * optics.d0          # (3,)
    face_rgb = illum[:, None] * (base[None, :]
                                 + np.outer(sway, optics.u_s)
                                 + np.outer(p, optics.u_p))
    face_rgb = face_rgb * gains[None, :]                            # (n, 3)

    rng = np.random.default_rng(seed)
    bg_base = np.array([0.35, 0.38, 0.45])
    background = bg_base[None, None, :] + rng.uniform(
        -0.15, 0.15, size=(height, width, 3))
    background = (background * gains[None, None, :]).astype(np.float64)

    frames = []
    for i in range(n):
        img = background.copy()
        img[y0:y1, x0:x1, :] = face_rgb[i][None, None, :]
        if noise.sensor_sigma > 0:
            img += rng.normal(0.0, noise.sensor_sigma, size=img.shape)
        img = np.clip(img, 0.0, 1.0)
        if noise.quantize:
            img = np.round(img * 255.0) / 255.0
        frames.append(Frame(img.astype(np.float32), timestamp=i / fps))

    boxes = tuple(FaceBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))
                  for _ in range(n))
    return FrameSequence(tuple(frames), fps, boxes, ground_truth=bvp)


# Scenario presets: colored-light gains, sway, lighting drift, sensor noise.
_SCENARIOS: dict[str, dict] = {
    "clean": {},
    "red": {"channel_gains": (1.0, 0.55, 0.55)},
    "green": {"channel_gains": (0.55, 1.0, 0.55)},
    "blue-green": {"channel_gains": (0.5, 0.95, 1.0)},
    "motion": {"motion_amp": 0.3},
    "noisy": {"motion_amp": 0.3, "illum_drift_amp": 0.2, "sensor_sigma": 0.05},
}


def scenario_names() -> list[str]:
    return list(_SCENARIOS.keys())


def scenario_params(name: str, sensor_sigma: float = 0.01) -> tuple[OpticalParams, NoiseParams]:
    """Optics/noise presets for the named scenario."""
    require(name in _SCENARIOS, f"unknown scenario '{name}' (have {sorted(_SCENARIOS)})")
    overrides = dict(_SCENARIOS[name])
    sigma = overrides.pop("sensor_sigma", sensor_sigma)
    optics = replace(OpticalParams(), **overrides) if overrides else OpticalParams()
    return optics, NoiseParams(sensor_sigma=sigma)


def make_fixture(hr_bpm: float, duration_s: float, seed: int,
                 scenario: str = "clean", fps: float = 30.0,
                 width: int = 48, height: int = 48,
                 face_box: FaceBox | None = None,
                 jitter_ms: float = 0.0,
                 waveform: str = "sinusoid",
                 sensor_sigma: float = 0.01) -> FrameSequence:
    """Convenience: generate a pulse and render it under a scenario preset."""
    spec = PulseSpec(hr_bpm=hr_bpm, hrv_jitter_ms=jitter_ms, duration_s=duration_s,
                     rate=fps, waveform=waveform)
    bvp = generate_pulse(spec, seed)
    optics, noisep = scenario_params(scenario, sensor_sigma=sensor_sigma)
    if face_box is None:
        side = min(width, height) * 3 // 4
        face_box = FaceBox((width - side) // 2, (height - side) // 2, side, side)
    return render_video(resample(bvp, fps), optics, noisep, width, height,
                        face_box, fps, seed=seed + 1)
