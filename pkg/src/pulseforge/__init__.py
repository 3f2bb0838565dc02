"""Camera pulse estimation toolkit.

Synthesizes labeled skin-tone clips, recovers the blood volume pulse with
either classical color projections or a learned temporal-shift network,
scores the estimates, and simulates an event-driven duty-cycled sampler.
"""

from .analysis import (IbiSeries, MetricReport, detect_peaks, estimate_hr,
                       hr_over_windows, ibi_mean_bpm, integrate, metrics,
                       pearson, periodogram, pnn50, snr_db)
from .baselines import BASELINES, chrom, green, pos
from .core import (DEFAULT_BAND_HZ, BvpSignal, FaceBox, Frame, FrameSequence,
                   HeartRateEstimate, resample, window)
from .container import load_sequence, save_sequence
from .dutycycle import (Action, EnergyModel, FrameEvent, Mode, SamplerConfig,
                        SamplerState, load_trace_csv, run_trace, save_trace_csv,
                        simulate_energy, step)
from .errors import (InsufficientDataError, NumericError, ParseError,
                     ProtocolError, ValidationError)
from .estimators import BaselineEstimator, PulseNetEstimator, check_sequences
from .network import (NetworkConfig, NetworkWeights, TrainResult,
                      attention_mask, backward, forward, init_weights,
                      load_weights, save_weights, temporal_shift, train)
from .pipeline import (InferenceResult, evaluate_sequences, infer_sequence,
                       make_training_set)
from .preprocess import (NormParams, Patch, WindowBatch, appearance_patch,
                         build_windows, crop_resize, normalize,
                         temporal_difference)
from .synth import (NoiseParams, OpticalParams, PulseSpec, generate_pulse,
                    generate_pulse_with_beats, make_fixture, render_video,
                    scenario_names, scenario_params)

__version__ = "0.1.0"

__all__ = [
    "Action", "BASELINES", "BaselineEstimator", "BvpSignal", "DEFAULT_BAND_HZ",
    "EnergyModel", "FaceBox", "Frame", "FrameEvent", "FrameSequence",
    "HeartRateEstimate", "IbiSeries", "InferenceResult",
    "InsufficientDataError", "MetricReport", "Mode", "NetworkConfig",
    "NetworkWeights", "NoiseParams", "NormParams", "NumericError",
    "OpticalParams", "ParseError", "Patch", "ProtocolError", "PulseNetEstimator",
    "PulseSpec", "SamplerConfig", "SamplerState", "TrainResult",
    "ValidationError", "WindowBatch", "appearance_patch", "attention_mask",
    "backward", "build_windows", "check_sequences", "chrom", "crop_resize",
    "detect_peaks", "estimate_hr", "evaluate_sequences", "forward",
    "generate_pulse", "generate_pulse_with_beats", "green", "hr_over_windows",
    "ibi_mean_bpm", "infer_sequence", "init_weights", "integrate",
    "load_sequence", "load_trace_csv", "load_weights", "make_fixture",
    "make_training_set", "metrics", "normalize", "pearson", "periodogram",
    "pnn50", "pos", "render_video", "resample", "run_trace", "save_sequence",
    "save_trace_csv", "save_weights", "scenario_names", "scenario_params",
    "simulate_energy", "snr_db", "step", "temporal_difference",
    "temporal_shift", "train", "window",
]
