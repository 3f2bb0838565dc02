"""JSON run configuration: defaults, schema validation, stable hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ValidationError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "window_len": {"type": "integer", "minimum": 4},
        "enlarge_ratio": _NONNEG,
        "mask": {"enum": ["on", "off"]},
        "use_shift": {"type": "boolean"},
        "branches": {"enum": ["multi", "adjacent"]},
        "drop1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "drop2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "norm_order": {"enum": ["affine-first", "affine-after"]},
        "reinfer_window": {"type": "integer", "minimum": 0},
        "weights": {"type": "string"},
        "input": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"container": {"type": "string"}},
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hr_bpm": {"type": "number", "minimum": 30, "maximum": 240},
                "duration_s": _POS,
                "fps": _INT_POS,
                "width": {"type": "integer", "minimum": 8},
                "height": {"type": "integer", "minimum": 8},
                "scenario": {"type": "string"},
                "jitter_ms": _NONNEG,
                "waveform": {"enum": ["sinusoid", "double-gaussian-pulse"]},
                "sensor_sigma": _NONNEG,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _INT_POS,
                "batch_size": _INT_POS,
                "lr": _POS,
                "hrs_bpm": {"type": "array", "items": _NUM, "minItems": 1},
                "duration_s": _POS,
                "scenario": {"type": "string"},
                "stride": _INT_POS,
            },
        },
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scenarios": {"type": "array", "items": {"type": "string"},
                              "minItems": 1},
                "hr_bpm": {"type": "number", "minimum": 30, "maximum": 240},
                "duration_s": _POS,
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fps": _POS,
                "no_face_limit_frames": _INT_POS,
                "sleep_duration_s": _POS,
                "pnn50_enter_threshold_pct": _NONNEG,
                "pnn50_exit_threshold_pct": _NONNEG,
                "min_hrv_window_s": _POS,
                "hr_change_trigger_bpm": _POS,
                "exit_no_face_frames": _INT_POS,
            },
        },
        "energy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p_sample_w": _POS, "p_sleep_w": _POS, "p_infer_w": _POS,
            },
        },
    },
}

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "out_dir": "out",
    "window_len": 10,
    "enlarge_ratio": 0.0,
    "mask": "on",
    "use_shift": True,
    "branches": "multi",
    "drop1": 0.25,
    "drop2": 0.5,
    "norm_order": "affine-first",
    "reinfer_window": 0,
    "synth": {
        "hr_bpm": 72.0,
        "duration_s": 20.0,
        "fps": 30,
        "width": 48,
        "height": 48,
        "scenario": "clean",
        "jitter_ms": 0.0,
        "waveform": "sinusoid",
        "sensor_sigma": 0.01,
    },
    "train": {
        "epochs": 8,
        "batch_size": 32,
        "lr": 1.0,
        "hrs_bpm": [55.0, 66.0, 84.0, 96.0, 108.0, 126.0],
        "duration_s": 20.0,
        "scenario": "clean",
    },
    "bench": {
        "scenarios": ["clean", "red", "green", "blue-green", "motion"],
        "hr_bpm": 72.0,
        "duration_s": 20.0,
    },
    "sampler": {
        "fps": 30.0,
        "no_face_limit_frames": 10,
        "sleep_duration_s": 1.0,
        "pnn50_enter_threshold_pct": 20.0,
        "pnn50_exit_threshold_pct": 20.0,
        "min_hrv_window_s": 240.0,
        "hr_change_trigger_bpm": 5.0,
        "exit_no_face_frames": 10,
    },
    "energy": {
        "p_sample_w": 2.2,
        "p_sleep_w": 0.2,
        "p_infer_w": 1.1,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_CONFIG)


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(f"config: {path}: {e.message}") from e


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None) -> dict:
    """Defaults merged with the JSON file at `path` (if any), validated."""
    if path is None:
        cfg = default_config()
        validate_config(cfg)
        return cfg
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"config {p}: invalid JSON: {e}") from e
    if not isinstance(user, dict):
        raise ValidationError(f"config {p}: top level must be an object")
    validate_config(user)
    cfg = _merge(default_config(), user)
    validate_config(cfg)
    return cfg


def set_path(cfg: dict, dotted: str, value) -> None:
    """Assign a possibly-nested key like 'synth.hr_bpm' in place."""
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def config_hash(cfg: dict) -> str:
    """16-hex-digit digest of the config, ignoring output location."""
    trimmed = {k: v for k, v in cfg.items() if k != "out_dir"}
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
