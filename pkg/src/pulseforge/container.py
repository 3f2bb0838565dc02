"""On-disk frame container: binary PPM (P6, maxval 255) files plus manifest.json.

Layout:
    <dir>/frame_000000.ppm, frame_000001.ppm, ...
    <dir>/manifest.json with keys:
        fps          number
        frame_count  integer
        face_boxes   optional: per-frame {x, y, w, h} or null
        ground_truth_bvp  optional: {rate, samples: [...]}
Extra manifest keys (seed, config_hash) are written by the CLI and ignored
by the reader.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import BvpSignal, FaceBox, Frame, FrameSequence
from .errors import ParseError
from .validation import require


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    """Write one float RGB image in [0, 1] as binary P6 with maxval 255."""
    require(rgb.ndim == 3 and rgb.shape[2] == 3, "ppm payload must be (h, w, 3)")
    h, w = rgb.shape[:2]
    data = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    """Read binary P6, return float32 RGB in [0, 1]."""
    raw = Path(path).read_bytes()
    # Header is ASCII tokens (magic, width, height, maxval) with optional
    # '#' comments, followed by a single whitespace byte before the pixels.
    pos = 0
    tokens: list[bytes] = []
    while len(tokens) < 4:
        if pos >= len(raw):
            raise ParseError(f"{path}: truncated header")
        c = raw[pos:pos + 1]
        if c == b"#":
            nl = raw.find(b"\n", pos)
            if nl < 0:
                raise ParseError(f"{path}: unterminated comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    if tokens[0] != b"P6":
        raise ParseError(f"{path}: not a P6 file (magic {tokens[0]!r})")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise ParseError(f"{path}: bad header token: {e}") from e
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    body = raw[pos:pos + need]
    if len(body) != need:
        raise ParseError(f"{path}: expected {need} pixel bytes, got {len(body)}")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float32) / 255.0


def frame_name(i: int) -> str:
    return f"frame_{i:06d}.ppm"


def save_sequence(seq: FrameSequence, out_dir: str | Path,
                  extra_manifest: dict | None = None) -> Path:
    """Write a frame container; returns the directory path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        write_ppm(out / frame_name(i), fr.data)
    manifest: dict = {"fps": seq.fps, "frame_count": len(seq)}
    if seq.face_boxes is not None:
        manifest["face_boxes"] = [
            {"x": b.x, "y": b.y, "w": b.w, "h": b.h} if b.present else None
            for b in seq.face_boxes
        ]
    if seq.ground_truth is not None:
        manifest["ground_truth_bvp"] = {
            "rate": seq.ground_truth.rate,
            "samples": [float(v) for v in seq.ground_truth.samples],
        }
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f)
    return out


def load_sequence(in_dir: str | Path) -> FrameSequence:
    """Read a frame container written by save_sequence."""
    src = Path(in_dir)
    mpath = src / "manifest.json"
    if not mpath.exists():
        raise ParseError(f"{src}: missing manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{mpath}: invalid JSON: {e}") from e
    for key in ("fps", "frame_count"):
        if key not in manifest:
            raise ParseError(f"{mpath}: missing key '{key}'")
    fps = float(manifest["fps"])
    n = int(manifest["frame_count"])
    frames = []
    for i in range(n):
        fpath = src / frame_name(i)
        if not fpath.exists():
            raise ParseError(f"{src}: missing {frame_name(i)}")
        frames.append(Frame(read_ppm(fpath), timestamp=i / fps))
    boxes = None
    if manifest.get("face_boxes") is not None:
        raw_boxes = manifest["face_boxes"]
        if len(raw_boxes) != n:
            raise ParseError(f"{mpath}: face_boxes length {len(raw_boxes)} != {n}")
        boxes = tuple(
            FaceBox(b["x"], b["y"], b["w"], b["h"]) if b is not None else FaceBox.absent()
            for b in raw_boxes
        )
    gt = None
    if manifest.get("ground_truth_bvp") is not None:
        g = manifest["ground_truth_bvp"]
        gt = BvpSignal(np.asarray(g["samples"], dtype=np.float64), float(g["rate"]))
    return FrameSequence(tuple(frames), fps, boxes, gt)
