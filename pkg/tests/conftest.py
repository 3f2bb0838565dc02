"""Shared builders for small synthetic inputs."""

import numpy as np
import pytest

from pulseforge.core import FaceBox, Frame, FrameSequence
from pulseforge.synth import make_fixture


def make_frames(pixel_fn, n, fps=30.0, height=24, width=24):
    """Frames whose pixels come from pixel_fn(i) -> (h, w, 3) array."""
    return tuple(Frame(pixel_fn(i), timestamp=i / fps) for i in range(n))


def flat_sequence(n=16, fps=30.0, value=0.5, height=24, width=24,
                  box=None, with_boxes=True):
    """Constant-color sequence, full-frame face box unless given."""
    img = np.full((height, width, 3), value, dtype=np.float32)
    frames = make_frames(lambda i: img, n, fps, height, width)
    boxes = None
    if with_boxes:
        b = box if box is not None else FaceBox(2, 2, width - 4, height - 4)
        boxes = tuple(b for _ in range(n))
    return FrameSequence(frames, fps, boxes)


@pytest.fixture(scope="session")
def clean_fixture():
    """12 s clean render at 72 bpm, reused by read-only tests."""
    return make_fixture(72.0, 12.0, seed=5, scenario="clean", fps=30.0,
                        width=48, height=48)


@pytest.fixture(scope="session")
def noisy_fixture():
    """Short render with sway, drift, and sensor noise."""
    return make_fixture(66.0, 8.0, seed=9, scenario="noisy", fps=30.0,
                        width=48, height=48)
