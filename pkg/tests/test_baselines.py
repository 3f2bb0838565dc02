"""Classical color-trace extractors: traces, projections, guards."""

import numpy as np
import pytest

from pulseforge.analysis import estimate_hr
from pulseforge.baselines import (BASELINES, chrom, green, mean_rgb_trace,
                                  pos)
from pulseforge.core import FaceBox, Frame, FrameSequence
from pulseforge.errors import InsufficientDataError, ValidationError

from conftest import flat_sequence, make_frames


def tone_sequence(hz, n=360, fps=30.0, depth=0.02, base=0.5, extra_fn=None):
    """Uniform frames whose color oscillates at hz (green-weighted)."""
    def pix(i):
        t = i / fps
        v = depth * np.sin(2 * np.pi * hz * t)
        if extra_fn is not None:
            v = v + extra_fn(t)
        img = np.full((8, 8, 3), base, dtype=np.float32)
        img[:, :, 1] += v
        img[:, :, 0] += 0.5 * v
        return img
    frames = make_frames(pix, n, fps, 8, 8)
    boxes = tuple(FaceBox(1, 1, 6, 6) for _ in range(n))
    return FrameSequence(frames, fps, boxes)


class TestMeanRgbTrace:
    def test_constant_sequence_exact(self):
        seq = flat_sequence(n=5, value=0.25)
        trace = mean_rgb_trace(seq)
        assert trace.shape == (5, 3)
        np.testing.assert_allclose(trace, 0.25, atol=1e-7)

    def test_box_restricts_the_region(self):
        img = np.zeros((10, 10, 3), dtype=np.float32)
        img[2:6, 3:8] = 0.8
        frames = make_frames(lambda i: img, 3, 30.0, 10, 10)
        boxes = tuple(FaceBox(3, 2, 5, 4) for _ in range(3))
        trace = mean_rgb_trace(FrameSequence(frames, 30.0, boxes))
        np.testing.assert_allclose(trace, 0.8, atol=1e-7)

    def test_absent_boxes_reuse_last_seen(self):
        img0 = np.full((6, 6, 3), 0.2, dtype=np.float32)
        img1 = np.full((6, 6, 3), 0.9, dtype=np.float32)
        frames = make_frames(lambda i: img0 if i == 0 else img1, 3, 30.0, 6, 6)
        boxes = (FaceBox(0, 0, 6, 6), FaceBox.absent(), FaceBox.absent())
        trace = mean_rgb_trace(FrameSequence(frames, 30.0, boxes))
        np.testing.assert_allclose(trace[0], 0.2, atol=1e-6)
        np.testing.assert_allclose(trace[1:], 0.9, atol=1e-6)

    def test_leading_absence_borrows_first_real_box(self):
        img = np.zeros((8, 8, 3), dtype=np.float32)
        img[0:4, 0:4] = 1.0
        frames = make_frames(lambda i: img, 2, 30.0, 8, 8)
        boxes = (FaceBox.absent(), FaceBox(0, 0, 4, 4))
        trace = mean_rgb_trace(FrameSequence(frames, 30.0, boxes))
        np.testing.assert_allclose(trace, 1.0, atol=1e-7)

    def test_requires_boxes(self):
        seq = flat_sequence(n=4, with_boxes=False)
        with pytest.raises(ValidationError):
            mean_rgb_trace(seq)

    def test_all_absent_rejected(self):
        frames = make_frames(lambda i: np.zeros((4, 4, 3), dtype=np.float32),
                             3, 30.0, 4, 4)
        boxes = tuple(FaceBox.absent() for _ in range(3))
        with pytest.raises(InsufficientDataError):
            mean_rgb_trace(FrameSequence(frames, 30.0, boxes))


class TestHeartRateRecovery:
    @pytest.mark.parametrize("method", ["green", "chrom", "pos"])
    def test_clean_render(self, clean_fixture, method):
        """Each extractor recovers the rendered 72 bpm pulse."""
        bvp = BASELINES[method](clean_fixture)
        assert bvp.rate == clean_fixture.fps
        est = estimate_hr(bvp)
        assert abs(est.bpm - 72.0) < 1.5

    @pytest.mark.parametrize("method", ["green", "chrom", "pos"])
    def test_rate_estimate_ignores_amplitude(self, method):
        # Doubling the pulsatile swing rescales the trace but must leave
        # the estimated rate untouched.
        small = tone_sequence(1.2, n=240, base=0.4, depth=0.01)
        large = tone_sequence(1.2, n=240, base=0.4, depth=0.02)
        a = estimate_hr(BASELINES[method](small)).bpm
        b = estimate_hr(BASELINES[method](large)).bpm
        assert a == pytest.approx(b, abs=1e-9)

    def test_out_of_band_drift_is_rejected(self):
        # A 0.2 Hz drift five times stronger than the 1.5 Hz tone must not
        # win after bandpassing.
        seq = tone_sequence(1.5, depth=0.02,
                            extra_fn=lambda t: 0.1 * np.sin(2 * np.pi * 0.2 * t))
        est = estimate_hr(green(seq))
        assert abs(est.bpm - 90.0) < 2.0


class TestProjectionProperties:
    def test_intensity_scale_invariance(self):
        # Chrominance projections normalize by the temporal mean, so a
        # global gain change leaves them untouched.
        seq = tone_sequence(1.2, n=240, base=0.4, depth=0.01)
        dim = tone_sequence(1.2, n=240, base=0.2, depth=0.005)
        np.testing.assert_allclose(chrom(seq).samples, chrom(dim).samples,
                                   atol=1e-6)
        np.testing.assert_allclose(pos(seq).samples, pos(dim).samples,
                                   atol=1e-6)

    def test_chrom_rejects_black_region(self):
        seq = flat_sequence(n=90, value=0.0)
        with pytest.raises(ValidationError):
            chrom(seq)

    def test_pos_handles_constant_input(self):
        # No pulsatile component: the projection is all-zero and must not
        # blow up in the variance normalizer.
        bvp = pos(flat_sequence(n=90, value=0.5))
        np.testing.assert_allclose(bvp.samples, 0.0, atol=1e-9)


class TestLengthGuard:
    @pytest.mark.parametrize("method", ["green", "chrom", "pos"])
    def test_under_two_seconds_rejected(self, method):
        seq = flat_sequence(n=59, fps=30.0)
        with pytest.raises(InsufficientDataError):
            BASELINES[method](seq)

    @pytest.mark.parametrize("method", ["green", "chrom", "pos"])
    def test_two_seconds_accepted(self, method):
        seq = flat_sequence(n=60, fps=30.0, value=0.5)
        BASELINES[method](seq)
