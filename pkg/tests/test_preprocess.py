"""Crop/resize, differencing, window normalization, and window assembly."""

import warnings

import numpy as np
import pytest

from pulseforge.core import FaceBox, Frame, FrameSequence
from pulseforge.errors import ValidationError
from pulseforge.preprocess import (PATCH_SIDE, NormParams, Patch,
                                   appearance_patch, build_windows,
                                   crop_resize, normalize,
                                   temporal_difference)

from conftest import flat_sequence, make_frames


class TestPatch:
    def test_shape_enforced(self):
        with pytest.raises(ValidationError):
            Patch(np.zeros((3, 10, 10)))

    def test_read_only(self):
        p = Patch(np.zeros((3, PATCH_SIDE, PATCH_SIDE)))
        with pytest.raises(ValueError):
            p.data[0, 0, 0] = 1.0


class TestCropResize:
    def test_constant_region_maps_to_constant_patch(self):
        img = np.zeros((40, 40, 3))
        img[:, :] = (0.2, 0.5, 0.8)
        patch = crop_resize(Frame(img), FaceBox(5, 5, 20, 20))
        for c, v in enumerate((0.2, 0.5, 0.8)):
            np.testing.assert_allclose(patch.data[c], v, atol=1e-9)

    def test_horizontal_gradient_is_preserved(self):
        img = np.zeros((40, 40, 3))
        img[:, :, 0] = np.linspace(0.0, 1.0, 40)[None, :]
        patch = crop_resize(Frame(img), FaceBox(0, 0, 40, 40))
        row = patch.data[0, 0]
        assert np.all(np.diff(row) > 0)
        # Interior samples follow the source gradient closely.
        xs = (np.arange(PATCH_SIDE) + 0.5) * (40 / PATCH_SIDE) - 0.5
        np.testing.assert_allclose(row[2:-2], (xs / 39.0)[2:-2], atol=0.02)

    def test_enlarge_clamps_at_frame_edge(self):
        img = np.random.default_rng(0).random((30, 30, 3))
        patch = crop_resize(Frame(img), FaceBox(0, 0, 30, 30), enlarge_ratio=0.5)
        assert patch.data.shape == (3, PATCH_SIDE, PATCH_SIDE)
        assert np.all(np.isfinite(patch.data))

    def test_absent_box_rejected(self):
        img = np.zeros((20, 20, 3))
        with pytest.raises(ValidationError):
            crop_resize(Frame(img), FaceBox.absent())

    def test_degenerate_after_clamp_rejected(self):
        img = np.zeros((20, 20, 3))
        with pytest.raises(ValidationError):
            crop_resize(Frame(img), FaceBox(19.5, 19.5, 0.4, 0.4))


class TestTemporalDifference:
    def test_exact_differences(self):
        rng = np.random.default_rng(1)
        stack = rng.random((5, 3, PATCH_SIDE, PATCH_SIDE))
        diffs = temporal_difference(stack)
        np.testing.assert_array_equal(diffs, stack[1:] - stack[:-1])

    def test_accepts_patch_objects(self):
        rng = np.random.default_rng(2)
        patches = [Patch(rng.random((3, PATCH_SIDE, PATCH_SIDE))) for _ in range(3)]
        diffs = temporal_difference(patches)
        assert diffs.shape == (2, 3, PATCH_SIDE, PATCH_SIDE)

    def test_needs_two(self):
        with pytest.raises(ValidationError):
            temporal_difference(np.zeros((1, 3, PATCH_SIDE, PATCH_SIDE)))


class TestNormalize:
    def _diffs(self, seed=0, n=8):
        return np.random.default_rng(seed).normal(size=(n, 3, 4, 4))

    def test_affine_first_output_is_standardized(self):
        out = normalize(self._diffs(), NormParams(beta=np.array([2.0, 1.0, 0.5]),
                                                  gamma=np.array([1.0, 0.0, -1.0])))
        for c in range(3):
            assert out[:, c].mean() == pytest.approx(0.0, abs=1e-12)
            assert out[:, c].std() == pytest.approx(1.0, rel=1e-12)

    def test_affine_first_is_invariant_to_positive_scale_and_shift(self):
        # Standardizing after the affine map cancels gamma entirely and any
        # positive beta, so those parameters cannot change the output.
        d = self._diffs()
        base = normalize(d, NormParams())
        moved = normalize(d, NormParams(beta=np.array([3.0, 0.25, 10.0]),
                                        gamma=np.array([-5.0, 2.0, 100.0])))
        np.testing.assert_allclose(moved, base, atol=1e-10)

    def test_affine_after_applies_parameters(self):
        d = self._diffs()
        beta = np.array([2.0, 1.0, 0.5])
        gamma = np.array([1.0, 0.0, -1.0])
        out = normalize(d, NormParams(beta=beta, gamma=gamma), order="affine-after")
        plain = normalize(d, NormParams(), order="affine-after")
        for c in range(3):
            np.testing.assert_allclose(out[:, c], beta[c] * plain[:, c] + gamma[c],
                                       atol=1e-12)

    def test_constant_batch_guard_warns_and_stays_finite(self):
        d = np.ones((4, 3, 4, 4))
        with pytest.warns(RuntimeWarning):
            out = normalize(d)
        assert np.all(np.isfinite(out))

    def test_unknown_order_rejected(self):
        with pytest.raises(ValidationError):
            normalize(self._diffs(), order="after-affine")


class TestAppearancePatch:
    def test_mean_then_standardize(self):
        rng = np.random.default_rng(3)
        stack = rng.random((6, 3, 5, 5))
        out = appearance_patch(stack)
        mean = stack.mean(axis=0)
        for c in range(3):
            expect = (mean[c] - mean[c].mean()) / mean[c].std()
            np.testing.assert_allclose(out[c], expect, atol=1e-12)


class TestBuildWindows:
    def _seq(self, n=25, absent=()):
        img = np.random.default_rng(0).random((20, 20, 3)).astype(np.float32)
        frames = make_frames(lambda i: img, n, 30.0, 20, 20)
        boxes = tuple(FaceBox.absent() if i in absent else FaceBox(2, 2, 16, 16)
                      for i in range(n))
        return FrameSequence(frames, 30.0, boxes)

    def test_default_stride_tiles_transitions(self):
        batch = build_windows(self._seq(n=28), window_len=10)
        assert batch.starts == (0, 9, 18)
        assert batch.motion.shape == (3, 9, 3, PATCH_SIDE, PATCH_SIDE)
        assert batch.appearance.shape == (3, 3, PATCH_SIDE, PATCH_SIDE)
        assert batch.motion.dtype == np.float32

    def test_explicit_starts(self):
        batch = build_windows(self._seq(n=20), window_len=10, starts=[0, 5, 10])
        assert batch.starts == (0, 5, 10)
        with pytest.raises(ValidationError):
            build_windows(self._seq(n=20), window_len=10, starts=[11])

    def test_windows_touching_absent_boxes_are_skipped(self):
        batch = build_windows(self._seq(n=28, absent={12}), window_len=10)
        assert batch.starts == (0, 18)
        assert batch.skipped == 1

    def test_all_absent_rejected(self):
        with pytest.raises(ValidationError):
            build_windows(self._seq(n=12, absent=set(range(12))), window_len=10)

    def test_sequence_without_boxes_rejected(self):
        seq = flat_sequence(n=12, with_boxes=False)
        with pytest.raises(ValidationError):
            build_windows(seq, window_len=10)

    def test_too_short_sequence_rejected(self):
        with pytest.raises(ValidationError):
            build_windows(self._seq(n=8), window_len=10)
