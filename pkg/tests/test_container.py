"""Frame container round trips and malformed-input handling."""

import json

import numpy as np
import pytest

from pulseforge.container import (frame_name, load_sequence, read_ppm,
                                  save_sequence, write_ppm)
from pulseforge.core import BvpSignal, FaceBox, Frame, FrameSequence
from pulseforge.errors import ParseError

from conftest import make_frames


def checker_sequence(n=5, fps=20.0, h=6, w=8):
    def pixels(i):
        img = np.zeros((h, w, 3))
        img[i % h, :, 0] = 1.0
        img[:, i % w, 1] = 0.5
        return img
    boxes = tuple(FaceBox(1, 1, w - 2, h - 2) if i % 2 == 0 else FaceBox.absent()
                  for i in range(n))
    gt = BvpSignal(np.sin(np.arange(n) * 0.7), fps)
    return FrameSequence(make_frames(pixels, n, fps, h, w), fps, boxes, gt)


class TestPpm:
    def test_round_trip_is_8bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.random((9, 7, 3))
        p = tmp_path / "x.ppm"
        write_ppm(p, img)
        back = read_ppm(p)
        # Quantized to 1/255 steps on write; the read value is the nearest step.
        np.testing.assert_allclose(back, np.round(img * 255) / 255, atol=1e-7)

    def test_written_twice_is_byte_identical(self, tmp_path):
        img = np.random.default_rng(0).random((4, 4, 3))
        write_ppm(tmp_path / "a.ppm", img)
        write_ppm(tmp_path / "b.ppm", img)
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()

    def test_comment_lines_are_skipped(self, tmp_path):
        p = tmp_path / "c.ppm"
        body = bytes([10, 20, 30] * 4)
        p.write_bytes(b"P6\n# a comment\n2 2\n255\n" + body)
        img = read_ppm(p)
        assert img.shape == (2, 2, 3)
        assert img[0, 0, 0] == pytest.approx(10 / 255)

    def test_rejects_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P3\n2 2\n255\n" + bytes(12))
        with pytest.raises(ParseError):
            read_ppm(p)

    def test_rejects_truncated_pixels(self, tmp_path):
        p = tmp_path / "short.ppm"
        p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(ParseError):
            read_ppm(p)

    def test_rejects_unsupported_maxval(self, tmp_path):
        p = tmp_path / "deep.ppm"
        p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(ParseError):
            read_ppm(p)


class TestSequenceRoundTrip:
    def test_everything_survives(self, tmp_path):
        seq = checker_sequence()
        out = save_sequence(seq, tmp_path / "clip")
        back = load_sequence(out)
        assert len(back) == len(seq)
        assert back.fps == seq.fps
        for a, b in zip(back.face_boxes, seq.face_boxes):
            assert a.present == b.present
            if b.present:
                assert (a.x, a.y, a.w, a.h) == (b.x, b.y, b.w, b.h)
        np.testing.assert_allclose(back.ground_truth.samples,
                                   seq.ground_truth.samples)
        assert back.ground_truth.rate == seq.ground_truth.rate
        for fa, fb in zip(back.frames, seq.frames):
            np.testing.assert_allclose(fa.data, np.round(fb.data * 255) / 255,
                                       atol=1e-7)

    def test_extra_manifest_keys_are_ignored_by_reader(self, tmp_path):
        seq = checker_sequence(n=3)
        out = save_sequence(seq, tmp_path / "clip",
                            extra_manifest={"seed": 11, "config_hash": "ab"})
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 11
        back = load_sequence(out)
        assert len(back) == 3

    def test_optional_fields_stay_optional(self, tmp_path):
        img = np.zeros((4, 4, 3))
        seq = FrameSequence(make_frames(lambda i: img, 3, 10.0, 4, 4), 10.0)
        back = load_sequence(save_sequence(seq, tmp_path / "bare"))
        assert back.face_boxes is None
        assert back.ground_truth is None


class TestLoadErrors:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ParseError, match="manifest"):
            load_sequence(tmp_path)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{nope")
        with pytest.raises(ParseError, match="invalid JSON"):
            load_sequence(tmp_path)

    def test_missing_required_key(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"fps": 30.0}))
        with pytest.raises(ParseError, match="frame_count"):
            load_sequence(tmp_path)

    def test_missing_frame_file(self, tmp_path):
        seq = checker_sequence(n=3)
        out = save_sequence(seq, tmp_path / "clip")
        (out / frame_name(1)).unlink()
        with pytest.raises(ParseError, match="frame_000001"):
            load_sequence(out)

    def test_box_count_mismatch(self, tmp_path):
        seq = checker_sequence(n=3)
        out = save_sequence(seq, tmp_path / "clip")
        manifest = json.loads((out / "manifest.json").read_text())
        manifest["face_boxes"] = manifest["face_boxes"][:2]
        (out / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ParseError, match="face_boxes"):
            load_sequence(out)
