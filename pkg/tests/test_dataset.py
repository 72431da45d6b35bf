"""Manifest parsing, frame-index sampling, and frame loading."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from mobmod.dataset import (
    ManifestEntry,
    load_frames,
    load_manifest,
    sample_frame_indices,
)


def write_manifest(tmp_path, rows):
    path = tmp_path / "manifest.csv"
    path.write_text("id,frames_dir,label,split\n" + "".join(r + "\n" for r in rows))
    return path


class TestLoadManifest:
    def test_two_valid_rows(self, tmp_path):
        path = write_manifest(
            tmp_path, ["c1,frames/c1,malicious,train", "c2,frames/c2,benign,test"]
        )
        entries = load_manifest(path)
        assert [e.id for e in entries] == ["c1", "c2"]
        assert entries[0].frames_dir == tmp_path / "frames/c1"
        assert entries[1].label == "benign"

    def test_duplicate_id(self, tmp_path):
        path = write_manifest(tmp_path, ["c1,a,malicious,train", "c1,b,benign,test"])
        with pytest.raises(ValueError, match="duplicate id"):
            load_manifest(path)

    def test_unknown_label_names_allowed_values(self, tmp_path):
        path = write_manifest(tmp_path, ["c1,a,bad,train"])
        with pytest.raises(ValueError, match="malicious, benign"):
            load_manifest(path)

    def test_unknown_split_with_line_number(self, tmp_path):
        path = write_manifest(tmp_path, ["c1,a,malicious,train", "c2,b,benign,dev"])
        with pytest.raises(ValueError, match="line 3"):
            load_manifest(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("clip,dir,label,split\nc1,a,malicious,train\n")
        with pytest.raises(ValueError, match="header"):
            load_manifest(path)

    def test_absolute_frames_dir_kept(self, tmp_path):
        path = write_manifest(tmp_path, [f"c1,{tmp_path}/elsewhere,malicious,train"])
        entries = load_manifest(path)
        assert entries[0].frames_dir == tmp_path / "elsewhere"


class TestSampleFrameIndices:
    def test_mob_defaults(self):
        # 10 s at 25 fps sampled down to 16 frames.
        assert sample_frame_indices(250, 16) == [
            7, 23, 39, 54, 70, 85, 101, 117, 132, 148, 164, 179, 195, 210, 226, 242,
        ]

    def test_identity_when_equal(self):
        assert sample_frame_indices(4, 4) == [0, 1, 2, 3]

    def test_repetition_when_short(self):
        assert sample_frame_indices(1, 3) == [0, 0, 0]

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            sample_frame_indices(0, 4)
        with pytest.raises(ValueError):
            sample_frame_indices(10, 0)

    def test_monotone_and_endpoint_coverage(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 500))
            t = int(rng.integers(1, 64))
            idx = sample_frame_indices(n, t)
            assert all(0 <= i < n for i in idx)
            assert all(a <= b for a, b in zip(idx, idx[1:]))
            assert idx[0] < max(n / t, 1)
            assert idx[-1] >= n - n / t - 1


class TestLoadFrames:
    def _entry(self, tmp_path, n_frames=6, fmt="png"):
        clip_dir = tmp_path / "clip"
        clip_dir.mkdir()
        rng = np.random.default_rng(0)
        for i in range(n_frames):
            arr = (rng.uniform(0, 1, size=(8, 8, 3)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(clip_dir / f"f{i:03d}.{fmt}")
        return ManifestEntry("clip", clip_dir, "malicious", "train")

    def test_counts_and_shapes(self, tmp_path):
        entry = self._entry(tmp_path)
        tensors = load_frames(entry, sample_frame_indices(6, 4))
        assert len(tensors) == 4
        assert all(t.shape == (3, 224, 224) for t in tensors)

    def test_ppm_supported(self, tmp_path):
        entry = self._entry(tmp_path, fmt="ppm")
        assert len(load_frames(entry, [0, 1])) == 2

    def test_empty_dir_rejected(self, tmp_path):
        clip_dir = tmp_path / "empty"
        clip_dir.mkdir()
        entry = ManifestEntry("empty", clip_dir, "benign", "test")
        with pytest.raises(ValueError, match="no frame files"):
            load_frames(entry, [0])

    def test_missing_dir_named(self, tmp_path):
        entry = ManifestEntry("gone", tmp_path / "gone", "benign", "test")
        with pytest.raises(FileNotFoundError, match="gone"):
            load_frames(entry, [0])

    def test_non_image_file_named(self, tmp_path):
        clip_dir = tmp_path / "clip"
        clip_dir.mkdir()
        bad = clip_dir / "frame_000.png"
        bad.write_text("not an image")
        entry = ManifestEntry("clip", clip_dir, "benign", "test")
        with pytest.raises(ValueError, match="frame_000.png"):
            load_frames(entry, [0])

    def test_lexicographic_order(self, tmp_path):
        clip_dir = tmp_path / "clip"
        clip_dir.mkdir()
        for name, value in (("b.png", 200), ("a.png", 10)):
            Image.fromarray(np.full((4, 4, 3), value, dtype=np.uint8)).save(clip_dir / name)
        entry = ManifestEntry("clip", clip_dir, "benign", "test")
        first, second = load_frames(entry, [0, 1])
        # a.png (dark) sorts before b.png (bright)
        assert first.mean() < second.mean()
