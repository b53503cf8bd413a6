#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
文件格式测试 - 关键点、特征片段、清单与分数 CSV
"""
import sys
import shutil
import struct
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np

from tests.test_framework import logger, main_for, write_text
from logic.errors import DataError
from logic.file_formats import (
    ManifestRow, read_feature_clip, read_keypoints, read_labels, read_manifest, read_scores,
    write_feature_clip, write_keypoints, write_manifest, write_scores,
)


def expect_error(tag, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except DataError as e:
        assert e.tag == tag, f"期望 {tag}，实际 {e.tag}"
        return
    raise AssertionError(f"期望 DataError {tag}")


class TestBinaryFiles:
    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_formats_test_"))

    def teardown_method(self, method):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_keypoints(self):
        logger.info("🧪 测试关键点文件")
        data = np.random.default_rng(0).uniform(0, 512, size=(5, 27, 3)).astype(np.float32)
        path = self.temp_dir / "a.skel"
        write_keypoints(path, data)
        loaded = read_keypoints(path)
        assert loaded.dtype == np.float64
        assert np.array_equal(loaded, data.astype(np.float64))
        assert path.stat().st_size == 4 + 16 + 5 * 27 * 3 * 4

    def test_keypoint_rejections(self):
        path = self.temp_dir / "a.skel"
        write_keypoints(path, np.zeros((2, 3, 3)))
        payload = path.read_bytes()
        (self.temp_dir / "short.skel").write_bytes(payload[:-4])
        expect_error("DATA_TRUNCATED", read_keypoints, self.temp_dir / "short.skel")
        (self.temp_dir / "magic.skel").write_bytes(b"XXXX" + payload[4:])
        expect_error("DATA_BAD_MAGIC", read_keypoints, self.temp_dir / "magic.skel")
        (self.temp_dir / "ver.skel").write_bytes(payload[:4] + struct.pack("<I", 9) + payload[8:])
        expect_error("DATA_VERSION", read_keypoints, self.temp_dir / "ver.skel")
        expect_error("DATA_FILE_MISSING", read_keypoints, self.temp_dir / "none.skel")
        expect_error("DATA_SHAPE", write_keypoints, path, np.zeros((2, 3, 2)))

    def test_feature_clip(self):
        data = np.arange(2 * 3 * 4 * 4, dtype=np.float32).reshape(2, 3, 4, 4)
        path = self.temp_dir / "f.feat"
        write_feature_clip(path, data)
        assert np.array_equal(read_feature_clip(path), data)
        expect_error("DATA_BAD_MAGIC", read_feature_clip, write_text(self.temp_dir / "x.feat", "SKEL0000"))
        expect_error("DATA_SHAPE", write_feature_clip, path, np.zeros((2, 3, 4)))


class TestCsvFiles:
    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_formats_test_"))

    def teardown_method(self, method):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_manifest(self):
        logger.info("🧪 测试清单文件")
        rows = [
            ManifestRow("a", "keypoints/a.skel", 0, "train"),
            ManifestRow("b", "keypoints/b.skel", 1, "val"),
            ManifestRow("c", "keypoints/c.skel", None, "test"),
        ]
        path = self.temp_dir / "manifest.csv"
        write_manifest(path, rows)
        assert read_manifest(path) == rows
        assert read_manifest(path, split="val") == [rows[1]]
        assert path.read_text(encoding='utf-8').splitlines()[3] == "c,keypoints/c.skel,,test"

    def test_manifest_rejections(self):
        header = "sample_id,relative_path,label,split\n"
        dup = write_text(self.temp_dir / "dup.csv", header + "a,x,0,train\na,y,1,train\n")
        expect_error("DATA_MANIFEST", read_manifest, dup)
        bad = write_text(self.temp_dir / "bad.csv", header + "a,x,zero,train\n")
        expect_error("DATA_MANIFEST", read_manifest, bad)
        wrong = write_text(self.temp_dir / "wrong.csv", "id,path,label,split\n")
        expect_error("DATA_MANIFEST", read_manifest, wrong)
        expect_error("DATA_FILE_MISSING", read_manifest, self.temp_dir / "none.csv")

    def test_scores_exact(self):
        scores = np.array([[0.1, -2.5e-17, 1 / 3], [np.pi, 0.0, -1e300]])
        path = self.temp_dir / "scores.csv"
        write_scores(path, ["x", "y"], scores)
        ids, loaded = read_scores(path)
        assert ids == ["x", "y"]
        assert np.array_equal(loaded, scores)
        assert path.read_text(encoding='utf-8').splitlines()[0] == "sample_id,c0,c1,c2"

    def test_scores_rejections(self):
        expect_error("DATA_SHAPE", write_scores, self.temp_dir / "s.csv", ["x"], np.zeros((2, 3)))
        ragged = write_text(self.temp_dir / "r.csv", "sample_id,c0,c1\nx,1.0\n")
        expect_error("DATA_SCORES", read_scores, ragged)
        nan = write_text(self.temp_dir / "n.csv", "sample_id,c0\nx,nan\n")
        expect_error("DATA_SCORES", read_scores, nan)

    def test_labels(self):
        path = write_text(self.temp_dir / "labels.csv", "sample_id,label\na,3\nb,\nc,0\n")
        assert read_labels(path) == {"a": 3, "c": 0}
        manifest = self.temp_dir / "manifest.csv"
        write_manifest(manifest, [ManifestRow("a", "x", 2, "val")])
        assert read_labels(manifest) == {"a": 2}
        expect_error("DATA_LABELS", read_labels, write_text(self.temp_dir / "bad.csv", "id,class\n"))


def run_all_tests():
    return main_for(TestBinaryFiles, TestCsvFiles)


if __name__ == "__main__":
    sys.exit(run_all_tests())
