#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
输入流测试 - 归一化、采样、骨骼/运动流与数据增强
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np

from tests.test_framework import logger, main_for, seven_node_graph
from logic.errors import StreamError
from logic.graph import default_slr_graph, mirror_permutation
from logic.streams import (
    AugmentationParams, KeypointSequence, StreamTensor, augment, build_stream, compute_bones,
    compute_motion, mirror, normalize_coords, rotate, sample_frames, sample_rng,
)


def random_sequence(rng, T, N, normalized=True, sample_id="s"):
    data = np.empty((T, N, 3))
    data[..., :2] = rng.uniform(-1, 1, size=(T, N, 2))
    data[..., 2] = rng.uniform(0, 1, size=(T, N))
    return KeypointSequence.from_array(data, sample_id=sample_id, normalized=normalized)


def expect_error(tag, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except StreamError as e:
        assert e.tag == tag, f"期望 {tag}，实际 {e.tag}"
        return
    raise AssertionError(f"期望 StreamError {tag}")


class TestKeypointSequence:
    """读入校验与坐标归一化"""

    def test_normalize(self):
        logger.info("🧪 测试坐标归一化")
        data = np.array([[[0.0, 0.0, 1.0], [512.0, 256.0, 0.5], [128.0, 384.0, 0.0]]])
        seq = KeypointSequence.from_array(data, frame_size=(512, 512))
        out = normalize_coords(seq)
        assert out.normalized
        assert np.allclose(out.data[0, :, 0], [-1.0, 1.0, -0.5])
        assert np.allclose(out.data[0, :, 1], [-1.0, 0.0, 0.5])
        assert np.array_equal(out.data[..., 2], data[..., 2])
        # 已归一化的序列原样返回
        assert normalize_coords(out) is out

    def test_invalid_inputs(self):
        bad = np.zeros((2, 3, 3))
        bad[0, 0, 0] = np.nan
        expect_error("STREAM_NAN", KeypointSequence.from_array, bad)
        bad = np.zeros((2, 3, 3))
        bad[1, 2, 2] = 1.5
        expect_error("STREAM_CONFIDENCE", KeypointSequence.from_array, bad)
        expect_error("STREAM_SHAPE", KeypointSequence.from_array, np.zeros((2, 3, 2)))
        expect_error("STREAM_EMPTY", KeypointSequence.from_array, np.zeros((0, 3, 3)))
        seq = KeypointSequence.from_array(np.zeros((1, 2, 3)), frame_size=(0, 512))
        expect_error("STREAM_FRAME_SIZE", normalize_coords, seq)


class TestSampling:
    """定长采样"""

    def test_uniform(self):
        data = np.zeros((10, 1, 3))
        data[:, 0, 0] = np.arange(10)
        seq = KeypointSequence.from_array(data)
        out = sample_frames(seq, 5, "uniform")
        assert list(out.data[:, 0, 0]) == [0, 2, 4, 6, 8]
        longer = sample_frames(seq, 20, "uniform")
        assert longer.num_frames == 20
        assert list(longer.data[:4, 0, 0]) == [0, 0, 1, 1]

    def test_repeat_pad_random(self):
        data = np.zeros((3, 1, 3))
        data[:, 0, 0] = np.arange(3)
        seq = KeypointSequence.from_array(data)
        out = sample_frames(seq, 7, "repeat_pad_random", np.random.default_rng(5))
        frames = out.data[:, 0, 0].astype(int)
        assert len(frames) == 7
        # 重复后的视频是循环的，相邻帧下标差 1 (mod 3)
        assert all((b - a) % 3 == 1 for a, b in zip(frames, frames[1:]))

    def test_unknown_mode(self):
        seq = KeypointSequence.from_array(np.zeros((3, 1, 3)))
        expect_error("STREAM_SAMPLING", sample_frames, seq, 4, "nearest")


class TestDerivedStreams:
    """骨骼流与运动流"""

    def setup_method(self, method):
        self.graph = seven_node_graph()
        self.rng = np.random.default_rng(11)

    def test_bone_tree_prefix_sum(self):
        logger.info("🧪 测试骨骼流沿骨骼树前缀和还原关节")
        graph = default_slr_graph()
        parents = graph.parents
        order = sorted(range(graph.num_nodes), key=lambda v: graph.hop_distance[graph.root, v])
        for i in range(100):
            seq = random_sequence(self.rng, 5, graph.num_nodes)
            joints = build_stream(seq, "joint", graph)
            bones = compute_bones(joints, graph)
            root = graph.root
            assert np.array_equal(bones.data[:, root, :2], np.zeros((5, 2)))
            assert np.array_equal(bones.data[:, root, 2], joints.data[:, root, 2])
            rebuilt = np.zeros((5, graph.num_nodes, 2))
            rebuilt[:, root] = joints.data[:, root, :2]
            for v in order:
                if v != root:
                    rebuilt[:, v] = rebuilt[:, parents[v]] + bones.data[:, v, :2]
            assert np.max(np.abs(rebuilt - joints.data[..., :2])) < 1e-9
        logger.info("✅ 骨骼流还原测试通过")

    def test_motion_prefix_sum(self):
        for i in range(100):
            seq = random_sequence(self.rng, 6, 7)
            joints = build_stream(seq, "joint", self.graph)
            motion = compute_motion(joints)
            assert motion.kind == "joint_motion"
            rebuilt = np.cumsum(np.concatenate([joints.data[:1, :, :2], motion.data[:-1, :, :2]]), axis=0)
            assert np.max(np.abs(rebuilt - joints.data[..., :2])) < 1e-9
            # 置信度保留 s_t，最后一帧全为0
            assert np.array_equal(motion.data[:-1, :, 2], joints.data[:-1, :, 2])
            assert not motion.data[-1].any()

    def test_bone_motion(self):
        seq = random_sequence(self.rng, 4, 7)
        stream = build_stream(seq, "bone_motion", self.graph)
        bones = build_stream(seq, "bone", self.graph)
        assert stream.kind == "bone_motion"
        assert np.allclose(stream.data[:-1], bones.data[1:] - bones.data[:-1])
        assert not stream.data[-1].any()

    def test_errors(self):
        seq = random_sequence(self.rng, 1, 7)
        joints = build_stream(seq, "joint", self.graph)
        expect_error("STREAM_TOO_SHORT", compute_motion, joints)
        expect_error("STREAM_KIND", build_stream, seq, "velocity", self.graph)
        expect_error("STREAM_KIND", compute_bones, StreamTensor("bone", joints.data), self.graph)
        expect_error("STREAM_NODE_MISMATCH", compute_bones, joints, default_slr_graph())


class TestAugmentation:
    """数据增强"""

    def setup_method(self, method):
        self.graph = default_slr_graph()
        self.rng = np.random.default_rng(3)
        self.seq = random_sequence(self.rng, 20, self.graph.num_nodes, sample_id="clip_7")

    def test_deterministic_under_seed(self):
        logger.info("🧪 测试增强的可复现性")
        params = AugmentationParams(rng_seed=42, sample_length=16)
        a = augment(self.seq, params, self.graph)
        b = augment(self.seq, params, self.graph)
        assert np.array_equal(a.data, b.data)
        assert a.num_frames == 16
        c = augment(self.seq, params, self.graph, sample_rng(42, "clip_7", epoch=1))
        assert not np.array_equal(a.data, c.data)

    def test_rejects_unnormalized(self):
        seq = KeypointSequence.from_array(np.zeros((4, self.graph.num_nodes, 3)))
        expect_error("STREAM_UNNORMALIZED", augment, seq, AugmentationParams(), self.graph)

    def test_disabled_is_uniform_sampling(self):
        params = AugmentationParams.disabled(sample_length=8)
        out = augment(self.seq, params, self.graph)
        assert np.array_equal(out.data, sample_frames(self.seq, 8, "uniform").data)

    def test_mirror_and_rotate(self):
        perm = mirror_permutation(self.graph)
        twice = mirror(mirror(self.seq, perm), perm)
        assert np.array_equal(twice.data, self.seq.data)
        turned = rotate(self.seq, 0.3)
        norms = np.linalg.norm(self.seq.data[..., :2], axis=-1)
        assert np.allclose(np.linalg.norm(turned.data[..., :2], axis=-1), norms)
        assert np.array_equal(turned.data[..., 2], self.seq.data[..., 2])

    def test_mirror_preserves_distances(self):
        perm = mirror_permutation(self.graph)
        mirrored = mirror(self.seq, perm)

        def pairwise(data):
            xy = data[..., :2]
            return np.linalg.norm(xy[:, :, None, :] - xy[:, None, :, :], axis=-1)

        # 镜像后节点 k 来自原节点 perm[k]
        original = pairwise(self.seq.data)[:, perm][:, :, perm]
        assert np.allclose(pairwise(mirrored.data), original, rtol=0, atol=1e-15)

    def test_rotate_round_trip(self):
        for theta in (0.3, -1.1, np.pi / 7, 2.5):
            back = rotate(rotate(self.seq, theta), -theta)
            assert np.max(np.abs(back.data - self.seq.data)) <= 1e-9

    def test_mirror_needs_graph(self):
        params = AugmentationParams(mirror_prob=1.0, rng_seed=1, sample_length=8)
        expect_error("STREAM_AUGMENT", augment, self.seq, params, None)

    def test_invalid_params(self):
        expect_error("STREAM_AUGMENT", AugmentationParams, mirror_prob=1.5)
        expect_error("STREAM_AUGMENT", AugmentationParams, scale_range=(1.2, 1.0))
        expect_error("STREAM_AUGMENT", AugmentationParams, temporal_sampling="shuffle")


def run_all_tests():
    return main_for(TestKeypointSequence, TestSampling, TestDerivedStreams, TestAugmentation)


if __name__ == "__main__":
    sys.exit(run_all_tests())
