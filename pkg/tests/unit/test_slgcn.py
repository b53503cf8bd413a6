#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SL-GCN 测试 - 解耦图卷积、STC 注意力、DropGraph 与梯度检查
"""
import sys
import math
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np
import torch
import torch.nn.functional as F

from tests.test_framework import logger, main_for, seven_node_graph
from logic.errors import ModelError
from logic.gradcheck import finite_difference_check
from logic.graph import default_slr_graph, normalize_adjacency
from logic.losses import LabelSmoothingCrossEntropy
from logic.slgcn import (
    SLGCN, SLGCNConfig, DecoupledGCN, DropGraph, STCAttention, TemporalConv, channel_plan, drop_graph,
    expected_drop_fraction, frozen_drop_masks, loss_and_grad, seed_probability, slgcn_forward,
)


def toy_config(**overrides):
    values = dict(num_classes=3, blocks=((3, 4, 1), (4, 4, 1)), groups=2, temporal_kernel=3,
                  attention=True, keep_prob=1.0, drop_first_block=2, activation="swish", seed=5)
    values.update(overrides)
    return SLGCNConfig(**values)


def toy_input(batch=2, frames=16, nodes=7, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(batch, 3, frames, nodes, generator=g, dtype=dtype)


def expect_model_error(tag, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except ModelError as e:
        assert e.tag == tag, f"期望 {tag}，实际 {e.tag}"
        return
    raise AssertionError(f"期望 ModelError {tag}")


class TestConfig:
    def test_channel_plan(self):
        plan = channel_plan((64, 128), (1, 2))
        assert plan == ((3, 64, 1), (64, 128, 2))
        default = SLGCNConfig.default(226)
        assert len(default.blocks) == 10
        assert default.out_channels == 256
        assert default.blocks[4] == (64, 128, 2) and default.blocks[7] == (128, 256, 2)

    def test_rejections(self):
        expect_model_error("MODEL_CONFIG", SLGCNConfig, num_classes=3, blocks=((3, 6, 1),), groups=4)
        expect_model_error("MODEL_CONFIG", SLGCNConfig, num_classes=3, blocks=((3, 4, 1), (8, 4, 1)), groups=2)
        expect_model_error("MODEL_CONFIG", SLGCNConfig, num_classes=3, blocks=((3, 4, 3),), groups=2)
        expect_model_error("MODEL_DROPGRAPH", SLGCNConfig, num_classes=3, blocks=((3, 4, 1),), groups=2,
                           keep_prob=0.0)
        expect_model_error("MODEL_CONFIG", channel_plan, (4, 4), (1,))


class TestLayers:
    def setup_method(self, method):
        self.graph = seven_node_graph()
        self.adjacency = normalize_adjacency(self.graph, "spatial")

    def test_decoupled_gcn_groups_share_initial_adjacency(self):
        logger.info("🧪 测试解耦图卷积")
        gcn = DecoupledGCN(3, 8, self.adjacency, groups=4)
        assert tuple(gcn.adjacency.shape) == (3, 4, 7, 7)
        per_channel = gcn.group_adjacency()
        assert tuple(per_channel.shape) == (3, 8, 7, 7)
        # 初始时每组邻接矩阵都等于归一化算子
        expected = torch.tensor(self.adjacency.partitions, dtype=torch.float32)
        for c in range(8):
            assert torch.allclose(per_channel[:, c], expected)
        out = gcn(toy_input(nodes=7))
        assert tuple(out.shape) == (2, 8, 16, 7)
        expect_model_error("MODEL_SHAPE", gcn, toy_input(nodes=6))

    def test_decoupled_gcn_matches_manual(self):
        gcn = DecoupledGCN(3, 4, self.adjacency, groups=2)
        with torch.no_grad():
            gcn.adjacency.add_(0.05 * torch.randn(gcn.adjacency.shape, generator=torch.Generator().manual_seed(2)))
        x = toy_input(batch=1, frames=2)
        out = gcn(x)
        W = gcn.weight.detach().reshape(3, 3, 4)  # in × K × out
        A = gcn.group_adjacency().detach()
        manual = torch.zeros_like(out)
        for k in range(3):
            for c in range(4):
                z = torch.einsum('i,itv->tv', W[:, k, c], x[0])
                manual[0, c] += z @ A[k, c]
        assert torch.allclose(out, manual, atol=1e-5)

    def test_attention_gates(self):
        logger.info("🧪 测试 STC 注意力门")
        attention = STCAttention(4, 7, temporal_kernel=3)
        x = toy_input(batch=2, frames=5).repeat(1, 2, 1, 1)[:, :4]
        spatial, temporal, channel = attention.gates(x)
        assert tuple(spatial.shape) == (2, 1, 1, 7)
        assert tuple(temporal.shape) == (2, 1, 5, 1)
        assert tuple(channel.shape) == (2, 4, 1, 1)
        # 时间门和通道门的最后一层零初始化
        assert torch.allclose(temporal, torch.full_like(temporal, 0.5))
        assert torch.allclose(channel, torch.full_like(channel, 0.5))
        assert ((spatial > 0) & (spatial < 1)).all()
        attention.force_gates(1.0)
        assert torch.equal(attention(x), x)
        attention.force_gates(0.5)
        assert torch.allclose(attention(x), x * 0.125)

    def test_dropgraph_identity_cases(self):
        x = toy_input()
        layer = DropGraph(self.graph, 0.5, 1, torch.Generator().manual_seed(0))
        layer.eval()
        assert torch.equal(layer(x), x)
        keep_all = DropGraph(self.graph, 1.0, 1)
        assert torch.equal(keep_all(x), x)
        assert torch.equal(drop_graph(x, self.graph, 0.5, training=False), x)

    def test_dropgraph_rescales_kept_nodes(self):
        layer = DropGraph(self.graph, 0.6, 1, torch.Generator().manual_seed(1))
        x = torch.ones(64, 1, 1, 7)
        out = layer(x)[:, 0, 0]
        for row in out:
            kept = row > 0
            if kept.any():
                assert abs(float(row.sum()) - 7.0) < 1e-5
                # 同一行的保留节点放大倍数相同
                assert torch.allclose(row[kept], row[kept][0].expand(int(kept.sum())))

    def test_dropgraph_expected_fraction(self):
        logger.info("🧪 测试 DropGraph 丢弃比例")
        graph = default_slr_graph()
        layer = DropGraph(graph, 0.9, 1, torch.Generator().manual_seed(3))
        masks = layer.sample_mask(4000)
        empirical = 1.0 - float(masks.mean())
        expected = expected_drop_fraction(graph, 0.9, 1)
        assert abs(empirical - expected) < 0.01, f"{empirical} vs {expected}"
        sizes = (graph.hop_distance <= 1).sum(axis=1)
        assert abs(seed_probability(graph, 0.9, 1) - 0.1 / sizes.mean()) < 1e-15

    def test_dropgraph_drops_whole_neighborhoods(self):
        layer = DropGraph(self.graph, 0.7, 1, torch.Generator().manual_seed(4))
        masks = layer.sample_mask(200)
        neighborhood = self.graph.hop_distance <= 1
        for mask in masks:
            dropped = set(torch.nonzero(mask == 0).flatten().tolist())
            # 丢弃集合是若干整块邻域的并集
            covered = [v for v in range(7) if set(np.flatnonzero(neighborhood[v])) <= dropped]
            union = set()
            for v in covered:
                union |= set(np.flatnonzero(neighborhood[v]).tolist())
            assert union == dropped


class TestLayerProperties:
    """各层的代数性质"""

    def setup_method(self, method):
        self.graph = seven_node_graph()
        self.adjacency = normalize_adjacency(self.graph, "spatial")

    def test_gcn_is_linear(self):
        gcn = DecoupledGCN(3, 4, self.adjacency, groups=2).double()
        x = toy_input(seed=1, dtype=torch.float64)
        y = toy_input(seed=2, dtype=torch.float64)
        with torch.no_grad():
            lhs = gcn(1.7 * x - 0.3 * y)
            rhs = 1.7 * gcn(x) - 0.3 * gcn(y)
        assert float((lhs - rhs).abs().max()) <= 1e-9

    def test_shared_group_adjacency_equals_single_group(self):
        logger.info("🧪 测试分组邻接相同时等价于单组")
        grouped = DecoupledGCN(3, 8, self.adjacency, groups=4).double()
        single = DecoupledGCN(3, 8, self.adjacency, groups=1).double()
        g = torch.Generator().manual_seed(6)
        shared = torch.tensor(self.adjacency.partitions, dtype=torch.float64)
        shared = shared + 0.05 * torch.randn(shared.shape, generator=g, dtype=torch.float64)
        with torch.no_grad():
            single.weight.copy_(grouped.weight)
            single.adjacency.copy_(shared.unsqueeze(1))
            grouped.adjacency.copy_(shared.unsqueeze(1).expand(-1, 4, -1, -1))
            x = toy_input(dtype=torch.float64)
            diff = (grouped(x) - single(x)).abs().max()
        assert float(diff) <= 1e-9
        logger.info("✅ 分组邻接测试通过")

    def test_temporal_conv_length(self):
        for kernel in (3, 9):
            for frames in (1, 9, 15, 16):
                x = toy_input(batch=1, frames=frames)
                assert TemporalConv(3, 4, kernel, stride=1)(x).shape[2] == frames
                assert TemporalConv(3, 4, kernel, stride=2)(x).shape[2] == math.ceil(frames / 2)

    def test_attention_output_in_cone_of_input(self):
        attention = STCAttention(4, 7, temporal_kernel=3).double()
        g = torch.Generator().manual_seed(8)
        with torch.no_grad():
            for p in attention.parameters():
                p.add_(0.5 * torch.randn(p.shape, generator=g, dtype=torch.float64))
            x = torch.randn(3, 4, 9, 7, generator=g, dtype=torch.float64)
            spatial, temporal, channel = attention.gates(x)
            gate = spatial * temporal * channel
            out = attention(x)
        assert ((gate >= 0) & (gate <= 1)).all()
        assert torch.allclose(out, x * gate, rtol=0, atol=1e-14)
        # 输出与输入同号，且幅值不超过输入
        assert (out * x >= 0).all()
        assert (out.abs() <= x.abs()).all()

    def test_constant_attention_gets_no_gradient(self):
        logger.info("🧪 测试未参与计算的注意力参数梯度为零")
        model = SLGCN(toy_config(), self.graph)
        for block in model.blocks:
            block.attention.force_gates(1.0)
        model.train()
        _, grads = loss_and_grad(model, toy_input(), torch.tensor([0, 1]), 0.1)
        attention_names = [name for name in grads if ".attention." in name]
        assert attention_names
        for name in attention_names:
            assert torch.equal(grads[name], torch.zeros_like(grads[name])), name
        assert grads["fc.weight"].abs().sum() > 0

        disabled = SLGCN(toy_config(attention=False), self.graph)
        assert not [name for name, _ in disabled.named_parameters() if ".attention." in name]
        logger.info("✅ 注意力梯度测试通过")


def bn_eval(bn, x):
    shape = [1, -1] + [1] * (x.dim() - 2)
    scale = bn.weight.view(shape) / torch.sqrt(bn.running_var.view(shape) + bn.eps)
    return (x - bn.running_mean.view(shape)) * scale + bn.bias.view(shape)


def swish_ref(x):
    return x / (1.0 + torch.exp(-x))


def gcn_ref(gcn, x):
    K, G, out = gcn.num_partitions, gcn.groups, gcn.out_channels
    per_group = out // G
    result = torch.zeros(x.shape[0], out, x.shape[2], x.shape[3], dtype=x.dtype)
    for k in range(K):
        z = torch.einsum('nctv,cd->ndtv', x, gcn.weight[:, k * out:(k + 1) * out])
        for g in range(G):
            channels = slice(g * per_group, (g + 1) * per_group)
            result[:, channels] += z[:, channels] @ gcn.adjacency[k, g]
    return result


def attention_ref(att, x):
    spatial = torch.sigmoid(F.conv1d(x.mean(2), att.conv_sa.weight, att.conv_sa.bias,
                                     padding=att.conv_sa.padding[0]))[:, :, None, :]
    y = x * spatial
    temporal = torch.sigmoid(F.conv1d(y.mean(3), att.conv_ta.weight, att.conv_ta.bias,
                                      padding=att.conv_ta.padding[0]))[:, :, :, None]
    y = y * temporal
    hidden = swish_ref(y.mean(dim=(2, 3)) @ att.fc1c.weight.T + att.fc1c.bias)
    channel = torch.sigmoid(hidden @ att.fc2c.weight.T + att.fc2c.bias)[:, :, None, None]
    return y * channel


def block_ref(block, x):
    down = x
    if not isinstance(block.gcn_down, torch.nn.Identity):
        down = bn_eval(block.gcn_down[1], torch.einsum('nctv,dc->ndtv', x, block.gcn_down[0].weight[:, :, 0, 0]))
    y = swish_ref(bn_eval(block.gcn_bn, gcn_ref(block.gcn, x)) + down)
    y = attention_ref(block.attention, y)
    conv = block.tcn.conv
    z = bn_eval(block.tcn.bn, F.conv2d(y, conv.weight, stride=conv.stride, padding=conv.padding))
    if block.residual is not None:
        assert isinstance(block.residual, torch.nn.Identity)
        z = z + x
    return swish_ref(z)


class TestReferenceForward:
    """逐步重算的前向与 slgcn_forward 一致"""

    def test_matches_step_by_step(self):
        logger.info("🧪 逐层重算 SL-GCN 前向")
        graph = seven_node_graph()
        model = SLGCN(toy_config(), graph).double()
        g = torch.Generator().manual_seed(9)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=torch.float64))
            for m in model.modules():
                if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
                    m.running_mean.copy_(0.1 * torch.randn(m.running_mean.shape, generator=g, dtype=torch.float64))
                    m.running_var.copy_(1.0 + 0.5 * torch.rand(m.running_var.shape, generator=g, dtype=torch.float64))
        model.eval()

        batch = np.random.default_rng(4).normal(size=(2, 16, 7, 3))
        scores = slgcn_forward(model, list(batch))

        with torch.no_grad():
            x = torch.tensor(batch).permute(0, 3, 1, 2)
            B, C, T, N = x.shape
            x = bn_eval(model.data_bn, x.permute(0, 3, 1, 2).reshape(B, N * C, T))
            x = x.reshape(B, N, C, T).permute(0, 2, 3, 1)
            for block in model.blocks:
                x = block_ref(block, x)
            expected = x.mean(dim=(2, 3)) @ model.fc.weight.T + model.fc.bias

        assert scores.shape == (2, 3)
        assert np.max(np.abs(scores - expected.numpy())) <= 1e-10
        logger.info("✅ 逐层重算一致")


class TestModel:
    def setup_method(self, method):
        self.graph = seven_node_graph()

    def test_batch_permutation_equivariance(self):
        model = SLGCN(toy_config(), self.graph).double()
        model.eval()
        x = toy_input(batch=5, dtype=torch.float64)
        perm = torch.tensor([3, 0, 4, 2, 1])
        with torch.no_grad():
            assert torch.allclose(model(x[perm]), model(x)[perm], rtol=0, atol=1e-12)

    def test_forward_shape_and_determinism(self):
        model = SLGCN(toy_config(), self.graph)
        model.eval()
        x = toy_input()
        a, b = model(x), model(x)
        assert tuple(a.shape) == (2, 3)
        assert torch.equal(a, b)
        scores = slgcn_forward(model, [np.zeros((16, 7, 3)), np.ones((16, 7, 3))])
        assert scores.shape == (2, 3) and scores.dtype == np.float64

    def test_node_mismatch(self):
        model = SLGCN(toy_config(), self.graph)
        expect_model_error("MODEL_NODE_MISMATCH", model, toy_input(nodes=6))
        expect_model_error("MODEL_SHAPE", model, torch.zeros(2, 16, 7))

    def test_same_seed_same_weights(self):
        torch.manual_seed(0)
        a = SLGCN(toy_config(), self.graph)
        torch.manual_seed(0)
        b = SLGCN(toy_config(), self.graph)
        for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), name

    def test_zero_init_classifier(self):
        model = SLGCN(toy_config(zero_init_classifier=True), self.graph)
        model.eval()
        logits = model(toy_input())
        assert torch.equal(logits, torch.zeros_like(logits))
        loss = LabelSmoothingCrossEntropy(0.1)(logits, torch.tensor([0, 2]))
        assert abs(loss.item() - math.log(3)) < 1e-6

    def test_dropgraph_placement(self):
        model = SLGCN(toy_config(keep_prob=0.9, drop_first_block=2), self.graph)
        assert model.blocks[0].drop is None
        assert isinstance(model.blocks[1].drop, DropGraph)
        assert len(model.drop_layers()) == 1
        assert SLGCN(toy_config(keep_prob=1.0), self.graph).drop_layers() == []

    def test_frozen_masks_repeatable(self):
        model = SLGCN(toy_config(keep_prob=0.5, drop_first_block=1), self.graph)
        model.train()
        x = toy_input()
        with frozen_drop_masks(model):
            a = model(x)
            b = model(x)
        assert torch.allclose(a, b)
        for layer in model.drop_layers():
            assert not layer.frozen

    def test_loss_and_grad(self):
        model = SLGCN(toy_config(keep_prob=0.8), self.graph)
        model.train()
        loss, grads = loss_and_grad(model, toy_input(), torch.tensor([1, 2]), 0.1)
        assert math.isfinite(loss)
        names = {name for name, _ in model.named_parameters()}
        assert set(grads) == names
        for name, g in grads.items():
            assert torch.isfinite(g).all(), name


class TestGradientFidelity:
    """有限差分梯度检查：7节点图、T=16、2个block、G=2、注意力开启"""

    def test_slgcn_gradients(self):
        logger.info("🧪 SL-GCN 有限差分梯度检查")
        torch.manual_seed(0)
        graph = seven_node_graph()
        model = SLGCN(toy_config(keep_prob=0.8, drop_first_block=2), graph).double()
        with torch.no_grad():
            g = torch.Generator().manual_seed(1)
            for p in model.parameters():
                p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=torch.float64))
        model.train()
        x = toy_input(dtype=torch.float64)
        labels = torch.tensor([0, 2])
        criterion = LabelSmoothingCrossEntropy(0.1)

        start = time.time()
        with frozen_drop_masks(model):
            errors = finite_difference_check(model, lambda m: criterion(m(x), labels), eps=1e-5)
        elapsed = time.time() - start

        assert len(errors) == len(list(model.parameters()))
        worst = max(errors.items(), key=lambda kv: kv[1])
        logger.info(f"最大相对误差 {worst[1]:.2e} ({worst[0]}), 用时 {elapsed:.1f}s")
        assert worst[1] < 1e-4, f"{worst[0]} 相对误差 {worst[1]}"
        assert elapsed < 300
        logger.info("✅ SL-GCN 梯度检查通过")

    def test_requires_float64(self):
        model = SLGCN(toy_config(), seven_node_graph())
        expect_model_error("MODEL_DTYPE", finite_difference_check, model, lambda m: m(toy_input()).sum())


def run_all_tests():
    return main_for(TestConfig, TestLayers, TestLayerProperties, TestReferenceForward, TestModel,
                    TestGradientFidelity)


if __name__ == "__main__":
    sys.exit(run_all_tests())
