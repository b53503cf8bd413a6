#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试框架 - 各测试文件共用的运行函数和小型测试夹具

每个测试文件既可以被 pytest 收集，也可以直接用 python 运行（调用 run_test_classes）。
"""
import os
import sys
import logging
import traceback
from pathlib import Path

# 设置测试模式
os.environ['SAMSLR_TEST_MODE'] = 'true'

# 添加项目根目录到路径
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("tests")


def run_test_classes(*classes) -> bool:
    """依次运行每个类的 test_* 方法，前后调用 setup_method / teardown_method"""
    passed = 0
    failed = 0
    for cls in classes:
        names = sorted(name for name in dir(cls) if name.startswith("test_"))
        for name in names:
            instance = cls()
            method = getattr(instance, name)
            logger.info(f"\n{'=' * 50}")
            logger.info(f"运行测试: {cls.__name__}.{name}")
            logger.info(f"{'=' * 50}")
            try:
                if hasattr(instance, "setup_method"):
                    instance.setup_method(method)
                method()
                passed += 1
                logger.info(f"✅ {name} 通过")
            except Exception as e:
                failed += 1
                logger.error(f"❌ {name} 失败: {e}")
                logger.error(traceback.format_exc())
            finally:
                if hasattr(instance, "teardown_method"):
                    try:
                        instance.teardown_method(method)
                    except Exception as e:
                        logger.error(f"清理测试环境时出错: {e}")

    logger.info(f"\n{'=' * 50}")
    logger.info(f"📊 测试结果: {passed} 通过, {failed} 失败")
    logger.info(f"{'=' * 50}")
    return failed == 0


def main_for(*classes) -> int:
    return 0 if run_test_classes(*classes) else 1


# ---------------------------------------------------------------------------
# 夹具
# ---------------------------------------------------------------------------

def seven_node_graph():
    """
    7节点小图：躯干 0，左右臂 1-2 / 3-4，左右手 5 / 6

        1 - 0 - 3
        |       |
        2       4
        |       |
        5       6
    """
    from logic.graph import graph_from_edges

    labels = ("neck", "left_shoulder", "left_elbow", "right_shoulder", "right_elbow", "left_hand", "right_hand")
    edges = [(0, 1), (1, 2), (2, 5), (0, 3), (3, 4), (4, 6)]
    return graph_from_edges(7, edges, bones=edges, root=0, labels=labels)


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')
    return path


def write_experiment_config(path, manifest, **values) -> Path:
    """写一个 key = value 实验配置，manifest 之外的键由 values 给出"""
    lines = [f"manifest = {manifest}"]
    lines += [f"{key} = {value}" for key, value in values.items()]
    return write_text(path, "\n".join(lines) + "\n")


def write_synthetic_spec(path, **values) -> Path:
    return write_text(path, "\n".join(f"{k} = {v}" for k, v in values.items()) + "\n")


def make_synthetic_dataset(out_dir, **overrides):
    """生成合成数据集，特征片段缩小到 8 帧 × 6×6 以配合 TINY_SSTCN"""
    from logic.synthetic import SyntheticSpec, generate_synthetic

    values = dict(num_classes=4, samples_per_class=50, frames=32, seed=2, feature_frames=8, feature_size=6)
    values.update(overrides)
    return generate_synthetic(SyntheticSpec(**values), out_dir)


# 桌面规模的 SL-GCN 与 SSTCN 训练配置
TINY_SLGCN = dict(
    net="slgcn", stream="joint", num_classes=4, seed=3,
    epochs=40, batch_size=16, lr=0.003, weight_decay=0.0001, milestones="", optimizer="adam",
    sample_length=32, augment="false",
    channels="16,16,32", strides="1,2,1", groups=2, temporal_kernel=5, keep_prob=1.0,
)

TINY_SSTCN = dict(
    net="sstcn", num_classes=4, seed=3,
    epochs=30, batch_size=16, lr=0.003, weight_decay=0.0001, milestones="", optimizer="adam",
    frames=8, keypoints=33, feature_size=6, dropout=0.0, temporal_width=16, spatial_expansion=2,
    classifier_hidden=32,
)
