#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练计划、空运行、微调停止条件与发散处理
"""
import sys
import shutil
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

import numpy as np

from tests.test_framework import (
    TINY_SLGCN, TINY_SSTCN, logger, main_for, make_synthetic_dataset, write_experiment_config,
)
from logic.checkpoint import read_checkpoint
from logic.config import load_config
from logic.database import RunDatabase
from logic.errors import DataError, TrainingError
from logic.file_formats import read_manifest, read_scores
import logic.trainer as trainer_module
from logic.trainer import (
    BEST_CHECKPOINT, CURVE_FILE, DIVERGED_CHECKPOINT, FINETUNED_CHECKPOINT, evaluate, finetune, read_curve, train,
)


def expect_training_error(tag, func, *args, **kwargs):
    try:
        func(*args, **kwargs)
    except TrainingError as e:
        assert e.tag == tag, f"期望 {tag}，实际 {e.tag}"
        return e
    raise AssertionError(f"期望 TrainingError {tag}")


class TestSchedule:
    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_schedule_test_"))
        self.outputs = make_synthetic_dataset(self.temp_dir / "data", num_classes=2, samples_per_class=6,
                                              frames=16)

    def teardown_method(self, method):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_default_milestones(self):
        logger.info("🧪 测试默认里程碑下的学习率切换（101个epoch）")
        values = dict(TINY_SSTCN, num_classes=2, epochs=101, lr=0.003, weight_decay=0.0001)
        values.pop("milestones")
        cfg = write_experiment_config(self.temp_dir / "exp.cfg", self.outputs["features_manifest"], **values)
        result = train(load_config(cfg), self.temp_dir / "run")

        curve = result.curve
        assert len(curve) == 101
        assert [r.epoch for r in curve] == list(range(101))
        assert curve[0].lr == 0.003 and curve[49].lr == 0.003
        assert curve[49].weight_decay == 0.0001
        assert curve[50].lr == 1e-4 and curve[99].lr == 1e-4
        assert curve[100].lr == 1e-5
        assert all(r.weight_decay == 0.0 for r in curve[50:])
        assert read_curve(self.temp_dir / "run" / CURVE_FILE) == curve

        with RunDatabase.for_output_dir(self.temp_dir / "run") as db:
            rows = db.get_curve(result.run_id)
            run = db.get_run(result.run_id)
        assert len(rows) == 101
        assert rows[50]["lr"] == 1e-4
        assert run["status"] == "finished"
        logger.info("✅ 里程碑测试通过")


class TestZeroEpochs:
    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_zero_test_"))
        self.outputs = make_synthetic_dataset(self.temp_dir / "data", num_classes=2, samples_per_class=5,
                                              frames=16, features=False)

    def teardown_method(self, method):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_zero_epochs_writes_initial_checkpoint(self):
        logger.info("🧪 测试0个epoch的空运行")
        values = dict(TINY_SLGCN, num_classes=2, epochs=0, sample_length=16)
        values.pop("milestones")
        cfg = write_experiment_config(self.temp_dir / "exp.cfg", self.outputs["manifest"], **values)
        result = train(load_config(cfg), self.temp_dir / "run")

        assert result.curve == [] and result.best_epoch is None and result.stop_loss is None
        assert (self.temp_dir / "run" / BEST_CHECKPOINT).exists()
        assert read_curve(self.temp_dir / "run" / CURVE_FILE) == []
        meta = read_checkpoint(result.checkpoint).meta
        assert meta["best_epoch"] is None

        scores_out = self.temp_dir / "eval" / "val.csv"
        report = evaluate(result.checkpoint, "val", scores_out)
        assert report.num_samples == 2
        ids, scores = read_scores(scores_out)
        assert scores.shape == (2, 2)

        expect_training_error("FINETUNE_NO_STOP_LOSS", finetune, result.checkpoint)
        logger.info("✅ 空运行测试通过")


class TestFinetune:
    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_finetune_test_"))
        self.outputs = make_synthetic_dataset(self.temp_dir / "data", num_classes=2, samples_per_class=8,
                                              frames=16)
        values = dict(TINY_SSTCN, num_classes=2, epochs=3)
        self.cfg = write_experiment_config(self.temp_dir / "exp.cfg", self.outputs["features_manifest"], **values)
        self.result = train(load_config(self.cfg), self.temp_dir / "run")

    def teardown_method(self, method):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_infinite_stop_loss_stops_after_one_epoch(self):
        done = finetune(self.result.checkpoint, stop_loss=float("inf"))
        assert done.epochs_run == 1 and done.reached
        assert done.checkpoint == self.temp_dir / "run" / FINETUNED_CHECKPOINT
        assert done.checkpoint.exists()
        assert read_checkpoint(done.checkpoint).meta["stop_loss"] == float("inf")

    def test_unreachable_stop_loss_runs_to_cap(self):
        # 标签平滑使损失始终大于0
        done = finetune(self.result.checkpoint, stop_loss=0.0, cap=2, output_dir=self.temp_dir / "ft")
        assert done.epochs_run == 2 and not done.reached
        assert len(done.losses) == 2 and done.final_loss == done.losses[-1]
        assert (self.temp_dir / "ft" / FINETUNED_CHECKPOINT).exists()

    def test_recorded_stop_loss(self):
        logger.info("🧪 测试使用检查点中记录的 stop_loss")
        assert self.result.stop_loss is not None
        done = finetune(self.result.checkpoint, cap=3)
        assert done.stop_loss == self.result.stop_loss
        if done.reached:
            assert done.final_loss <= done.stop_loss + 1e-6
        else:
            assert done.epochs_run == 3

    def test_invalid_cap(self):
        expect_training_error("FINETUNE_CAP", finetune, self.result.checkpoint, stop_loss=1.0, cap=0)


class TestDivergenceAndReport:
    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_diverge_test_"))
        self.outputs = make_synthetic_dataset(self.temp_dir / "data", num_classes=2, samples_per_class=12,
                                              frames=16, features=False)

    def teardown_method(self, method):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def config(self, **values):
        values = dict(TINY_SLGCN, num_classes=2, sample_length=16, batch_size=4, **values)
        return load_config(write_experiment_config(self.temp_dir / "exp.cfg", self.outputs["manifest"], **values))

    def test_divergence_saves_last_finite_state(self):
        logger.info("🧪 测试学习率过大时的发散处理")
        config = self.config(epochs=5, lr=1e38)
        expect_training_error("TRAIN_DIVERGED", train, config, self.temp_dir / "run")
        saved = read_checkpoint(self.temp_dir / "run" / DIVERGED_CHECKPOINT)
        assert saved.config_text == config.text
        with RunDatabase.for_output_dir(self.temp_dir / "run") as db:
            run = db.get_run(1)
        assert run["status"] == "diverged"
        logger.info("✅ 发散测试通过")

    def test_html_report(self):
        result = train(self.config(epochs=2), self.temp_dir / "run")
        report_out = self.temp_dir / "report" / "val.html"
        report = evaluate(result.checkpoint, "val", self.temp_dir / "val.csv", report_out=report_out)
        html = report_out.read_text(encoding='utf-8')
        assert "<table>" in html
        assert report.num_samples == report.num_labeled == 4
        md_out = self.temp_dir / "report" / "val.md"
        evaluate(result.checkpoint, "val", self.temp_dir / "val2.csv", report_out=md_out)
        assert md_out.read_text(encoding='utf-8').startswith("#")
        # 同一检查点两次推理得到相同分数
        assert np.array_equal(read_scores(self.temp_dir / "val.csv")[1], read_scores(self.temp_dir / "val2.csv")[1])


class TestFailureLogging:
    """数据损坏导致的失败写入事件日志，运行记录标记为 failed"""

    def setup_method(self, method):
        self.temp_dir = Path(tempfile.mkdtemp(prefix="samslr_failure_test_"))
        self.outputs = make_synthetic_dataset(self.temp_dir / "data", num_classes=2, samples_per_class=6,
                                              frames=16, features=False)
        values = dict(TINY_SLGCN, num_classes=2, sample_length=16, batch_size=4, epochs=1)
        self.config = load_config(write_experiment_config(self.temp_dir / "exp.cfg", self.outputs["manifest"],
                                                          **values))
        self.failures = []
        trainer_module.logger.log_failure = lambda operation, error, tag="UNKNOWN": \
            self.failures.append((operation, tag))

    def teardown_method(self, method):
        del trainer_module.logger.log_failure
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def truncate_first_train_file(self):
        row = read_manifest(self.outputs["manifest"], "train")[0]
        path = self.outputs["manifest"].parent / row.relative_path
        path.write_bytes(path.read_bytes()[:-8])

    def test_train_failure(self):
        logger.info("🧪 测试训练中数据损坏的失败记录")
        self.truncate_first_train_file()
        try:
            train(self.config, self.temp_dir / "run")
            raise AssertionError("应该因数据损坏失败")
        except DataError as e:
            assert e.tag == "DATA_TRUNCATED"
        assert self.failures == [("训练", "DATA_TRUNCATED")]
        with RunDatabase.for_output_dir(self.temp_dir / "run") as db:
            assert db.get_run(1)["status"] == "failed"
        logger.info("✅ 训练失败记录测试通过")

    def test_finetune_failure(self):
        result = train(self.config, self.temp_dir / "run")
        assert self.failures == []
        self.truncate_first_train_file()
        try:
            finetune(result.checkpoint, stop_loss=0.0, cap=2)
            raise AssertionError("应该因数据损坏失败")
        except DataError as e:
            assert e.tag == "DATA_TRUNCATED"
        assert self.failures == [("微调", "DATA_TRUNCATED")]


def run_all_tests():
    return main_for(TestSchedule, TestZeroEpochs, TestFinetune, TestDivergenceAndReport, TestFailureLogging)


if __name__ == "__main__":
    sys.exit(run_all_tests())
