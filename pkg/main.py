#!/usr/bin/env python3
"""
samslr 命令行入口

    python main.py prepare  --manifest M --out DIR
    python main.py synth    --spec S --out DIR
    python main.py train    --net {slgcn,sstcn} --stream {joint,bone,joint_motion,bone_motion} --config C
    python main.py eval     --ckpt P --split {train,val,test} --scores-out F.csv
    python main.py fuse     --config fusion.cfg --out pred.csv
    python main.py tune     --scores DIR --labels L.csv
    python main.py finetune --ckpt P [--config C] [--stop-loss x]

成功时退出码为0；被拒绝的输入输出一行 `error:<TAG>: <message>` 并以2退出，其他异常以1退出。
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from logic.constants import APP_LOG_FILE, STREAMS, TUNE_GRID
from logic.errors import SamSlrError, DataError
from version import APP_NAME, get_version_string

logger = logging.getLogger("samslr")


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(APP_LOG_FILE, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ]
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description="骨架手语识别：SL-GCN / SSTCN 与多模态融合")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {get_version_string()}")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="校验清单并写出裁剪图上的关键点文件")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layout", help="全身布局文件（默认133节点布局）")
    p.add_argument("--selection", help="节点选择文件（默认27节点选择）")

    p = sub.add_parser("synth", help="生成合成数据集")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="训练一个网络")
    p.add_argument("--net", choices=("slgcn", "sstcn"), required=True)
    p.add_argument("--stream", choices=STREAMS, default=None)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="输出目录（默认为配置中的 output_dir）")

    p = sub.add_parser("eval", help="评估检查点并导出分数")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), required=True)
    p.add_argument("--scores-out", required=True)
    p.add_argument("--manifest", help="替换训练时的清单")
    p.add_argument("--report-out", help="评估报告（.md 或 .html）")

    p = sub.add_parser("fuse", help="按融合配置加权融合分数")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="预测结果 CSV")
    p.add_argument("--scores-out", help="融合后的分数 CSV")

    p = sub.add_parser("tune", help="在验证集上搜索融合权重")
    p.add_argument("--scores", required=True, help="目录，每个模态一个 <模态>.csv")
    p.add_argument("--labels", required=True)
    p.add_argument("--grid", help="逗号分隔的候选权重，默认 0,0.1,...,1")
    p.add_argument("--out", help="写出的融合配置（默认 <scores>/fusion.cfg）")

    p = sub.add_parser("finetune", help="在训练集+验证集上微调")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--stop-loss", type=float)
    p.add_argument("--cap", type=int)
    p.add_argument("--out")
    return parser


def cmd_prepare(args):
    from logic.dataset import prepare_dataset
    from logic.graph import load_layout, load_selection

    graph = load_layout(args.layout) if args.layout else None
    selection = load_selection(args.selection) if args.selection else None
    rows = prepare_dataset(args.manifest, args.out, graph, selection)
    print(f"prepared {len(rows)} samples -> {Path(args.out) / 'manifest.csv'}")


def cmd_synth(args):
    from logic.synthetic import generate_synthetic, load_synthetic_spec

    outputs = generate_synthetic(load_synthetic_spec(args.spec), args.out)
    for name, path in outputs.items():
        print(f"{name}: {path}")


def cmd_train(args):
    from logic.config import load_config
    from logic.trainer import train

    overrides = {"net": args.net, "stream": args.stream, "seed": args.seed, "epochs": args.epochs}
    config = load_config(args.config, overrides)
    result = train(config, args.out)
    print(f"best checkpoint: {result.checkpoint} (epoch {result.best_epoch}, val_top1 {result.best_val_top1})")


def cmd_eval(args):
    from logic.trainer import evaluate

    report = evaluate(args.ckpt, args.split, args.scores_out, args.manifest, args.report_out)
    print(f"{args.split}: top1={report.top1:.4f} top{report.top_k}={report.top5:.4f} samples={report.num_samples}")


def cmd_fuse(args):
    import numpy as np
    from logic.config import load_fusion_config
    from logic.ensemble import EnsembleWeights, accuracy, align_scores, fuse, predict
    from logic.file_formats import read_labels, read_scores, write_scores
    from logic.unified_logger import get_unified_logger

    entries, labels_path = load_fusion_config(args.config)
    score_sets = {e.modality: read_scores(e.scores) for e in entries}
    ids, aligned = align_scores(score_sets)
    weights = EnsembleWeights.of([e.modality for e in entries], [e.alpha for e in entries])
    fused = fuse(aligned, weights)
    predictions = predict(fused)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["sample_id", "prediction"])
        writer.writerows(zip(ids, (int(p) for p in predictions)))
    if args.scores_out:
        write_scores(args.scores_out, ids, fused)
    get_unified_logger('ensemble').log_fusion(weights.as_dict(), len(ids))

    if labels_path is not None:
        labels = read_labels(labels_path)
        missing = [sid for sid in ids if sid not in labels]
        if missing:
            raise DataError(f"标签文件缺少样本 {missing[:5]}", "DATA_LABEL")
        acc = accuracy(fused, np.array([labels[sid] for sid in ids]))
        print(f"fused top1={acc:.4f}")
    print(f"predictions: {out}")


def cmd_tune(args):
    import numpy as np
    from logic.config import FusionEntry, as_float_list, write_fusion_config
    from logic.ensemble import align_scores, tune_weights
    from logic.file_formats import read_labels, read_scores

    score_dir = Path(args.scores)
    files = sorted(score_dir.glob("*.csv")) if score_dir.is_dir() else []
    if not files:
        raise DataError(f"{score_dir} 中没有分数文件", "DATA_FILE_MISSING")
    labels = read_labels(args.labels)
    ids, aligned = align_scores({f.stem: read_scores(f) for f in files})
    missing = [sid for sid in ids if sid not in labels]
    if missing:
        raise DataError(f"标签文件缺少样本 {missing[:5]}", "DATA_LABEL")
    grid = as_float_list(args.grid) if args.grid else TUNE_GRID
    weights, acc = tune_weights(aligned, np.array([labels[sid] for sid in ids]), grid)

    out = Path(args.out) if args.out else score_dir / "fusion.cfg"
    entries = [FusionEntry(f.stem, f.resolve(), weights.as_dict()[f.stem]) for f in files]
    write_fusion_config(out, entries, Path(args.labels).resolve())
    print(" ".join(f"{m}={a:g}" for m, a in weights.pairs) + f" val_top1={acc:.4f}")
    print(f"fusion config: {out}")


def cmd_finetune(args):
    from logic.trainer import finetune

    result = finetune(args.ckpt, args.config, args.stop_loss, args.cap, args.out)
    print(f"finetuned: {result.checkpoint} epochs={result.epochs_run} loss={result.final_loss:.6f} "
          f"stop_loss={result.stop_loss:g} reached={result.reached}")


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "fuse": cmd_fuse,
    "tune": cmd_tune,
    "finetune": cmd_finetune,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    from logic.setup import initialize_app
    from logic.event_logger import get_event_logger

    if not initialize_app():
        print("error:DEPENDENCY_MISSING: 缺少必要的依赖，请运行 pip install -r requirements.txt", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
        return 0
    except SamSlrError as e:
        logger.error(f"{args.command} 失败: {e.one_line()}")
        get_event_logger().log_error_event(e.message, e.tag)
        print(e.one_line(), file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"{args.command} 时发生未预期的错误")
        text = " ".join(str(e).split())
        print(f"error:INTERNAL: {type(e).__name__}: {text}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
