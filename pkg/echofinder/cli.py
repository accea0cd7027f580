from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional

from .config import load_config, resolve_threads
from .errors import DataError, EchoFinderError, UsageError
from .orchestrator import ALL_SPLITS, PipelineRunner
from .reporting import framework_table, metrics_table

logger = logging.getLogger("echofinder")

SPLIT_CHOICES = ("train", "val", "test", ALL_SPLITS)


class _Parser(argparse.ArgumentParser):
    """参数错误抛出 UsageError，由 main 统一映射为退出码 1。"""

    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _channel(value: str) -> int | str:
    return int(value) if value.isdigit() else value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="echofinder", description="多频回波图鲱鱼群检测命令行工具")
    parser.add_argument("--config", help="配置文件路径（YAML 或 JSON），缺省时使用内置默认值")
    parser.add_argument("--log-level", default="INFO", help="日志级别")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="生成合成数据集")
    synth.add_argument("--out", required=True, help="数据集输出目录")
    synth.add_argument("--n", type=int, default=100, help="回波图数量")
    synth.add_argument("--seed", type=int, help="数据集种子，缺省取 synth.seed")

    extract = sub.add_parser("extract", help="提取 ROI")
    extract.add_argument("--in", dest="source", required=True, help="数据集目录或单个 .ech 文件")
    extract.add_argument("--out", required=True, help="ROI 输出 JSON")
    extract.add_argument("--split", choices=SPLIT_CHOICES, help="只处理某个划分")

    mine = sub.add_parser("mine", help="由 ROI 与标注生成训练样本")
    mine.add_argument("--in", dest="source", required=True, help="数据集目录")
    mine.add_argument("--out", required=True, help="样本输出目录")
    mine.add_argument("--split", choices=("train", "val"), action="append", help="参与挖掘的划分，可重复，缺省 train 与 val")

    train = sub.add_parser("train", help="训练分类器")
    train.add_argument("--samples", required=True, help="mine 输出的样本目录")
    train.add_argument("--model", choices=("linear", "cnn"), required=True, help="模型类型")
    train.add_argument("--out", required=True, help="模型文件输出路径")
    train.add_argument("--seed", type=int, help="训练种子，缺省取配置")

    detect = sub.add_parser("detect", help="提取 ROI 并分类")
    detect.add_argument("--in", dest="source", required=True, help="数据集目录或单个 .ech 文件")
    detect.add_argument("--model", required=True, help="模型文件")
    detect.add_argument("--out", required=True, help="检测结果 JSON")
    detect.add_argument("--split", choices=SPLIT_CHOICES, default="test", help="处理的划分")

    evaluate = sub.add_parser("evaluate", help="评估 ROI 提取与整体框架")
    evaluate.add_argument("--in", dest="source", required=True, help="数据集目录")
    evaluate.add_argument("--out", required=True, help="评估结果 JSON")
    evaluate.add_argument("--iou", type=float, nargs="+", help="ROI 提取评估的 IoU 阈值列表（升序）")
    evaluate.add_argument("--model", action="append", default=[], help="待比较的模型文件，可重复")
    evaluate.add_argument("--detections", help="detect 输出的检测结果 JSON")
    evaluate.add_argument("--classifier", choices=("oracle", "none"), help="上下界参照分类器")
    evaluate.add_argument("--split", choices=SPLIT_CHOICES, help="评估的划分")

    render = sub.add_parser("render", help="渲染回波图 PNG")
    render.add_argument("--in", dest="source", required=True, help="数据集目录或单个 .ech 文件")
    render.add_argument("--out", required=True, help="PNG 输出目录")
    render.add_argument("--detections", help="叠加的检测结果 JSON")
    render.add_argument("--channel", type=_channel, help="渲染的通道序号或通道名")
    render.add_argument("--stages", action="store_true", help="同时输出各处理阶段的中间图")
    render.add_argument("--split", choices=SPLIT_CHOICES, help="只渲染某个划分")
    return parser


def _run(args: argparse.Namespace) -> int:
    if args.command == "synth" and args.n < 1:
        raise UsageError(f"--n 必须 >= 1：{args.n}")
    config = load_config(args.config)
    runner = PipelineRunner(config, workers=resolve_threads())
    if args.command == "synth":
        runner.synth(args.n, config.synth.seed if args.seed is None else args.seed, args.out)
    elif args.command == "extract":
        runner.extract(args.source, args.out, args.split)
    elif args.command == "mine":
        runner.mine(args.source, args.out, tuple(args.split or ("train", "val")))
    elif args.command == "train":
        runner.train(args.samples, args.model, args.out, args.seed)
    elif args.command == "detect":
        runner.detect(args.source, args.model, args.out, args.split)
    elif args.command == "evaluate":
        roi_rows, reports = runner.evaluate(
            args.source,
            args.out,
            taus=args.iou,
            model_paths=args.model,
            detections_path=args.detections,
            classifier=args.classifier,
            split=args.split,
        )
        sys.stdout.write(metrics_table(roi_rows))
        if reports:
            sys.stdout.write("\n" + framework_table(reports))
    elif args.command == "render":
        runner.render(args.source, args.out, args.detections, args.channel, args.stages, args.split)
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _run(args)
    except UsageError as exc:
        print(f"用法错误：{exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"数据错误：{exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"文件错误：{exc}", file=sys.stderr)
        return DataError.exit_code
    except Exception as exc:
        logger.debug("未处理的异常", exc_info=True)
        print(f"内部错误：{type(exc).__name__}: {exc}", file=sys.stderr)
        return EchoFinderError.exit_code


if __name__ == "__main__":
    sys.exit(main())
