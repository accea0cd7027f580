from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .classifiers import OracleRoiClassifier, RejectAllClassifier, RoiClassifier, classifier_for_model
from .cnn import cnn_predict, train_cnn
from .config import Config, config_hash
from .echogram_io import (
    DATASET_MANIFEST,
    AnnotationFile,
    LoadedEchogram,
    load_dataset,
    load_echogram,
    read_annotations,
)
from .errors import DataError, TrainingDataError, UsageError
from .evaluation import (
    EchogramDetections,
    FrameworkReport,
    detect_echogram,
    evaluate_detections,
    evaluate_rois,
    summarize_classification,
)
from .linear import LinearModel, train_linear
from .mining import balance_samples, mine_echogram, read_samples, write_samples
from .model_store import Model, load_model, model_kind, save_model
from .models import MetricRow, RunManifest, Sample
from .parallel import run_ordered
from .rendering import detection_overlays, render_png, render_stages
from .reporting import DetectionsWriter, MetricsReportWriter, RoiWriter, read_detections, write_run_manifest
from .roi_extractor import extract_rois, extract_stages
from .synth import generate_dataset

logger = logging.getLogger(__name__)

ALL_SPLITS = "all"


def load_inputs(path: str | Path, split: Optional[str] = None) -> List[LoadedEchogram]:
    """输入可以是带清单的数据集目录，也可以是单个 .ech 文件（同名 .json 存在时一并读入标注）。"""
    source = Path(path)
    if source.is_dir():
        if not (source / DATASET_MANIFEST).exists():
            raise DataError(f"{source} 下没有 {DATASET_MANIFEST}")
        return load_dataset(source, None if split in (None, ALL_SPLITS) else split)
    if not source.exists():
        raise DataError(f"输入不存在：{source}")
    echogram = load_echogram(source)
    sidecar = source.with_suffix(".json")
    if sidecar.exists():
        annotations = read_annotations(sidecar, echogram)
    else:
        annotations = AnnotationFile(source.stem, [])
    return [LoadedEchogram(annotations.echogram_id or source.stem, "test", echogram, annotations)]


class PipelineRunner:
    """各子命令的批处理实现；逐回波图的工作交给线程池，结果按输入顺序汇总。"""

    def __init__(self, config: Config, workers: int = 1):
        self.config = config
        self.workers = max(1, workers)

    def _finish(
        self,
        command: str,
        started: float,
        inputs: Sequence[str | Path],
        outputs: Sequence[str | Path],
        seed: Optional[int] = None,
        **extra: object,
    ) -> RunManifest:
        manifest = RunManifest(
            command=command,
            config_hash=config_hash(self.config),
            input_paths=[str(p) for p in inputs],
            seed=seed,
            tool_version=__version__,
            output_paths=[str(p) for p in outputs],
            duration_s=round(time.perf_counter() - started, 3),
            extra=dict(extra),
        )
        path = write_run_manifest(manifest, outputs[0])
        logger.info("%s 完成，用时 %.2f s，运行清单 %s", command, manifest.duration_s, path)
        return manifest

    def synth(self, n_echograms: int, seed: int, out_dir: str | Path) -> RunManifest:
        if n_echograms < 1:
            raise UsageError(f"--n 必须 >= 1：{n_echograms}")
        started = time.perf_counter()
        records = generate_dataset(self.config.synth, n_echograms, seed, out_dir, self.workers)
        counts = {s: sum(r.split == s for r in records) for s in ("train", "val", "test")}
        return self._finish("synth", started, [], [out_dir], seed, splits=counts)

    def extract(self, source: str | Path, out_path: str | Path, split: Optional[str] = None) -> Dict[str, list]:
        started = time.perf_counter()
        items = load_inputs(source, split)
        rois = run_ordered(
            lambda item: extract_rois(item.echogram, self.config.roi, self.config.normalization),
            items,
            self.workers,
        )
        RoiWriter(out_path).write([(item.echogram_id, boxes) for item, boxes in zip(items, rois)])
        logger.info("%s 张回波图共提取 %s 个 ROI，已写入 %s", len(items), sum(map(len, rois)), out_path)
        self._finish("extract", started, [source], [out_path], n_rois=sum(map(len, rois)))
        return {item.echogram_id: boxes for item, boxes in zip(items, rois)}

    def mine(self, source: str | Path, out_dir: str | Path, splits: Sequence[str] = ("train", "val")) -> List[Sample]:
        started = time.perf_counter()
        cfg = self.config.mining
        balanced: List[Sample] = []
        frequencies: Optional[Tuple[float, ...]] = None
        for offset, split in enumerate(splits):
            items = load_inputs(source, split)
            if not items:
                logger.warning("划分 %s 中没有回波图", split)
                continue
            frequencies = frequencies or items[0].echogram.frequencies_khz
            mined = run_ordered(
                lambda item: mine_echogram(
                    item.echogram,
                    item.gt,
                    self.config.roi,
                    cfg,
                    self.config.normalization,
                    item.echogram_id,
                    item.split,
                ),
                items,
                self.workers,
            )
            pool = [sample for group in mined for sample in group]
            kept = balance_samples(pool, cfg.neg_per_pos, cfg.seed + offset)
            logger.info(
                "划分 %s：候选样本 %s 个，均衡后正样本 %s 个、负样本 %s 个",
                split,
                len(pool),
                sum(s.positive for s in kept),
                sum(not s.positive for s in kept),
            )
            balanced.extend(kept)
        if frequencies is None:
            raise DataError(f"{source} 中没有可用于挖掘样本的回波图")
        write_samples(balanced, out_dir, frequencies)
        self._finish("mine", started, [source], [out_dir], cfg.seed, n_samples=len(balanced))
        return balanced

    def train(self, samples_dir: str | Path, kind: str, out_path: str | Path, seed: Optional[int] = None) -> Model:
        started = time.perf_counter()
        train_set = read_samples(samples_dir, "train")
        val_set = read_samples(samples_dir, "val")
        if not train_set:
            raise TrainingDataError(f"{samples_dir} 中没有训练样本")
        labels = [s.positive for s in train_set]
        if kind == "linear":
            cfg = self.config.linear
            run_seed = cfg.seed if seed is None else seed
            model, history = train_linear(
                [_features(s) for s in train_set], labels, cfg.epochs, cfg.lr, cfg.reg, run_seed
            )
        elif kind == "cnn":
            ccfg = self.config.cnn
            run_seed = ccfg.seed if seed is None else seed
            model, history = train_cnn(
                np.stack([s.crop for s in train_set]),
                labels,
                epochs=ccfg.epochs,
                lr=ccfg.lr,
                momentum=ccfg.momentum,
                batch_size=ccfg.batch_size,
                seed=run_seed,
                weight_decay=ccfg.weight_decay,
                conv1_filters=ccfg.conv1_filters,
                conv2_filters=ccfg.conv2_filters,
                hidden=ccfg.hidden,
                validation=(np.stack([s.crop for s in val_set]), [s.positive for s in val_set]) if val_set else None,
            )
        else:
            raise UsageError(f"未知模型类型：{kind!r}，可选 linear / cnn")
        logger.info("%s 训练完成：%s 个样本，最终目标值 %.6f", kind, len(train_set), history[-1])
        extra: Dict[str, object] = {"n_train": len(train_set), "n_val": len(val_set), "final_loss": history[-1]}
        if val_set:
            row = summarize_classification(predict_samples(model, val_set), [s.positive for s in val_set])
            logger.info("验证集：P=%.3f R=%.3f F1=%.3f", row.precision, row.recall, row.f1)
            extra["validation"] = {"precision": row.precision, "recall": row.recall, "f1": row.f1}
        save_model(model, out_path)
        self._finish("train", started, [samples_dir], [out_path], run_seed, model=kind, **extra)
        return model

    def detect(
        self,
        source: str | Path,
        model_path: str | Path,
        out_path: str | Path,
        split: Optional[str] = "test",
    ) -> List[EchogramDetections]:
        started = time.perf_counter()
        model = load_model(model_path)
        classifier = classifier_for_model(model)
        items = load_inputs(source, split)
        detections = self._detect(items, classifier)
        DetectionsWriter(out_path).write(detections, classifier.name)
        logger.info(
            "%s 张回波图中判为鲱鱼群的 ROI 共 %s 个",
            len(detections),
            sum(len(d.detections) for d in detections),
        )
        self._finish("detect", started, [source, model_path], [out_path], model=model_kind(model))
        return detections

    def _detect(self, items: Sequence[LoadedEchogram], classifier: RoiClassifier) -> List[EchogramDetections]:
        return run_ordered(
            lambda item: detect_echogram(
                item.echogram,
                classifier,
                self.config.roi,
                self.config.normalization,
                item.echogram_id,
                item.gt,
            ),
            items,
            self.workers,
        )

    def evaluate(
        self,
        source: str | Path,
        out_path: str | Path,
        taus: Optional[Sequence[float]] = None,
        model_paths: Sequence[str | Path] = (),
        detections_path: Optional[str | Path] = None,
        classifier: Optional[str] = None,
        split: Optional[str] = None,
    ) -> Tuple[List[MetricRow], List[FrameworkReport]]:
        """不给分类器时只评估 ROI 提取（默认全部划分）；给出模型、检测文件或参照分类器时在测试集上评估整体框架。"""
        started = time.perf_counter()
        ecfg = self.config.evaluation
        thresholds = list(ecfg.iou_thresholds if taus is None else taus)
        framework_mode = bool(model_paths) or detections_path is not None or classifier is not None
        items = load_inputs(source, split if split is not None else ("test" if framework_mode else ALL_SPLITS))
        dataset = [(item.echogram_id, item.echogram, item.gt) for item in items]
        roi_rows = evaluate_rois(dataset, self.config.roi, thresholds, self.config.normalization)
        reports: List[FrameworkReport] = []
        tau = ecfg.framework_iou
        inputs: List[str | Path] = [source]
        if detections_path is not None:
            name, detections = read_detections(detections_path)
            by_id = {d.echogram_id: d for d in detections}
            missing = [item.echogram_id for item in items if item.echogram_id not in by_id]
            if missing:
                raise DataError(f"检测文件 {detections_path} 缺少回波图：{missing[:5]}")
            reports.append(
                evaluate_detections([by_id[i.echogram_id] for i in items], [i.gt for i in items], tau, name or "detections")
            )
            inputs.append(detections_path)
        for path in model_paths:
            model = load_model(path)
            named = classifier_for_model(model, f"{model_kind(model)}:{Path(path).name}")
            reports.append(self._framework(items, named, tau))
            inputs.append(path)
        if classifier == "oracle":
            reports.append(self._framework(items, OracleRoiClassifier(self.config.mining.iou_threshold), tau))
        elif classifier == "none":
            reports.append(self._framework(items, RejectAllClassifier(), tau))
        elif classifier is not None:
            raise UsageError(f"未知参照分类器：{classifier!r}，可选 oracle / none")
        MetricsReportWriter(out_path).write(roi_rows, reports)
        self._finish("evaluate", started, inputs, [out_path], n_echograms=len(items))
        return roi_rows, reports

    def _framework(self, items: Sequence[LoadedEchogram], classifier: RoiClassifier, tau: float) -> FrameworkReport:
        detections = self._detect(items, classifier)
        return evaluate_detections(detections, [item.gt for item in items], tau, classifier.name)

    def render(
        self,
        source: str | Path,
        out_dir: str | Path,
        detections_path: Optional[str | Path] = None,
        channel: Optional[int | str] = None,
        stages: bool = False,
        split: Optional[str] = None,
    ) -> List[Path]:
        started = time.perf_counter()
        rcfg = self.config.render
        norm = self.config.normalization
        band = rcfg.channel if channel is None else channel
        items = load_inputs(source, split)
        detections: Dict[str, EchogramDetections] = {}
        if detections_path is not None:
            _, loaded = read_detections(detections_path)
            detections = {d.echogram_id: d for d in loaded}
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)

        def draw(item: LoadedEchogram) -> List[Path]:
            det = detections.get(item.echogram_id)
            overlays = detection_overlays(item.gt, det.rois if det else [], det.positive if det else [])
            target = root / f"{item.echogram_id}.png"
            target.write_bytes(render_png(item.echogram, band, overlays, norm.lo_db, norm.hi_db, rcfg.colormap))
            written = [target]
            if stages:
                stage = extract_stages(item.echogram, self.config.roi, norm)
                written.extend(render_stages(stage, root, item.echogram_id).values())
            return written

        paths = [p for group in run_ordered(draw, items, self.workers) for p in group]
        logger.info("已渲染 %s 张图像到 %s", len(paths), root)
        self._finish("render", started, [source], [root], n_images=len(paths))
        return paths


def _features(sample: Sample):
    if sample.features is None:
        raise TrainingDataError(f"样本 {sample.echogram_id} {sample.source_box} 缺少特征")
    return sample.features


def predict_samples(model: Model, samples: Sequence[Sample]) -> List[bool]:
    if isinstance(model, LinearModel):
        margins = model.margins(np.vstack([_features(s).as_array() for s in samples]))
        return [bool(m > 0) for m in np.atleast_1d(margins)]
    return [bool(v) for v in cnn_predict(model, np.stack([s.crop for s in samples]))]
