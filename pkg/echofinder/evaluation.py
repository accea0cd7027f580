"""检测评估：基于 IoU 阈值的一对一贪心匹配、精确率/召回率/F1、阈值扫描与整体框架评估。"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .classifiers import RoiClassifier
from .config import NormalizationConfig, RoiConfig
from .errors import DataError
from .geometry import iou, normalize_sv
from .models import BoundingBox, Echogram, MatchResult, MetricRow
from .roi_extractor import extract_rois

logger = logging.getLogger(__name__)


def _check_tau(tau: float) -> None:
    if not 0.0 <= tau <= 1.0:
        raise DataError(f"IoU 阈值必须在 [0, 1] 内：{tau}")


def match_detections(dets: Sequence[BoundingBox], gt: Sequence[BoundingBox], tau: float) -> MatchResult:
    """IoU 严格大于 tau 的候选对按 IoU 降序贪心接受，每个检测与标注至多匹配一次。"""
    _check_tau(tau)
    candidates: List[Tuple[float, BoundingBox, BoundingBox, int, int]] = []
    for di, det in enumerate(dets):
        for gi, truth in enumerate(gt):
            score = iou(det, truth)
            if score > tau:
                candidates.append((score, det, truth, di, gi))
    # 同分时按框坐标排序，使结果与输入顺序无关
    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3], c[4]))
    used_det: set[int] = set()
    used_gt: set[int] = set()
    pairs: List[Tuple[int, int, float]] = []
    for score, _, _, di, gi in candidates:
        if di in used_det or gi in used_gt:
            continue
        used_det.add(di)
        used_gt.add(gi)
        pairs.append((di, gi, score))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(dets) - tp, fn=len(gt) - tp, pairs=pairs)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def precision_recall_f1(match: MatchResult, iou_threshold: float = 0.0) -> MetricRow:
    precision = match.tp / (match.tp + match.fp) if match.tp + match.fp else 0.0
    recall = match.tp / (match.tp + match.fn) if match.tp + match.fn else 0.0
    return MetricRow(
        iou_threshold=iou_threshold,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
    )


def _check_taus(taus: Sequence[float]) -> None:
    if list(taus) != sorted(taus):
        raise DataError(f"IoU 阈值列表必须升序：{list(taus)}")
    for tau in taus:
        _check_tau(tau)


def aggregate(matches: Iterable[MatchResult]) -> MatchResult:
    total = MatchResult(tp=0, fp=0, fn=0)
    for match in matches:
        total = total + match
    return total


def sweep_dataset(
    scenes: Sequence[Tuple[Sequence[BoundingBox], Sequence[BoundingBox]]], taus: Sequence[float]
) -> List[MetricRow]:
    """多张回波图的 (检测, 标注) 在每个阈值下先累加计数再求指标（微平均）。"""
    _check_taus(taus)
    return [
        precision_recall_f1(aggregate(match_detections(d, g, tau) for d, g in scenes), tau)
        for tau in taus
    ]


def sweep_thresholds(
    dets: Sequence[BoundingBox], gt: Sequence[BoundingBox], taus: Sequence[float]
) -> List[MetricRow]:
    return sweep_dataset([(dets, gt)], taus)


@dataclass
class EchogramDetections:
    echogram_id: str
    rois: List[BoundingBox]
    positive: List[bool]

    @property
    def detections(self) -> List[BoundingBox]:
        return [box for box, keep in zip(self.rois, self.positive) if keep]


@dataclass
class EchogramBreakdown:
    echogram_id: str
    n_rois: int
    framework: MatchResult
    rois: MatchResult


@dataclass
class FrameworkReport:
    classifier: str
    iou_threshold: float
    row: MetricRow
    roi_row: MetricRow
    per_echogram: List[EchogramBreakdown] = field(default_factory=list)


def detect_echogram(
    echogram: Echogram,
    classifier: RoiClassifier,
    cfg: RoiConfig,
    normalization: Optional[NormalizationConfig] = None,
    echogram_id: str = "",
    gt: Optional[Sequence[BoundingBox]] = None,
) -> EchogramDetections:
    norm = normalization or NormalizationConfig()
    rois = extract_rois(echogram, cfg, norm)
    normalized = normalize_sv(echogram, norm.lo_db, norm.hi_db)
    positive = classifier.classify(normalized, rois, gt)
    return EchogramDetections(echogram_id=echogram_id, rois=rois, positive=list(positive))


def evaluate_detections(
    detections: Sequence[EchogramDetections],
    gts: Sequence[Sequence[BoundingBox]],
    tau: float,
    classifier_name: str = "",
) -> FrameworkReport:
    if len(detections) != len(gts):
        raise DataError(f"检测结果数 {len(detections)} 与标注数 {len(gts)} 不一致")
    breakdown = [
        EchogramBreakdown(
            echogram_id=det.echogram_id,
            n_rois=len(det.rois),
            framework=match_detections(det.detections, gt, tau),
            rois=match_detections(det.rois, gt, tau),
        )
        for det, gt in zip(detections, gts)
    ]
    report = FrameworkReport(
        classifier=classifier_name,
        iou_threshold=tau,
        row=precision_recall_f1(aggregate(b.framework for b in breakdown), tau),
        roi_row=precision_recall_f1(aggregate(b.rois for b in breakdown), tau),
        per_echogram=breakdown,
    )
    logger.info(
        "%s @ IoU %.2f：P=%.3f R=%.3f F1=%.3f（ROI 召回上界 %.3f）",
        classifier_name or "framework",
        tau,
        report.row.precision,
        report.row.recall,
        report.row.f1,
        report.roi_row.recall,
    )
    return report


def evaluate_framework(
    dataset: Sequence[Tuple[str, Echogram, Sequence[BoundingBox]]],
    cfg: RoiConfig,
    classifier: RoiClassifier,
    tau: float = 0.4,
    normalization: Optional[NormalizationConfig] = None,
) -> FrameworkReport:
    _check_tau(tau)
    detections = [
        detect_echogram(echogram, classifier, cfg, normalization, echogram_id, gt)
        for echogram_id, echogram, gt in dataset
    ]
    return evaluate_detections(detections, [gt for _, _, gt in dataset], tau, classifier.name)


def evaluate_rois(
    dataset: Sequence[Tuple[str, Echogram, Sequence[BoundingBox]]],
    cfg: RoiConfig,
    taus: Sequence[float] = (0.0, 0.2, 0.4),
    normalization: Optional[NormalizationConfig] = None,
) -> List[MetricRow]:
    _check_taus(taus)
    scenes = [(extract_rois(echogram, cfg, normalization), gt) for _, echogram, gt in dataset]
    return sweep_dataset(scenes, taus)


def recall_bound_holds(report: FrameworkReport) -> bool:
    return report.row.recall <= report.roi_row.recall + 1e-12


def summarize_classification(predicted: Sequence[bool], actual: Sequence[bool]) -> MetricRow:
    pred = np.asarray(predicted, dtype=bool)
    truth = np.asarray(actual, dtype=bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return precision_recall_f1(MatchResult(tp=tp, fp=fp, fn=fn))
