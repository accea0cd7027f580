from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from .errors import DataError
from .evaluation import EchogramDetections, FrameworkReport
from .models import BACKGROUND, HERRING, BoundingBox, MetricRow, RunManifest

RUN_MANIFEST = "run_manifest.json"


def write_json_atomic(data: object, path: str | Path) -> Path:
    # 同目录临时文件 + os.replace
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(json.dumps(data, indent=2, ensure_ascii=False) + "\n")
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return target


def format_table(headers: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([f"{v:.3f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(line[i]) for line in cells) for i in range(len(headers))]
    lines = []
    for index, line in enumerate(cells):
        lines.append("  ".join(cell.rjust(width) for cell, width in zip(line, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def metrics_table(rows: Sequence[MetricRow]) -> str:
    return format_table(
        ["IoU", "Precision", "Recall", "F1"],
        [(row.iou_threshold, row.precision, row.recall, row.f1) for row in rows],
    )


def framework_table(reports: Sequence[FrameworkReport]) -> str:
    return format_table(
        ["Classifier", "IoU", "Precision", "Recall", "F1", "ROI recall"],
        [
            (r.classifier, r.iou_threshold, r.row.precision, r.row.recall, r.row.f1, r.roi_row.recall)
            for r in reports
        ],
    )


def metric_row_dict(row: MetricRow) -> Dict[str, float]:
    return asdict(row)


def framework_dict(report: FrameworkReport) -> Dict[str, object]:
    return {
        "classifier": report.classifier,
        "iou_threshold": report.iou_threshold,
        "precision": report.row.precision,
        "recall": report.row.recall,
        "f1": report.row.f1,
        "roi_recall": report.roi_row.recall,
        "per_echogram": [
            {
                "echogram_id": b.echogram_id,
                "n_rois": b.n_rois,
                "tp": b.framework.tp,
                "fp": b.framework.fp,
                "fn": b.framework.fn,
            }
            for b in report.per_echogram
        ],
    }


class MetricsReportWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)

    def write(
        self,
        roi_rows: Sequence[MetricRow] = (),
        framework: Sequence[FrameworkReport] = (),
    ) -> Path:
        data = {
            "roi_extractor": [metric_row_dict(row) for row in roi_rows],
            "framework": [framework_dict(report) for report in framework],
        }
        return write_json_atomic(data, self.path)


def _box_dict(box: BoundingBox, label: Optional[str] = None) -> Dict[str, object]:
    data: Dict[str, object] = {"x": box.x, "y": box.y, "w": box.w, "h": box.h}
    if label is not None:
        data["label"] = label
    return data


def _parse_box(item: object, where: str) -> BoundingBox:
    if not isinstance(item, dict):
        raise DataError(f"{where} 必须是对象")
    try:
        return BoundingBox(int(item["x"]), int(item["y"]), int(item["w"]), int(item["h"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where} 框格式错误：{exc}") from exc


class RoiWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)

    def write(self, rois: Sequence[tuple[str, Sequence[BoundingBox]]]) -> Path:
        data = {
            "echograms": [
                {"echogram_id": echogram_id, "rois": [_box_dict(box) for box in boxes]}
                for echogram_id, boxes in rois
            ]
        }
        return write_json_atomic(data, self.path)


def read_rois(path: str | Path) -> Dict[str, List[BoundingBox]]:
    raw = _load_json(path)
    result: Dict[str, List[BoundingBox]] = {}
    for item in _echogram_items(raw, path):
        result[str(item["echogram_id"])] = [
            _parse_box(box, f"{path} 中 {item['echogram_id']} 的 ROI") for box in item.get("rois", [])
        ]
    return result


class DetectionsWriter:
    """detect 命令的输出：全部 ROI 及其硬分类标签，不带置信度。"""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def write(self, detections: Sequence[EchogramDetections], classifier: str = "") -> Path:
        data = {
            "classifier": classifier,
            "echograms": [
                {
                    "echogram_id": det.echogram_id,
                    "rois": [
                        _box_dict(box, HERRING if keep else BACKGROUND)
                        for box, keep in zip(det.rois, det.positive)
                    ],
                }
                for det in detections
            ],
        }
        return write_json_atomic(data, self.path)


def _load_json(path: str | Path) -> object:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} 不是合法 JSON：{exc}") from exc


def _echogram_items(raw: object, path: str | Path) -> List[dict]:
    if not isinstance(raw, dict) or not isinstance(raw.get("echograms"), list):
        raise DataError(f"{path} 缺少 echograms 列表")
    items = raw["echograms"]
    for item in items:
        if not isinstance(item, dict) or "echogram_id" not in item:
            raise DataError(f"{path} 中存在缺少 echogram_id 的条目")
    return items


def read_detections(path: str | Path) -> tuple[str, List[EchogramDetections]]:
    raw = _load_json(path)
    detections = []
    for item in _echogram_items(raw, path):
        rois: List[BoundingBox] = []
        positive: List[bool] = []
        for box in item.get("rois", []):
            label = box.get("label") if isinstance(box, dict) else None
            if label not in (HERRING, BACKGROUND):
                raise DataError(f"{path} 中 {item['echogram_id']} 的 ROI 标签未知：{label!r}")
            rois.append(_parse_box(box, f"{path} 中 {item['echogram_id']} 的 ROI"))
            positive.append(label == HERRING)
        detections.append(EchogramDetections(str(item["echogram_id"]), rois, positive))
    classifier = raw.get("classifier", "") if isinstance(raw, dict) else ""
    return str(classifier or ""), detections


def run_manifest_path(output: str | Path) -> Path:
    """目录输出的清单放在目录内；文件输出的清单与输出文件同名，后缀为 .run.json。"""
    target = Path(output)
    if target.is_dir() or not target.suffix:
        return target / RUN_MANIFEST
    return target.with_suffix(".run.json")


def write_run_manifest(manifest: RunManifest, output: str | Path) -> Path:
    return write_json_atomic(asdict(manifest), run_manifest_path(output))
