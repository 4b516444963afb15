"""Box extraction, NMS, IoU matching and AP/mAP over an IoU threshold sweep."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import IoError, ParseError
from .geometry import BBox

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True)
class Detection:
    box: BBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class MatchResult:
    tp: list[bool]  # aligned with the input detection order
    gt_matched: list[bool]
    iou_threshold: float

    @property
    def n_tp(self) -> int:
        return sum(self.tp)


@dataclass
class PRCurve:
    points: list[tuple[float, float]]  # (recall, precision)
    ap: float


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    confidence_cutoff: float = 0.5
    nms_iou: float = 0.5

    def __post_init__(self):
        th = self.iou_thresholds
        if not th or any(not 0 < t < 1 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError(f"IoU thresholds must be strictly increasing in (0, 1): {th}")


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def extract_boxes(probmap: np.ndarray, cell_scale: float, threshold: float) -> list[Detection]:
    """One detection per 4-connected component of cells at or above ``threshold``."""
    prob = np.asarray(probmap, dtype=float)
    labels, n = ndimage.label(prob >= threshold, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    peaks = ndimage.maximum(prob, labels, index=np.arange(1, n + 1))
    dets = []
    for sl, peak in zip(ndimage.find_objects(labels), peaks):
        rows, cols = sl
        box = BBox(cols.start * cell_scale, rows.start * cell_scale, cols.stop * cell_scale, rows.stop * cell_scale)
        dets.append(Detection(box, float(min(max(peak, 0.0), 1.0))))
    return dets


def _confidence_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy suppression; ties in confidence favour the smaller box, then input order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].box.area, i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(iou(d.box, k.box) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


def match_at_iou(dets: Sequence[Detection], gts: Sequence[BBox], iou_threshold: float) -> MatchResult:
    tp = [False] * len(dets)
    matched = [False] * len(gts)
    for i in _confidence_order(dets):
        best_j, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if matched[j]:
                continue
            v = iou(dets[i].box, g)
            if v >= iou_threshold and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            matched[best_j] = True
            tp[i] = True
    return MatchResult(tp, matched, iou_threshold)


def ap_from_flags(scores: Sequence[float], tp: Sequence[bool], n_gt: int) -> PRCurve:
    """101-point interpolated AP from per-detection scores and TP flags."""
    if n_gt == 0:
        return PRCurve([], 1.0 if len(scores) == 0 else 0.0)
    if len(scores) == 0:
        return PRCurve([], 0.0)
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    flags = np.array([tp[i] for i in order], dtype=float)
    ctp = np.cumsum(flags)
    cfp = np.cumsum(1.0 - flags)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID - 1e-12, side="left")  # k/n vs grid rounding
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return PRCurve(list(zip(recall.tolist(), precision.tolist())), float(sampled.mean()))


def average_precision(dets: Sequence[Detection], gts: Sequence[BBox], iou_threshold: float) -> PRCurve:
    m = match_at_iou(dets, gts, iou_threshold)
    return ap_from_flags([d.confidence for d in dets], m.tp, len(gts))


def pooled_ap(dets_per_image, gts_per_image, iou_threshold: float) -> PRCurve:
    scores, flags, n_gt = [], [], 0
    for dets, gts in zip(dets_per_image, gts_per_image, strict=True):
        m = match_at_iou(dets, gts, iou_threshold)
        scores.extend(d.confidence for d in dets)
        flags.extend(m.tp)
        n_gt += len(gts)
    return ap_from_flags(scores, flags, n_gt)


def per_threshold_ap(dets_per_image, gts_per_image, cfg: EvalConfig = EvalConfig()) -> list[float]:
    dets_per_image, gts_per_image = list(dets_per_image), list(gts_per_image)
    return [pooled_ap(dets_per_image, gts_per_image, t).ap for t in cfg.iou_thresholds]


def mean_ap(dets_per_image, gts_per_image, cfg: EvalConfig = EvalConfig()) -> float:
    """AP pooled over images at each IoU threshold, averaged over thresholds."""
    aps = per_threshold_ap(dets_per_image, gts_per_image, cfg)
    return float(sum(aps) / len(aps))


# --------------------------------------------------------------------------
# detections file


def write_detections(path, dets_by_image: dict[str, list[Detection]]) -> None:
    doc = {
        image_id: {
            "boxes": [list(d.box.as_tuple()) for d in dets],
            "scores": [d.confidence for d in dets],
        }
        for image_id, dets in dets_by_image.items()
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write detections {path}: {exc.strerror}") from exc


def read_detections(path) -> dict[str, list[Detection]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read detections {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", where=f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected an object keyed by image id", where="top level")
    out = {}
    for image_id, entry in doc.items():
        try:
            boxes, scores = entry["boxes"], entry["scores"]
            if len(boxes) != len(scores):
                raise ValueError("boxes and scores differ in length")
            out[image_id] = [Detection(BBox(*map(float, b)), float(s)) for b, s in zip(boxes, scores)]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad entry: {exc}", where=image_id) from None
    return out
