"""Synthetic AP at IoU 0.5 and the per-query teamwork statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import pairwise_iou, relative_scale_arrays
from ..partition import ScalePartition

RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class Detections:
    """One scene's detections: (n, 4) boxes, labels and scores."""

    boxes: np.ndarray
    labels: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_probs(cls, boxes: np.ndarray, probs: np.ndarray) -> "Detections":
        return cls(np.asarray(boxes, dtype=np.float64), probs.argmax(axis=1), probs.max(axis=1))


@dataclass
class Metrics:
    ap: float
    ap_buckets: list[float]
    scale_std_mean: float
    center_within_eta_frac: float
    losses: dict[str, float] = field(default_factory=dict)


def interpolated_ap(tp: np.ndarray, fp: np.ndarray, n_pos: int) -> float:
    """101-point interpolated AP from score-ordered TP/FP flags."""
    if n_pos == 0:
        return math.nan
    if len(tp) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / n_pos
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).tiny)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def scene_outcomes(
    det: Detections,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    scale_range: tuple[float, float] | None = None,
    iou_threshold: float = 0.5,
) -> np.ndarray:
    """Greedy score-ordered matching within one scene: 1 = TP, 0 = FP, -1 = ignored.

    With ``scale_range`` set, ground truth outside the range is ignored, as
    are detections that land on it or that are themselves out of range.
    """
    n = len(det.scores)
    outcome = np.zeros(n, dtype=np.int64)
    if scale_range is not None:
        scales = relative_scale_arrays(det.boxes)
        outside = ~((scales > scale_range[0]) & (scales <= scale_range[1]))
        outcome[outside] = -1
    if len(gt_classes) == 0 or n == 0:
        return outcome
    if scale_range is None:
        gt_ignored = np.zeros(len(gt_classes), dtype=bool)
    else:
        gs = relative_scale_arrays(gt_boxes)
        gt_ignored = ~((gs > scale_range[0]) & (gs <= scale_range[1]))
    ious = pairwise_iou(det.boxes, gt_boxes)
    ious = np.where(det.labels[:, None] == gt_classes[None, :], ious, -1.0)
    hit = ious >= iou_threshold
    rows = np.nonzero(hit.any(axis=1))[0]
    rows = rows[np.lexsort((rows, -det.scores[rows]))]
    taken = np.zeros(len(gt_classes), dtype=bool)
    for i in rows:
        ok = hit[i] & ~taken
        real = ok & ~gt_ignored
        if real.any():
            j = int(np.argmax(np.where(real, ious[i], -2.0)))
            taken[j] = True
            outcome[i] = 1
        elif ok.any():
            j = int(np.argmax(np.where(ok, ious[i], -2.0)))
            taken[j] = True
            outcome[i] = -1
    return outcome


def average_precision(
    detections: Sequence[Detections],
    gt_boxes: Sequence[np.ndarray],
    gt_classes: Sequence[np.ndarray],
    n_classes: int,
    scale_range: tuple[float, float] | None = None,
    iou_threshold: float = 0.5,
) -> float:
    """Class-averaged AP; classes without positives are skipped, NaN if none have any."""
    scores, labels, outcomes, scene_ids, det_ids = [], [], [], [], []
    n_pos = np.zeros(n_classes, dtype=np.int64)
    for s, det in enumerate(detections):
        outcomes.append(scene_outcomes(det, gt_boxes[s], gt_classes[s], scale_range, iou_threshold))
        scores.append(det.scores)
        labels.append(det.labels)
        scene_ids.append(np.full(len(det.scores), s))
        det_ids.append(np.arange(len(det.scores)))
        classes = np.asarray(gt_classes[s], dtype=np.int64)
        if scale_range is not None and len(classes):
            gs = relative_scale_arrays(gt_boxes[s])
            classes = classes[(gs > scale_range[0]) & (gs <= scale_range[1])]
        n_pos += np.bincount(classes, minlength=n_classes)[:n_classes]
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    outcomes = np.concatenate(outcomes)
    order = np.lexsort((np.concatenate(det_ids), np.concatenate(scene_ids), -scores))
    labels = labels[order]
    outcomes = outcomes[order]

    values = []
    for c in range(n_classes):
        if n_pos[c] == 0:
            continue
        kept = outcomes[(labels == c) & (outcomes >= 0)]
        values.append(interpolated_ap((kept == 1).astype(float), (kept == 0).astype(float), int(n_pos[c])))
    return float(np.mean(values)) if values else math.nan


def bucket_aps(detections, gt_boxes, gt_classes, n_classes, partition: ScalePartition) -> list[float]:
    return [
        average_precision(detections, gt_boxes, gt_classes, n_classes, (r.s_min, r.s_max))
        for r in partition.ranges
    ]


def per_query_scale_std(query_scales: Sequence[Sequence[float]]) -> float:
    """Mean over queries (with at least two matches) of the std of their matched object scales."""
    stds = [float(np.std(v)) for v in query_scales if len(v) >= 2]
    return float(np.mean(stds)) if stds else math.nan


def center_fraction(distances: Sequence[float], eta: float) -> float:
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size == 0:
        return math.nan
    return float((distances <= eta).mean())
