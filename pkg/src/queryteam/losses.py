"""Set-prediction loss terms with analytic gradients.

Array-level functions (``*_arrays``) return ``(value, grad)`` and are what the
decoder backward pass consumes. The typed wrappers accept predictions and a
:class:`~queryteam.matching.MatchResult`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import giou_with_grad
from .matching import GtObject, MatchResult, Prediction
from .partition import QueryTeam

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    pos: float = 5.0

    def __post_init__(self) -> None:
        if min(self.cls, self.l1, self.giou, self.pos) < 0:
            raise ValueError(f"loss weights must be nonnegative: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cls, self.l1, self.giou, self.pos)


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    l1: float
    giou: float
    pos: float
    total: float
    weights: LossWeights

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            self.cls + other.cls,
            self.l1 + other.l1,
            self.giou + other.giou,
            self.pos + other.pos,
            self.total + other.total,
            self.weights,
        )

    def scaled(self, factor: float) -> "LossBreakdown":
        return LossBreakdown(
            self.cls * factor,
            self.l1 * factor,
            self.giou * factor,
            self.pos * factor,
            self.total * factor,
            self.weights,
        )


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def focal_loss_arrays(
    logits: np.ndarray,
    targets: np.ndarray,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> tuple[float, np.ndarray]:
    """Sigmoid focal loss summed over classes and averaged over queries.

    ``logits`` and binary ``targets`` are (n_queries, n_classes).
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    p = sigmoid(logits)
    log_p = -_softplus(-logits)
    log_1mp = -_softplus(logits)
    pos = targets > 0.5
    q = 1.0 - p
    loss_pos = -alpha * q**gamma * log_p
    loss_neg = -(1.0 - alpha) * p**gamma * log_1mp
    grad_pos = alpha * q**gamma * (gamma * p * log_p - q)
    grad_neg = -(1.0 - alpha) * p**gamma * (gamma * q * log_1mp - p)
    loss = np.where(pos, loss_pos, loss_neg).sum() / n
    grad = np.where(pos, grad_pos, grad_neg) / n
    return float(loss), grad


def class_targets(n_queries: int, n_classes: int, query_idx, gt_classes) -> np.ndarray:
    targets = np.zeros((n_queries, n_classes))
    targets[np.asarray(query_idx, dtype=np.int64), np.asarray(gt_classes, dtype=np.int64)] = 1.0
    return targets


def classification_loss(
    preds: Sequence[Prediction],
    match: MatchResult,
    gts: Sequence[GtObject],
) -> tuple[float, np.ndarray]:
    """Focal loss over all queries; unmatched queries target the all-zero vector.

    Returns the loss and its gradient w.r.t. the class logits.
    """
    probs = np.clip(np.stack([p.class_probs for p in preds]), PROB_EPS, 1.0 - PROB_EPS)
    logits = np.log(probs) - np.log1p(-probs)
    row_of = {pred.query_index: r for r, pred in enumerate(preds)}
    rows = [row_of[q] for q, _ in match.pairs]
    classes = [gts[o].class_id for _, o in match.pairs]
    targets = class_targets(len(preds), probs.shape[1], rows, classes)
    return focal_loss_arrays(logits, targets)


def box_losses_arrays(
    pred_boxes: np.ndarray, target_boxes: np.ndarray
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Mean L1 and mean ``1 - GIoU`` over matched rows, with gradients w.r.t. ``pred_boxes``."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    target_boxes = np.asarray(target_boxes, dtype=np.float64)
    n = pred_boxes.shape[0]
    if n == 0:
        zeros = np.zeros_like(pred_boxes)
        return 0.0, 0.0, zeros, zeros.copy()
    diff = pred_boxes - target_boxes
    l1 = float(np.abs(diff).sum() / n)
    grad_l1 = np.sign(diff) / n
    g, dg = giou_with_grad(pred_boxes, target_boxes)
    giou_loss = float((1.0 - g).sum() / n)
    grad_giou = -dg / n
    return l1, giou_loss, grad_l1, grad_giou


def box_losses(
    preds: Sequence[Prediction],
    match: MatchResult,
    gts: Sequence[GtObject],
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """``(l1, giou_loss, grad_l1, grad_giou)``; gradients are rows aligned with ``match.pairs``."""
    row_of = {pred.query_index: r for r, pred in enumerate(preds)}
    pred_boxes = np.array([preds[row_of[q]].box.as_tuple() for q, _ in match.pairs]).reshape(-1, 4)
    target_boxes = np.array([gts[o].box.as_tuple() for _, o in match.pairs]).reshape(-1, 4)
    return box_losses_arrays(pred_boxes, target_boxes)


def position_loss_arrays(
    pred_centers: np.ndarray, anchor_centers: np.ndarray, eta: float
) -> tuple[float, np.ndarray, int]:
    """Mean center distance over queries whose prediction strays beyond ``eta``.

    Returns ``(loss, grad w.r.t. pred_centers, n_violators)``; the violator
    set is held fixed when differentiating.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    diff = np.asarray(pred_centers, dtype=np.float64) - np.asarray(anchor_centers, dtype=np.float64)
    dist = np.sqrt((diff**2).sum(-1))
    violating = dist > eta
    sigma = int(violating.sum())
    grad = np.zeros_like(diff)
    if sigma == 0:
        return 0.0, grad, 0
    loss = float(dist[violating].sum() / sigma)
    grad[violating] = diff[violating] / (dist[violating, None] * sigma)
    return loss, grad, sigma


def position_loss(
    team: QueryTeam, preds: Sequence[Prediction], eta: float
) -> tuple[float, np.ndarray]:
    if len(preds) != team.n:
        raise ValueError(f"{len(preds)} predictions for a team of {team.n} queries")
    centers = np.array([[p.box.cx, p.box.cy] for p in preds]).reshape(-1, 2)
    anchors = np.array([[team.anchors[p.query_index].cx, team.anchors[p.query_index].cy] for p in preds])
    loss, grad, _ = position_loss_arrays(centers, anchors.reshape(-1, 2), eta)
    return loss, grad


def total_loss(parts: Sequence[float], weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted sum of ``(cls, l1, giou, pos)``."""
    cls, l1, giou_term, pos = (float(x) for x in parts)
    if not all(np.isfinite([cls, l1, giou_term, pos])):
        raise ValueError(f"loss parts must be finite: {parts}")
    total = weights.cls * cls + weights.l1 * l1 + weights.giou * giou_term + weights.pos * pos
    return LossBreakdown(cls, l1, giou_term, pos, total, weights)
