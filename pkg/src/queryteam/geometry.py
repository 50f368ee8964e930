"""Normalized center-format boxes and the overlap measures built on them.

Scalar functions take :class:`Box` values. The ``*_arrays`` / ``pairwise_*``
helpers work on ``(..., 4)`` float arrays in the same ``(cx, cy, w, h)`` layout
and are what the decoder and matcher use on their hot paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CLAMP_SLACK = 1e-9


def _clamp_field(name: str, value: float, lo: float, hi: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"box field {name}={value!r} is not finite")
    if value < lo:
        if lo - value > CLAMP_SLACK:
            raise ValueError(f"box field {name}={value!r} below {lo}")
        return lo
    if value > hi:
        if value - hi > CLAMP_SLACK:
            raise ValueError(f"box field {name}={value!r} above {hi}")
        return hi
    return value


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``(cx, cy, w, h)`` in unit-square coordinates.

    Values outside the valid range by at most ``1e-9`` are clamped, anything
    further out raises ``ValueError``. Zero width or height is rejected.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "cx", _clamp_field("cx", self.cx, 0.0, 1.0))
        object.__setattr__(self, "cy", _clamp_field("cy", self.cy, 0.0, 1.0))
        w = _clamp_field("w", self.w, 0.0, 1.0)
        h = _clamp_field("h", self.h, 0.0, 1.0)
        if w <= 0.0 or h <= 0.0:
            raise ValueError(f"degenerate box with w={w!r}, h={h!r}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_array(cls, values) -> "Box":
        cx, cy, w, h = (float(v) for v in values)
        return cls(cx, cy, w, h)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def corners(self) -> tuple[float, float, float, float]:
        """Return ``(x1, y1, x2, y2)``."""
        return (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )


def _overlaps(a: Box, b: Box) -> tuple[float, float, float]:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    enclosing = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter, union, enclosing


def iou(a: Box, b: Box) -> float:
    inter, union, _ = _overlaps(a, b)
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: ``IoU - (enclosing - union) / enclosing``, in [-1, 1]."""
    inter, union, enclosing = _overlaps(a, b)
    return inter / union - (enclosing - union) / enclosing


def l1_box_distance(a: Box, b: Box) -> float:
    return abs(a.cx - b.cx) + abs(a.cy - b.cy) + abs(a.w - b.w) + abs(a.h - b.h)


def center_distance(a: Box, b: Box) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def relative_scale(b: Box) -> float:
    """Geometric-mean side length ``sqrt(w * h)``; lies in (0, 1]."""
    return math.sqrt(b.w * b.h)


# --- array forms -----------------------------------------------------------


def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    half = 0.5 * boxes[..., 2:]
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def relative_scale_arrays(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return np.sqrt(boxes[..., 2] * boxes[..., 3])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU for every pair of rows of ``a`` (n, 4) and ``b`` (m, 4)."""
    inter, union, _ = _pairwise_terms(a, b)
    return inter / union


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter, union, enclosing = _pairwise_terms(a, b)
    return inter / union - (enclosing - union) / enclosing


def pairwise_l1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a[:, None, :] - b[None, :, :]).sum(-1)


def _pairwise_terms(a: np.ndarray, b: np.ndarray):
    xa = cxcywh_to_xyxy(a)[:, None, :]
    xb = cxcywh_to_xyxy(b)[None, :, :]
    lo = np.maximum(xa[..., :2], xb[..., :2])
    hi = np.minimum(xa[..., 2:], xb[..., 2:])
    wh = np.clip(hi - lo, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (xa[..., 2] - xa[..., 0]) * (xa[..., 3] - xa[..., 1])
    area_b = (xb[..., 2] - xb[..., 0]) * (xb[..., 3] - xb[..., 1])
    union = area_a + area_b - inter
    ewh = np.maximum(xa[..., 2:], xb[..., 2:]) - np.minimum(xa[..., :2], xb[..., :2])
    enclosing = ewh[..., 0] * ewh[..., 1]
    return inter, union, enclosing


def giou_with_grad(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise GIoU of ``pred`` against ``target`` and its gradient w.r.t. ``pred``.

    Both inputs are (n, 4) center-format arrays. At min/max ties the
    derivative is taken from the ``pred`` side being the active one.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = cxcywh_to_xyxy(pred)
    t = cxcywh_to_xyxy(target)

    lo = np.maximum(p[:, :2], t[:, :2])
    hi = np.minimum(p[:, 2:], t[:, 2:])
    raw = hi - lo
    positive = raw > 0
    iwh = np.where(positive, raw, 0.0)
    inter = iwh[:, 0] * iwh[:, 1]
    area_p = pred[:, 2] * pred[:, 3]
    area_t = target[:, 2] * target[:, 3]
    union = area_p + area_t - inter
    elo = np.minimum(p[:, :2], t[:, :2])
    ehi = np.maximum(p[:, 2:], t[:, 2:])
    ewh = ehi - elo
    enclosing = ewh[:, 0] * ewh[:, 1]
    value = inter / union - (enclosing - union) / enclosing

    d_inter = 1.0 / union - (-inter / union**2 + 1.0 / enclosing)
    d_union_from_area = -inter / union**2 + 1.0 / enclosing
    d_enclosing = -union / enclosing**2

    # d(intersection width)/d(pred low edge), d(.)/d(pred high edge), per axis
    d_iw_lo = np.where(positive & (p[:, :2] >= t[:, :2]), -1.0, 0.0)
    d_iw_hi = np.where(positive & (p[:, 2:] <= t[:, 2:]), 1.0, 0.0)
    d_ew_lo = np.where(p[:, :2] <= t[:, :2], -1.0, 0.0)
    d_ew_hi = np.where(p[:, 2:] >= t[:, 2:], 1.0, 0.0)
    other_i = iwh[:, ::-1]
    other_e = ewh[:, ::-1]

    g_lo = d_inter[:, None] * other_i * d_iw_lo + d_enclosing[:, None] * other_e * d_ew_lo
    g_hi = d_inter[:, None] * other_i * d_iw_hi + d_enclosing[:, None] * other_e * d_ew_hi

    # area_p = w * h contributes through the union
    g_area_w = d_union_from_area * pred[:, 3]
    g_area_h = d_union_from_area * pred[:, 2]

    grad = np.empty_like(pred)
    grad[:, 0:2] = g_lo + g_hi
    grad[:, 2:4] = 0.5 * (g_hi - g_lo)
    grad[:, 2] += g_area_w
    grad[:, 3] += g_area_h
    return value, grad
