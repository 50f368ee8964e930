import math

import numpy as np
import pytest

from conftest import random_boxes
from queryteam.geometry import Box
from queryteam.losses import (
    LossWeights,
    box_losses,
    box_losses_arrays,
    class_targets,
    classification_loss,
    focal_loss_arrays,
    position_loss,
    position_loss_arrays,
    total_loss,
)
from queryteam.matching import GtObject, MatchResult, Prediction
from queryteam.partition import QueryTeam

H = 1e-5
RTOL = 1e-4


def assert_fd(fd, an):
    # relative error with an absolute floor, for coordinates whose gradient is ~0
    assert abs(fd - an) <= RTOL * max(1e-3, abs(fd), abs(an)), (fd, an)


def test_focal_perfect_and_background():
    logits = np.array([[40.0, -40.0, -40.0]])
    loss, _ = focal_loss_arrays(logits, np.array([[1.0, 0.0, 0.0]]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    loss, _ = focal_loss_arrays(np.full((1, 3), -40.0), np.zeros((1, 3)))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_focal_hand_value():
    loss, _ = focal_loss_arrays(np.array([[0.0]]), np.array([[1.0]]))
    assert loss == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-15)


def test_focal_matches_direct_formula(rng):
    logits = rng.normal(0, 3, (6, 5))
    targets = (rng.uniform(size=(6, 5)) < 0.3).astype(float)
    total = 0.0
    for x, t in zip(logits.ravel(), targets.ravel()):
        p = 1 / (1 + math.exp(-x))
        total += -0.25 * (1 - p) ** 2 * math.log(p) if t else -0.75 * p**2 * math.log(1 - p)
    assert focal_loss_arrays(logits, targets)[0] == pytest.approx(total / 6, rel=1e-12)


def test_focal_gradient_fd():
    rng = np.random.default_rng(11)
    for _ in range(100):
        logits = rng.normal(0, 2.5, (3, 4))
        targets = (rng.uniform(size=(3, 4)) < 0.4).astype(float)
        _, grad = focal_loss_arrays(logits, targets)
        i, j = rng.integers(3), rng.integers(4)
        up, dn = logits.copy(), logits.copy()
        up[i, j] += H
        dn[i, j] -= H
        fd = (focal_loss_arrays(up, targets)[0] - focal_loss_arrays(dn, targets)[0]) / (2 * H)
        assert_fd(fd, grad[i, j])


def test_classification_loss_from_predictions():
    b = Box(0.5, 0.5, 0.2, 0.2)
    preds = [Prediction(b, np.array([0.5]), 0), Prediction(b, np.array([1e-20]), 1)]
    match = MatchResult([(0, 0)], [], 0.0)
    loss, grad = classification_loss(preds, match, [GtObject(b, 0)])
    # query 1 is background with p ~ 0 and contributes nothing; mean over two queries
    assert loss == pytest.approx(0.25 * 0.25 * math.log(2) / 2, abs=1e-12)
    assert grad.shape == (2, 1)
    assert class_targets(3, 2, [2], [1]).tolist() == [[0, 0], [0, 0], [0, 1]]


def test_box_losses_exact_and_geometry_case():
    boxes = random_boxes(np.random.default_rng(0), 4)
    l1, g, _, _ = box_losses_arrays(boxes, boxes)
    assert l1 == 0 and g == pytest.approx(0, abs=1e-12)
    l1, g, _, _ = box_losses_arrays(np.array([[0.25, 0.25, 0.1, 0.1]]), np.array([[0.75, 0.75, 0.1, 0.1]]))
    assert g == pytest.approx(1 + 0.34 / 0.36, abs=1e-12)
    assert l1 == pytest.approx(1.0, abs=1e-12)


def test_box_losses_empty():
    assert box_losses_arrays(np.zeros((0, 4)), np.zeros((0, 4)))[:2] == (0.0, 0.0)
    b = Box(0.5, 0.5, 0.1, 0.1)
    assert box_losses([Prediction(b, np.ones(1), 0)], MatchResult([], [0], 0.0), [GtObject(b, 0)])[:2] == (0.0, 0.0)


def _edge_gap(p, t):
    pe = np.array([p[0] - p[2] / 2, p[0] + p[2] / 2, p[1] - p[3] / 2, p[1] + p[3] / 2])
    te = np.array([t[0] - t[2] / 2, t[0] + t[2] / 2, t[1] - t[3] / 2, t[1] + t[3] / 2])
    return np.abs(pe[:, None] - te[None, :]).min()


def test_box_loss_gradients_fd():
    rng = np.random.default_rng(12)
    checked = 0
    while checked < 100:
        pred = random_boxes(rng, 3, min_side=0.05)
        target = random_boxes(rng, 3, min_side=0.05)
        # nondifferentiable neighborhoods: coinciding edges (GIoU) and equal coordinates (L1)
        if min(_edge_gap(p, t) for p, t in zip(pred, target)) < 1e-3 or np.abs(pred - target).min() < 1e-3:
            continue
        _, _, g_l1, g_giou = box_losses_arrays(pred, target)
        i, k = rng.integers(3), rng.integers(4)
        up, dn = pred.copy(), pred.copy()
        up[i, k] += H
        dn[i, k] -= H
        a, b = box_losses_arrays(up, target), box_losses_arrays(dn, target)
        assert_fd((a[0] - b[0]) / (2 * H), g_l1[i, k])
        assert_fd((a[1] - b[1]) / (2 * H), g_giou[i, k])
        checked += 1


def test_position_loss_cases():
    loss, _, sigma = position_loss_arrays(np.array([[0.9, 0.5]]), np.array([[0.5, 0.5]]), 0.25)
    assert sigma == 1 and loss == pytest.approx(0.4, abs=1e-12)
    loss, _, sigma = position_loss_arrays(np.array([[0.8, 0.5], [0.5, 0.7]]), np.array([[0.5, 0.5]] * 2), 0.25)
    assert sigma == 1 and loss == pytest.approx(0.3, abs=1e-12)
    loss, grad, sigma = position_loss_arrays(np.array([[0.6, 0.5]]), np.array([[0.5, 0.5]]), 0.25)
    assert (loss, sigma) == (0.0, 0) and not grad.any()
    with pytest.raises(ValueError):
        position_loss_arrays(np.zeros((1, 2)), np.zeros((1, 2)), 0.0)


def test_position_loss_zero_iff_no_violator():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        pred = rng.uniform(0, 1, (5, 2))
        anchor = rng.uniform(0, 1, (5, 2))
        loss, _, _ = position_loss_arrays(pred, anchor, 0.25)
        violators = np.hypot(*(pred - anchor).T) > 0.25
        assert (loss == 0) == (not violators.any())


def test_position_loss_gradient_fd():
    rng = np.random.default_rng(14)
    checked = 0
    while checked < 100:
        pred = rng.uniform(0, 1, (4, 2))
        anchor = rng.uniform(0, 1, (4, 2))
        dist = np.hypot(*(pred - anchor).T)
        if np.abs(dist - 0.25).min() < 1e-3:
            continue  # the violator set changes inside the FD step
        _, grad, _ = position_loss_arrays(pred, anchor, 0.25)
        i, k = rng.integers(4), rng.integers(2)
        up, dn = pred.copy(), pred.copy()
        up[i, k] += H
        dn[i, k] -= H
        fd = (position_loss_arrays(up, anchor, 0.25)[0] - position_loss_arrays(dn, anchor, 0.25)[0]) / (2 * H)
        assert_fd(fd, grad[i, k])
        checked += 1


def test_position_loss_from_team():
    team = QueryTeam([Box(0.5, 0.5, 0.1, 0.1), Box(0.2, 0.2, 0.1, 0.1)], [2])
    preds = [Prediction(Box(0.9, 0.5, 0.1, 0.1), np.ones(1), 0), Prediction(Box(0.2, 0.2, 0.3, 0.3), np.ones(1), 1)]
    loss, grad = position_loss(team, preds, 0.25)
    assert loss == pytest.approx(0.4)
    assert grad[0].tolist() == pytest.approx([1.0, 0.0])


def test_total_loss():
    assert total_loss((0, 0, 0, 0)).total == 0
    assert total_loss((1, 1, 1, 1)).total == pytest.approx(14.0)
    rng = np.random.default_rng(15)
    w = LossWeights(*rng.uniform(0, 5, 4))
    parts = rng.uniform(0, 3, 4)
    assert total_loss(parts, w).total == pytest.approx(float(np.dot(parts, w.as_tuple())), rel=1e-14)
    with pytest.raises(ValueError):
        total_loss((math.nan, 0, 0, 0))
