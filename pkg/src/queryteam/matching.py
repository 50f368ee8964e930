"""Detection cost matrices, exact assignment and group-wise matching."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box, pairwise_giou, pairwise_l1
from .partition import QueryTeam, ScalePartition, assign_object_group

FORBIDDEN = math.inf
BRUTE_FORCE_MAX_SIDE = 8
BRUTE_FORCE_MAX_CANDIDATES = 2_000_000


class InfeasibleAssignment(ValueError):
    """Every complete assignment would use a forbidden pair."""


@dataclass(frozen=True)
class Prediction:
    box: Box
    class_probs: np.ndarray
    query_index: int

    def __post_init__(self) -> None:
        probs = np.asarray(self.class_probs, dtype=np.float64)
        if probs.ndim != 1 or np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("class probabilities must be a vector in [0, 1]")
        object.__setattr__(self, "class_probs", probs)

    @property
    def confidence(self) -> float:
        return float(self.class_probs.max())


@dataclass(frozen=True)
class GtObject:
    box: Box
    class_id: int


@dataclass(frozen=True)
class CostWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0

    def __post_init__(self) -> None:
        if min(self.cls, self.l1, self.giou) < 0:
            raise ValueError(f"cost weights must be nonnegative: {self}")


@dataclass
class CostMatrix:
    costs: np.ndarray
    row_ids: list[int] = field(default_factory=list)
    col_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.costs.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if np.isnan(self.costs).any() or np.isneginf(self.costs).any():
            raise ValueError("cost entries must be finite or FORBIDDEN")
        n_rows, n_cols = self.costs.shape
        if not self.row_ids:
            self.row_ids = list(range(n_rows))
        if not self.col_ids:
            self.col_ids = list(range(n_cols))
        if len(self.row_ids) != n_rows or len(self.col_ids) != n_cols:
            raise ValueError("id maps do not match the matrix shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape


@dataclass
class MatchResult:
    """One-to-one ``(query_index, object_index)`` pairs.

    Objects left without a query are listed in ``unmatched_objects``.
    """

    pairs: list[tuple[int, int]]
    unmatched_objects: list[int]
    total_cost: float

    def query_indices(self) -> np.ndarray:
        return np.array([q for q, _ in self.pairs], dtype=np.int64)

    def object_indices(self) -> np.ndarray:
        return np.array([o for _, o in self.pairs], dtype=np.int64)


def cost_arrays(
    probs: np.ndarray,
    boxes: np.ndarray,
    gt_classes: np.ndarray,
    gt_boxes: np.ndarray,
    weights: CostWeights,
) -> np.ndarray:
    """Matching cost for every (query, object) pair from raw arrays."""
    n = probs.shape[0]
    m = len(gt_classes)
    if m == 0 or n == 0:
        return np.zeros((n, m))
    cost = weights.cls * (1.0 - probs[:, gt_classes])
    cost += weights.l1 * pairwise_l1(boxes, gt_boxes)
    cost += weights.giou * (1.0 - pairwise_giou(boxes, gt_boxes))
    return cost


def cost_matrix(
    preds: Sequence[Prediction],
    gts: Sequence[GtObject],
    weights: CostWeights = CostWeights(),
) -> CostMatrix:
    """``w_cls (1 - p[class]) + w_l1 L1 + w_giou (1 - GIoU)`` per pair."""
    if not preds:
        return CostMatrix(np.zeros((0, len(gts))), [], [])
    probs = np.stack([p.class_probs for p in preds])
    boxes = np.stack([p.box.as_array() for p in preds])
    if gts:
        gt_classes = np.array([g.class_id for g in gts], dtype=np.int64)
        gt_boxes = np.stack([g.box.as_array() for g in gts])
    else:
        gt_classes = np.zeros(0, dtype=np.int64)
        gt_boxes = np.zeros((0, 4))
    costs = cost_arrays(probs, boxes, gt_classes, gt_boxes, weights)
    return CostMatrix(costs, [p.query_index for p in preds], list(range(len(gts))))


def solve_assignment(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Min-cost assignment of ``min(n_rows, n_cols)`` pairs.

    Shortest augmenting path with row/column potentials; the short side is
    processed row by row. Entries equal to ``inf`` are never selected.
    Returns row and column index arrays sorted by row.
    """
    costs = np.asarray(costs, dtype=np.float64)
    n_rows, n_cols = costs.shape
    if n_rows == 0 or n_cols == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n_cols == 1 or n_rows == 1:
        # a single row or column: the optimum is its smallest finite entry
        line = costs[:, 0] if n_cols == 1 else costs[0]
        best = int(np.argmin(line))
        if not math.isfinite(line[best]):
            raise InfeasibleAssignment("the only row or column has no allowed pair")
        pair = (np.array([best]), np.array([0])) if n_cols == 1 else (np.array([0]), np.array([best]))
        return pair[0].astype(np.int64), pair[1].astype(np.int64)
    transposed = n_rows > n_cols
    c = costs.T if transposed else costs
    n, m = c.shape

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: row (1-based) holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            cur = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            if not math.isfinite(delta):
                raise InfeasibleAssignment(
                    f"row {i - 1} cannot be assigned without a forbidden pair"
                )
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    cols = np.nonzero(owner[1:])[0]
    rows = owner[1:][cols] - 1
    if transposed:
        rows, cols = cols, rows
    order = np.argsort(rows, kind="stable")
    return rows[order].astype(np.int64), cols[order].astype(np.int64)


def _result_from_indices(c: CostMatrix, rows, cols) -> MatchResult:
    pairs = [(c.row_ids[r], c.col_ids[j]) for r, j in zip(rows, cols)]
    taken = set(int(j) for j in cols)
    unmatched = [c.col_ids[j] for j in range(c.shape[1]) if j not in taken]
    total = float(sum(c.costs[r, j] for r, j in zip(rows, cols)))
    return MatchResult(pairs, unmatched, total)


def hungarian(c: CostMatrix) -> MatchResult:
    """Exact minimum-cost assignment; raises :class:`InfeasibleAssignment`."""
    rows, cols = solve_assignment(c.costs)
    return _result_from_indices(c, rows, cols)


def brute_force_match(c: CostMatrix) -> MatchResult:
    """Exhaustive search over all injective assignments of the short side."""
    n_rows, n_cols = c.shape
    short, long_ = sorted((n_rows, n_cols))
    if short > BRUTE_FORCE_MAX_SIDE:
        raise ValueError(f"short side {short} exceeds enumeration bound {BRUTE_FORCE_MAX_SIDE}")
    if math.perm(long_, short) > BRUTE_FORCE_MAX_CANDIDATES:
        raise ValueError(f"{math.perm(long_, short)} candidate assignments is too many to enumerate")
    if short == 0:
        return _result_from_indices(c, [], [])

    costs = c.costs if n_rows <= n_cols else c.costs.T
    best = math.inf
    best_perm = None
    for perm in itertools.permutations(range(long_), short):
        total = 0.0
        for r, j in enumerate(perm):
            total += costs[r, j]
        if total < best:
            best = total
            best_perm = perm
    if best_perm is None:
        raise InfeasibleAssignment("every assignment uses a forbidden pair")
    rows = list(range(short))
    cols = list(best_perm)
    if n_rows > n_cols:
        rows, cols = cols, rows
    order = sorted(range(short), key=lambda t: rows[t])
    return _result_from_indices(c, [rows[t] for t in order], [cols[t] for t in order])


def match_groups(
    costs: np.ndarray,
    query_groups: np.ndarray,
    object_groups: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Solve each group's query-by-object block independently and join the pairs.

    Returns query indices, object indices (sorted by query) and the objects
    that found no query in their group.
    """
    query_groups = np.asarray(query_groups)
    object_groups = np.asarray(object_groups)
    all_q = []
    all_o = []
    unmatched: list[int] = []
    for k in np.unique(object_groups):
        objs = np.nonzero(object_groups == k)[0]
        queries = np.nonzero(query_groups == k)[0]
        if len(queries) < len(objs):
            warnings.warn(
                f"group {int(k)} has {len(objs)} objects but only {len(queries)} queries; "
                "the excess objects stay unmatched",
                RuntimeWarning,
                stacklevel=2,
            )
        if len(queries) == 0:
            unmatched.extend(int(o) for o in objs)
            continue
        r, c = solve_assignment(costs[np.ix_(queries, objs)])
        all_q.append(queries[r])
        all_o.append(objs[c])
        if len(c) < len(objs):
            left = np.ones(len(objs), dtype=bool)
            left[c] = False
            unmatched.extend(int(o) for o in objs[left])
    if not all_q:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), sorted(unmatched)
    q = np.concatenate(all_q)
    o = np.concatenate(all_o)
    order = np.argsort(q, kind="stable")
    return q[order], o[order], sorted(unmatched)


def team_match(
    team: QueryTeam,
    preds: Sequence[Prediction],
    gts: Sequence[GtObject],
    p: ScalePartition,
    weights: CostWeights = CostWeights(),
    object_groups: Sequence[int] | None = None,
) -> MatchResult:
    """Group-wise Hungarian matching joined over all scale groups.

    ``object_groups`` overrides the relative-scale bucketing, e.g. when the
    grouping is driven by absolute object size.
    """
    if len(preds) != team.n:
        raise ValueError(f"{len(preds)} predictions for a team of {team.n} queries")
    if any(pred.query_index != i for i, pred in enumerate(preds)):
        raise ValueError("predictions must be ordered by query index")
    if p.k != team.k:
        raise ValueError(f"partition has {p.k} ranges but the team has {team.k} groups")
    c = cost_matrix(preds, gts, weights)
    if object_groups is None:
        object_groups = [assign_object_group(p, g.box) for g in gts]
    q, o, unmatched = match_groups(c.costs, team.group_of, np.asarray(object_groups, dtype=np.int64))
    pairs = [(int(i), int(j)) for i, j in zip(q, o)]
    total = float(c.costs[q, o].sum()) if len(q) else 0.0
    return MatchResult(pairs, unmatched, total)


def masked_cost_matrix(c: CostMatrix, query_groups, object_groups) -> CostMatrix:
    """Copy of ``c`` with every cross-group entry set to ``FORBIDDEN``."""
    query_groups = np.asarray(query_groups)[:, None]
    object_groups = np.asarray(object_groups)[None, :]
    costs = np.where(query_groups == object_groups, c.costs, FORBIDDEN)
    return CostMatrix(costs, list(c.row_ids), list(c.col_ids))
