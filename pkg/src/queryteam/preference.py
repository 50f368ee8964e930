"""Per-query top-confidence prediction store and anchor re-estimation."""
from __future__ import annotations

import heapq
import itertools
from typing import Iterable

import numpy as np

from .geometry import Box
from .partition import QueryTeam

MIN_SIDE = 1e-3


class PreferenceStore:
    """Keeps, for each query, the ``tau`` most confident boxes seen so far.

    Among equal confidences the earlier record wins, so the retained set is
    always the first ``tau`` items of a stable descending sort.
    """

    def __init__(self, n_queries: int, tau: int = 300) -> None:
        if tau < 1:
            raise ValueError(f"tau must be >= 1, got {tau}")
        self.n_queries = int(n_queries)
        self.tau = int(tau)
        self._heaps: list[list] = [[] for _ in range(self.n_queries)]
        self._counter = itertools.count()

    def record(self, query_index: int, box, confidence: float) -> None:
        if not 0 <= query_index < self.n_queries:
            raise IndexError(f"unknown query index {query_index}")
        confidence = float(confidence)
        if not 0.0 <= confidence <= 1.0:
            raise ValueError(f"confidence {confidence} outside [0, 1]")
        values = box.as_array() if isinstance(box, Box) else np.asarray(box, dtype=np.float64)
        # min-heap keyed on (confidence, -arrival): the root is the entry to evict
        item = (confidence, -next(self._counter), values)
        heap = self._heaps[query_index]
        if len(heap) < self.tau:
            heapq.heappush(heap, item)
        elif confidence > heap[0][0]:
            heapq.heapreplace(heap, item)

    def record_many(self, boxes: np.ndarray, confidences: np.ndarray) -> None:
        """Record one prediction per query from (n_queries, 4) / (n_queries,) arrays."""
        for i in range(self.n_queries):
            self.record(i, boxes[i], confidences[i])

    def entries(self, query_index: int) -> list[tuple[np.ndarray, float]]:
        """Retained ``(box, confidence)`` pairs, most confident first."""
        heap = sorted(self._heaps[query_index], key=lambda e: (-e[0], -e[1]))
        return [(e[2].copy(), e[0]) for e in heap]

    def __len__(self) -> int:
        return sum(len(h) for h in self._heaps)

    def count(self, query_index: int) -> int:
        return len(self._heaps[query_index])

    def mean_box(self, query_index: int) -> np.ndarray | None:
        heap = self._heaps[query_index]
        if not heap:
            return None
        return np.mean([e[2] for e in heap], axis=0)


def clamp_anchor(values: Iterable[float]) -> Box:
    cx, cy, w, h = (float(v) for v in values)
    return Box(
        min(max(cx, 0.0), 1.0),
        min(max(cy, 0.0), 1.0),
        min(max(w, MIN_SIDE), 1.0),
        min(max(h, MIN_SIDE), 1.0),
    )


def preference_means(store: PreferenceStore) -> list[np.ndarray | None]:
    return [store.mean_box(i) for i in range(store.n_queries)]


def extract_preferences(store: PreferenceStore, team: QueryTeam) -> list[Box]:
    """New anchor per query: mean of its retained boxes, or the old anchor if none."""
    if store.n_queries != team.n:
        raise ValueError(f"store tracks {store.n_queries} queries, team has {team.n}")
    anchors = []
    for i, mean in enumerate(preference_means(store)):
        anchors.append(team.anchors[i] if mean is None else clamp_anchor(mean))
    return anchors
