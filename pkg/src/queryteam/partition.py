"""Scale partitions, object-to-group assignment and query team initialization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box, relative_scale


@dataclass(frozen=True)
class ScaleRange:
    """Half-open scale interval ``(s_min, s_max]``."""

    s_min: float
    s_max: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.s_min < self.s_max <= 1.0):
            raise ValueError(f"invalid scale range ({self.s_min}, {self.s_max}]")

    def __contains__(self, scale: float) -> bool:
        return self.s_min < scale <= self.s_max

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.s_min + self.s_max)


@dataclass(frozen=True)
class ScalePartition:
    ranges: tuple[ScaleRange, ...]

    def __post_init__(self) -> None:
        ranges = tuple(self.ranges)
        object.__setattr__(self, "ranges", ranges)
        if not ranges:
            raise ValueError("a partition needs at least one range")
        if ranges[0].s_min != 0.0 or ranges[-1].s_max != 1.0:
            raise ValueError("partition must span (0, 1]")
        for lo, hi in zip(ranges, ranges[1:]):
            if lo.s_max != hi.s_min:
                raise ValueError(f"ranges {lo} and {hi} do not meet")

    @property
    def k(self) -> int:
        return len(self.ranges)

    @property
    def bounds(self) -> list[float]:
        return [r.s_max for r in self.ranges[:-1]]

    def group_of_scale(self, scale: float) -> int:
        if not (0.0 < scale <= 1.0):
            raise ValueError(f"scale {scale!r} outside (0, 1]")
        # bisect_left on upper edges puts a boundary value in the lower range
        return int(np.searchsorted(self.bounds, scale, side="left"))

    def groups_of_scales(self, scales: np.ndarray) -> np.ndarray:
        scales = np.asarray(scales, dtype=np.float64)
        return np.searchsorted(np.asarray(self.bounds, dtype=np.float64), scales, side="left")


def build_partition(bounds: Sequence[float]) -> ScalePartition:
    """Split (0, 1] at the interior ``bounds``; ``[]`` gives the single range (0, 1]."""
    bounds = [float(b) for b in bounds]
    for b in bounds:
        if not (0.0 < b < 1.0):
            raise ValueError(f"partition bound {b!r} is not inside (0, 1)")
    for prev, b in zip(bounds, bounds[1:]):
        if b <= prev:
            raise ValueError(f"partition bound {b!r} does not exceed {prev!r}")
    edges = [0.0, *bounds, 1.0]
    return ScalePartition(tuple(ScaleRange(lo, hi) for lo, hi in zip(edges, edges[1:])))


def assign_object_group(p: ScalePartition, b: Box) -> int:
    return p.group_of_scale(relative_scale(b))


def group_sizes_for(proportions: Sequence[float], n_total: int) -> list[int]:
    """Largest-remainder apportionment; ties go to the lower group index."""
    quotas = [p * n_total for p in proportions]
    sizes = [math.floor(q) for q in quotas]
    leftover = n_total - sum(sizes)
    order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - sizes[k]), k))
    for k in order[:leftover]:
        sizes[k] += 1
    return sizes


@dataclass
class QueryTeam:
    """Anchors of all N queries plus their contiguous group blocks.

    Queries of group ``k`` occupy indices ``offsets[k]:offsets[k + 1]``.
    """

    anchors: list[Box]
    group_sizes: list[int]
    group_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.group_sizes = [int(n) for n in self.group_sizes]
        if any(n < 0 for n in self.group_sizes):
            raise ValueError("group sizes must be nonnegative")
        if sum(self.group_sizes) != len(self.anchors):
            raise ValueError(
                f"group sizes sum to {sum(self.group_sizes)} but there are {len(self.anchors)} anchors"
            )
        self.group_of = np.repeat(np.arange(len(self.group_sizes)), self.group_sizes)

    @property
    def n(self) -> int:
        return len(self.anchors)

    @property
    def k(self) -> int:
        return len(self.group_sizes)

    @property
    def offsets(self) -> list[int]:
        return [0, *np.cumsum(self.group_sizes).tolist()]

    def block(self, k: int) -> range:
        offsets = self.offsets
        return range(offsets[k], offsets[k + 1])

    def anchor_array(self) -> np.ndarray:
        return np.array([a.as_tuple() for a in self.anchors], dtype=np.float64).reshape(-1, 4)

    def with_anchors(self, anchors: Sequence[Box]) -> "QueryTeam":
        return QueryTeam(list(anchors), list(self.group_sizes))


def init_team(
    p: ScalePartition,
    proportions: Sequence[float],
    n_total: int,
    seed: int,
) -> QueryTeam:
    """Random anchor centers on the unit square; side length at the group's range midpoint."""
    proportions = [float(x) for x in proportions]
    if len(proportions) != p.k:
        raise ValueError(f"expected {p.k} proportions, got {len(proportions)}")
    if any(x < 0 for x in proportions) or abs(sum(proportions) - 1.0) > 1e-9:
        raise ValueError(f"proportions {proportions} must be nonnegative and sum to 1")
    if n_total < p.k:
        raise ValueError(f"{n_total} queries cannot cover {p.k} groups")
    sizes = group_sizes_for(proportions, n_total)
    if min(sizes) < 1:
        raise ValueError(f"group sizes {sizes} leave a group without queries")

    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(n_total, 2))
    anchors = []
    i = 0
    for k, n_k in enumerate(sizes):
        side = p.ranges[k].midpoint
        for _ in range(n_k):
            anchors.append(Box(centers[i, 0], centers[i, 1], side, side))
            i += 1
    return QueryTeam(anchors, sizes)
