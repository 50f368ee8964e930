"""Block-diagonal self-attention mask over grouped queries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class AttentionMask:
    """``blocked[i, j]`` is True when query ``i`` may not attend to query ``j``."""

    blocked: np.ndarray
    blocks: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return self.blocked.shape[0]

    def allowed(self) -> np.ndarray:
        return ~self.blocked


def build_attention_mask(group_sizes: Sequence[int]) -> AttentionMask:
    sizes = [int(n) for n in group_sizes]
    if not sizes:
        raise ValueError("need at least one group")
    if any(n < 1 for n in sizes):
        raise ValueError(f"group sizes {sizes} must all be >= 1")
    n = sum(sizes)
    blocked = np.ones((n, n), dtype=bool)
    blocks = []
    start = 0
    for size in sizes:
        blocked[start:start + size, start:start + size] = False
        blocks.append((start, start + size))
        start += size
    blocked.setflags(write=False)
    return AttentionMask(blocked, tuple(blocks))
