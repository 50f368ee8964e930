"""Container for one synthetic image: ground-truth objects plus feature tokens."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import relative_scale_arrays
from .matching import GtObject


@dataclass
class Scene:
    objects: list[GtObject]
    features: np.ndarray
    seed: int = 0
    size_factor: float = 1.0
    gt_boxes: np.ndarray = field(init=False, repr=False)
    gt_classes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("scene features must be a (tokens, width) matrix")
        self.gt_boxes = np.array([o.box.as_tuple() for o in self.objects], dtype=np.float64).reshape(-1, 4)
        self.gt_classes = np.array([o.class_id for o in self.objects], dtype=np.int64)

    @property
    def relative_scales(self) -> np.ndarray:
        return relative_scale_arrays(self.gt_boxes)

    @property
    def absolute_scales(self) -> np.ndarray:
        return self.relative_scales * self.size_factor


def object_groups(scene: Scene, partition, scale_mode: str = "relative") -> np.ndarray:
    """Scale group of every object in ``scene``.

    ``"absolute"`` buckets ``relative_scale * size_factor`` (capped at 1)
    instead of the normalized scale.
    """
    if scale_mode == "relative":
        scales = scene.relative_scales
    elif scale_mode == "absolute":
        scales = np.minimum(scene.absolute_scales, 1.0)
    else:
        raise ValueError(f"unknown scale mode {scale_mode!r}")
    return partition.groups_of_scales(scales)
