"""Seeded synthetic detection scenes and their JSON Lines serialization.

Feature token layout (width ``feature_dim``)::

    [0:4]          cx, cy, w, h of the token's box
    [4:4+C]        one-hot class (all zero for distractors)
    [4+C]          objectness flag (1 for objects, 0 for distractors)
    [5+C:5+C+P]    sinusoidal code of the box, P = largest multiple of 8 that fits
    rest           zero padding

Gaussian noise of std ``noise`` is added to every entry. Object tokens are
placed at random slots among ``n_tokens``; unused slots hold distractors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..decoder import positional_encode_arrays
from ..geometry import Box
from ..matching import GtObject
from ..scene import Scene


@dataclass(frozen=True)
class SceneConfig:
    min_objects: int = 1
    max_objects: int = 6
    scale_bounds: tuple[float, ...] = (0.2, 0.4)
    scale_mixture: tuple[float, ...] = (0.65, 0.20, 0.15)
    min_scale: float = 0.04
    max_scale: float = 0.8
    aspect_jitter: float = 0.3
    n_classes: int = 8
    noise: float = 0.02
    n_tokens: int = 10
    feature_dim: int = 64
    size_factor_range: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_bounds", tuple(self.scale_bounds))
        object.__setattr__(self, "scale_mixture", tuple(self.scale_mixture))
        object.__setattr__(self, "size_factor_range", tuple(self.size_factor_range))
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("object counts must satisfy 0 <= min <= max")
        if self.max_objects > self.n_tokens:
            raise ValueError("n_tokens must leave room for every object")
        if len(self.scale_mixture) != len(self.scale_bounds) + 1:
            raise ValueError("scale_mixture needs one weight per scale bucket")
        if min(self.scale_mixture) < 0 or abs(sum(self.scale_mixture) - 1.0) > 1e-9:
            raise ValueError("scale_mixture must be nonnegative and sum to 1")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.pe_width < 8:
            raise ValueError(f"feature_dim={self.feature_dim} is too small for {self.n_classes} classes")

    @property
    def pe_width(self) -> int:
        return ((self.feature_dim - 5 - self.n_classes) // 8) * 8

    @property
    def bucket_edges(self) -> list[tuple[float, float]]:
        edges = [0.0, *self.scale_bounds, 1.0]
        return list(zip(edges, edges[1:]))


def encode_token(cfg: SceneConfig, box: np.ndarray, class_id: int | None) -> np.ndarray:
    c = cfg.n_classes
    token = np.zeros(cfg.feature_dim)
    token[0:4] = box
    if class_id is not None:
        token[4 + class_id] = 1.0
        token[4 + c] = 1.0
    token[5 + c:5 + c + cfg.pe_width] = positional_encode_arrays(box, cfg.pe_width)
    return token


def _sample_box(rng: np.random.Generator, scale: float, jitter: float) -> np.ndarray:
    # keeping ratio in [scale, 1/scale] keeps both sides <= 1 and sqrt(w*h) == scale
    ratio = min(max(math.exp(rng.uniform(-jitter, jitter)), scale), 1.0 / scale)
    w = scale * ratio
    h = scale / ratio
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.array([cx, cy, w, h])


def sample_scale(rng: np.random.Generator, cfg: SceneConfig) -> tuple[int, float]:
    bucket = int(rng.choice(len(cfg.scale_mixture), p=cfg.scale_mixture))
    lo, hi = cfg.bucket_edges[bucket]
    lo = max(lo, cfg.min_scale)
    hi = min(hi, cfg.max_scale)
    # sample from (lo, hi]
    return bucket, hi - rng.uniform(0.0, hi - lo)


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects = []
    tokens = np.zeros((cfg.n_tokens, cfg.feature_dim))
    slots = rng.permutation(cfg.n_tokens)
    for i in range(n_obj):
        _, scale = sample_scale(rng, cfg)
        box = _sample_box(rng, scale, cfg.aspect_jitter)
        class_id = int(rng.integers(cfg.n_classes))
        objects.append(GtObject(Box.from_array(box), class_id))
        tokens[slots[i]] = encode_token(cfg, box, class_id)
    for slot in slots[n_obj:]:
        box = _sample_box(rng, rng.uniform(0.05, 0.5), cfg.aspect_jitter)
        tokens[slot] = encode_token(cfg, box, None)
    if cfg.noise > 0:
        tokens += rng.normal(0.0, cfg.noise, size=tokens.shape)
    lo, hi = cfg.size_factor_range
    size_factor = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return Scene(objects, tokens, seed=seed, size_factor=size_factor)


def scene_seeds(base_seed: int, count: int, stream: int) -> list[int]:
    """Independent per-scene seeds for a named stream (0 = train, 1 = val, ...)."""
    ss = np.random.SeedSequence([base_seed, stream])
    return [int(x) for x in ss.generate_state(count, dtype=np.uint64)]


def generate_dataset(cfg: SceneConfig, base_seed: int, count: int, stream: int = 0) -> list[Scene]:
    return [generate_scene(cfg, s) for s in scene_seeds(base_seed, count, stream)]


# --- JSON Lines ------------------------------------------------------------


def scene_to_json(scene: Scene) -> dict:
    return {
        "objects": [{"box": list(o.box.as_tuple()), "class": o.class_id} for o in scene.objects],
        "features": scene.features.tolist(),
        "seed": scene.seed,
        "size_factor": scene.size_factor,
    }


def scene_from_json(record: dict) -> Scene:
    objects = [GtObject(Box.from_array(o["box"]), int(o["class"])) for o in record["objects"]]
    return Scene(
        objects,
        np.asarray(record["features"], dtype=np.float64),
        seed=int(record.get("seed", 0)),
        size_factor=float(record.get("size_factor", 1.0)),
    )


def write_dataset(scenes: Iterable[Scene], path: str | Path) -> None:
    with open(path, "w") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_json(scene)) + "\n")


def read_dataset(path: str | Path) -> list[Scene]:
    with open(path) as fh:
        return [scene_from_json(json.loads(line)) for line in fh if line.strip()]
