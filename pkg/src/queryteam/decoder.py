"""A small set-prediction decoder with a hand-written backward pass.

Each layer runs masked single-head self-attention over the queries,
cross-attention into the scene tokens, a SiLU feed-forward block, and two
heads: box offsets applied in logit space to the current anchor, and
independent per-class logits. Everything is float64 numpy, batched over
scenes that share one query team.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Box
from .losses import (
    LossBreakdown,
    LossWeights,
    box_losses_arrays,
    class_targets,
    focal_loss_arrays,
    position_loss_arrays,
    sigmoid,
)
from .mask import AttentionMask
from .matching import CostWeights, Prediction, cost_arrays, match_groups
from .partition import QueryTeam, ScalePartition
from .scene import Scene, object_groups

LOGIT_EPS = 1e-5

LAYER_PARAMS = (
    "sa_q", "sa_k", "sa_v", "sa_o",
    "ca_q", "ca_k", "ca_v", "ca_o",
    "ff_w1", "ff_b1", "ff_w2", "ff_b2",
    "box_w", "box_b", "cls_w", "cls_b", "ca_logbeta",
)


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    n_layers: int = 2
    feature_dim: int = 64
    n_classes: int = 8
    ffn_dim: int = 64
    pe_temperature: float = 10000.0
    init_scale: float = 1.0
    spatial_beta: float = 2.0

    def __post_init__(self) -> None:
        if self.d_model % 8:
            raise ValueError(f"d_model={self.d_model} must be divisible by 8")
        if self.n_layers < 1:
            raise ValueError("need at least one decoder layer")


class DecoderError(FloatingPointError):
    pass


# --- parameters ------------------------------------------------------------


def param_shapes(cfg: DecoderConfig) -> dict[str, tuple[int, ...]]:
    d, f, h, c = cfg.d_model, cfg.feature_dim, cfg.ffn_dim, cfg.n_classes
    shapes: dict[str, tuple[int, ...]] = {
        "emb.w1": (d, d), "emb.b1": (d,), "emb.w2": (d, d), "emb.b2": (d,),
    }
    per_layer = {
        "sa_q": (d, d), "sa_k": (d, d), "sa_v": (d, d), "sa_o": (d, d),
        "ca_q": (d, d), "ca_k": (f, d), "ca_v": (f, d), "ca_o": (d, d),
        "ff_w1": (d, h), "ff_b1": (h,), "ff_w2": (h, d), "ff_b2": (d,),
        "box_w": (d, 4), "box_b": (4,), "cls_w": (d, c), "cls_b": (c,),
        "ca_logbeta": (1,),
    }
    for layer in range(cfg.n_layers):
        for name in LAYER_PARAMS:
            shapes[f"l{layer}.{name}"] = per_layer[name]
    return shapes


def init_params(cfg: DecoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Scaled-normal weights; biases zero except a low prior on class logits."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            std = cfg.init_scale / math.sqrt(shape[0])
            params[name] = rng.normal(0.0, std, size=shape)
    for layer in range(cfg.n_layers):
        # small output heads keep the first predictions near the anchors
        params[f"l{layer}.box_w"] *= 0.1
        params[f"l{layer}.cls_b"][:] = -math.log((1 - 0.01) / 0.01)
        params[f"l{layer}.ca_logbeta"] = np.array([math.log(cfg.spatial_beta)])
        params[f"l{layer}.sa_o"] *= 0.5
        params[f"l{layer}.ca_o"] *= 0.5
        params[f"l{layer}.ff_w2"] *= 0.5
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def save_checkpoint(params: dict[str, np.ndarray], path: str | Path, cfg: DecoderConfig | None = None) -> None:
    """Write ``<path>.bin`` (little-endian float64, C order, manifest order) and ``<path>.json``."""
    path = Path(path)
    manifest = {"dtype": "<f8", "order": "C", "tensors": []}
    if cfg is not None:
        manifest["config"] = asdict(cfg)
    offset = 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(arr.tobytes(order="C"))
            manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], DecoderConfig | None]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    raw = path.with_suffix(".bin").read_bytes()
    params = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    cfg = DecoderConfig(**manifest["config"]) if "config" in manifest else None
    return params, cfg


# --- elementwise helpers ---------------------------------------------------


def _silu(u):
    s = sigmoid(u)
    return u * s, s


def _silu_grad(u, s):
    return s * (1.0 + u * (1.0 - s))


def inverse_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, LOGIT_EPS, 1.0 - LOGIT_EPS)
    return np.log(x) - np.log1p(-x)


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(a: np.ndarray, da: np.ndarray) -> np.ndarray:
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def _wgrad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return _flat(x).T @ _flat(dy)


# --- forward pieces --------------------------------------------------------


def positional_encode_arrays(anchors: np.ndarray, width: int, temperature: float = 10000.0) -> np.ndarray:
    """Sinusoidal code of (..., 4) boxes; ``width / 4`` interleaved sin/cos per coordinate."""
    if width % 8:
        raise ValueError(f"encoding width {width} must be divisible by 8")
    anchors = np.asarray(anchors, dtype=np.float64)
    per_coord = width // 4
    j = np.arange(per_coord)
    freqs = temperature ** (2 * (j // 2) / per_coord)
    angles = anchors[..., :, None] * (2 * math.pi) / freqs
    code = np.where(j % 2 == 0, np.sin(angles), np.cos(angles))
    return code.reshape(*anchors.shape[:-1], width)


def positional_encode(anchor, width: int, temperature: float = 10000.0) -> np.ndarray:
    values = anchor.as_array() if isinstance(anchor, Box) else np.asarray(anchor, dtype=np.float64)
    return positional_encode_arrays(values, width, temperature)


def _embed(anchors: np.ndarray, params, cfg: DecoderConfig):
    pe = positional_encode_arrays(anchors, cfg.d_model, cfg.pe_temperature)
    u = pe @ params["emb.w1"] + params["emb.b1"]
    a, s = _silu(u)
    q = a @ params["emb.w2"] + params["emb.b2"]
    return q, (pe, u, a, s)


def embed_queries(team: QueryTeam, params, cfg: DecoderConfig) -> np.ndarray:
    """Row ``i`` is the MLP of the sinusoidal code of anchor ``i``."""
    q, _ = _embed(team.anchor_array(), params, cfg)
    return q


@dataclass
class DecoderOutput:
    """Per-layer predictions for a batch: boxes (L, B, N, 4), logits (L, B, N, C)."""

    boxes: np.ndarray
    logits: np.ndarray
    cache: dict | None = None

    @property
    def probs(self) -> np.ndarray:
        return sigmoid(self.logits)

    def predictions(self, layer: int = -1, scene: int = 0) -> list[Prediction]:
        boxes = self.boxes[layer, scene]
        probs = self.probs[layer, scene]
        return [Prediction(Box.from_array(b), p, i) for i, (b, p) in enumerate(zip(boxes, probs))]


def _check_finite(layer: int, **arrays) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise DecoderError(f"non-finite values in layer {layer} ({name})")


def forward(
    features: np.ndarray,
    anchors: np.ndarray,
    params: dict[str, np.ndarray],
    cfg: DecoderConfig,
    mask: AttentionMask | np.ndarray | None = None,
    keep_cache: bool = True,
) -> DecoderOutput:
    """Run the decoder on (B, T, F) features for one team of (N, 4) anchors."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[None]
    if features.ndim != 3 or features.shape[-1] != cfg.feature_dim:
        raise ValueError(
            f"features of shape {features.shape} do not match feature_dim={cfg.feature_dim}"
        )
    anchors = np.asarray(anchors, dtype=np.float64)
    n = anchors.shape[0]
    blocked = mask.blocked if isinstance(mask, AttentionMask) else mask
    if blocked is None:
        blocked = np.zeros((n, n), dtype=bool)
    if blocked.shape != (n, n):
        raise ValueError(f"mask of shape {blocked.shape} for {n} queries")
    # non-finite intermediates are reported per layer by _check_finite instead of numpy warnings
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _forward(features, anchors, params, cfg, blocked, keep_cache)


def _forward(features, anchors, params, cfg, blocked, keep_cache) -> DecoderOutput:
    b, n = features.shape[0], anchors.shape[0]
    scale = 1.0 / math.sqrt(cfg.d_model)
    token_xy = features[..., :2]

    q, emb_cache = _embed(anchors, params, cfg)
    h = np.broadcast_to(q, (b, n, cfg.d_model))
    z = np.broadcast_to(inverse_sigmoid(anchors), (b, n, 4))
    layer_caches = []
    all_boxes = []
    all_logits = []
    for layer in range(cfg.n_layers):
        p = {name: params[f"l{layer}.{name}"] for name in LAYER_PARAMS}
        s_in = h + q
        qs = s_in @ p["sa_q"]
        ks = s_in @ p["sa_k"]
        vs = h @ p["sa_v"]
        scores = (qs @ ks.transpose(0, 2, 1)) * scale
        scores = np.where(blocked, -np.inf, scores)
        attn = _softmax(scores)
        o = attn @ vs
        h1 = h + o @ p["sa_o"]

        c_in = h1 + q
        qc = c_in @ p["ca_q"]
        kc = features @ p["ca_k"]
        vc = features @ p["ca_v"]
        # Gaussian prior around the current box, its spread scaled by the box's width and height
        current = sigmoid(z)
        offset = (current[:, :, None, :2] - token_xy[:, None, :, :]) / current[:, :, None, 2:]
        d2 = (offset**2).sum(-1)
        beta = float(np.exp(p["ca_logbeta"][0]))
        _check_finite(layer, spatial_beta=beta)
        cross = _softmax((qc @ kc.transpose(0, 2, 1)) * scale - beta * d2)
        oc = cross @ vc
        h2 = h1 + oc @ p["ca_o"]

        u = h2 @ p["ff_w1"] + p["ff_b1"]
        a, s = _silu(u)
        h3 = h2 + a @ p["ff_w2"] + p["ff_b2"]

        z_new = z + h3 @ p["box_w"] + p["box_b"]
        boxes = sigmoid(z_new)
        logits = h3 @ p["cls_w"] + p["cls_b"]
        _check_finite(layer, hidden=h3, boxes=z_new, logits=logits)
        all_boxes.append(boxes)
        all_logits.append(logits)
        if keep_cache:
            layer_caches.append(dict(
                h=h, s_in=s_in, qs=qs, ks=ks, vs=vs, attn=attn, o=o, h1=h1,
                c_in=c_in, qc=qc, kc=kc, vc=vc, cross=cross, oc=oc, h2=h2, d2=d2, beta=beta, current=current, offset=offset,
                u=u, a=a, s=s, h3=h3, boxes=boxes,
            ))
        h, z = h3, z_new

    cache = None
    if keep_cache:
        cache = dict(features=features, q=q, emb=emb_cache, layers=layer_caches, scale=scale)
    return DecoderOutput(np.stack(all_boxes), np.stack(all_logits), cache)


def backward(
    out: DecoderOutput,
    params: dict[str, np.ndarray],
    cfg: DecoderConfig,
    d_boxes: np.ndarray,
    d_logits: np.ndarray,
) -> dict[str, np.ndarray]:
    """Parameter gradients given loss gradients w.r.t. every layer's boxes and logits."""
    if out.cache is None:
        raise ValueError("forward was run without keep_cache")
    cache = out.cache
    features = cache["features"]
    scale = cache["scale"]
    grads = zeros_like_params(params)
    dq = np.zeros_like(cache["layers"][0]["h"])
    dh_next = np.zeros_like(dq)
    dz_next = np.zeros(d_boxes.shape[1:])

    for layer in reversed(range(cfg.n_layers)):
        c = cache["layers"][layer]
        p = {name: params[f"l{layer}.{name}"] for name in LAYER_PARAMS}
        g = {}
        boxes = c["boxes"]
        dz = d_boxes[layer] * boxes * (1.0 - boxes) + dz_next

        g["box_w"] = _wgrad(c["h3"], dz)
        g["box_b"] = dz.sum(axis=(0, 1))
        dl = d_logits[layer]
        g["cls_w"] = _wgrad(c["h3"], dl)
        g["cls_b"] = dl.sum(axis=(0, 1))
        dh3 = dz @ p["box_w"].T + dl @ p["cls_w"].T + dh_next

        # feed-forward
        g["ff_w2"] = _wgrad(c["a"], dh3)
        g["ff_b2"] = dh3.sum(axis=(0, 1))
        du = (dh3 @ p["ff_w2"].T) * _silu_grad(c["u"], c["s"])
        g["ff_w1"] = _wgrad(c["h2"], du)
        g["ff_b1"] = du.sum(axis=(0, 1))
        dh2 = dh3 + du @ p["ff_w1"].T

        # cross-attention
        g["ca_o"] = _wgrad(c["oc"], dh2)
        doc = dh2 @ p["ca_o"].T
        dcross = doc @ c["vc"].transpose(0, 2, 1)
        dvc = c["cross"].transpose(0, 2, 1) @ doc
        dsc = _softmax_backward(c["cross"], dcross)
        g["ca_logbeta"] = np.array([-c["beta"] * float((dsc * c["d2"]).sum())])
        # the prior also depends on this layer's input box
        current, offset = c["current"], c["offset"]
        g_off = -2.0 * c["beta"] * dsc[..., None] * offset
        size = current[..., 2:]
        d_current = np.concatenate([g_off.sum(2) / size, -(g_off * offset).sum(2) / size], axis=-1)
        dz_next = dz + d_current * current * (1.0 - current)
        dsc *= scale
        dqc = dsc @ c["kc"]
        dkc = dsc.transpose(0, 2, 1) @ c["qc"]
        g["ca_q"] = _wgrad(c["c_in"], dqc)
        g["ca_k"] = _wgrad(features, dkc)
        g["ca_v"] = _wgrad(features, dvc)
        dc_in = dqc @ p["ca_q"].T
        dh1 = dh2 + dc_in
        dq += dc_in

        # masked self-attention
        g["sa_o"] = _wgrad(c["o"], dh1)
        do = dh1 @ p["sa_o"].T
        dattn = do @ c["vs"].transpose(0, 2, 1)
        dvs = c["attn"].transpose(0, 2, 1) @ do
        ds = _softmax_backward(c["attn"], dattn) * scale
        dqs = ds @ c["ks"]
        dks = ds.transpose(0, 2, 1) @ c["qs"]
        g["sa_q"] = _wgrad(c["s_in"], dqs)
        g["sa_k"] = _wgrad(c["s_in"], dks)
        g["sa_v"] = _wgrad(c["h"], dvs)
        ds_in = dqs @ p["sa_q"].T + dks @ p["sa_k"].T
        dh = dh1 + ds_in + dvs @ p["sa_v"].T
        dq += ds_in

        for name, value in g.items():
            grads[f"l{layer}.{name}"] = value
        dh_next = dh

    # the first layer's hidden state is the query embedding itself
    dq_team = (dq + dh_next).sum(axis=0)
    pe, u, a, s = cache["emb"]
    grads["emb.w2"] = a.T @ dq_team
    grads["emb.b2"] = dq_team.sum(axis=0)
    du = (dq_team @ params["emb.w2"].T) * _silu_grad(u, s)
    grads["emb.w1"] = pe.T @ du
    grads["emb.b1"] = du.sum(axis=0)
    return grads


def decode(
    features,
    team: QueryTeam,
    params: dict[str, np.ndarray],
    mask: AttentionMask,
    cfg: DecoderConfig,
) -> tuple[list[list[Prediction]], list[Prediction]]:
    """Per-layer predictions and final predictions for a single scene."""
    out = forward(np.asarray(features)[None], team.anchor_array(), params, cfg, mask, keep_cache=False)
    per_layer = [out.predictions(layer, 0) for layer in range(cfg.n_layers)]
    return per_layer, per_layer[-1]


# --- loss assembly ---------------------------------------------------------


@dataclass(frozen=True)
class Objective:
    """What the training loss is made of for one run."""

    partition: ScalePartition
    loss_weights: LossWeights = LossWeights()
    cost_weights: CostWeights = CostWeights()
    eta: float = 0.25
    use_position: bool = True
    scale_mode: str = "relative"

    @property
    def effective_weights(self) -> LossWeights:
        if self.use_position:
            return self.loss_weights
        w = self.loss_weights
        return LossWeights(w.cls, w.l1, w.giou, 0.0)


Matches = list  # per scene, per layer: (query_idx, object_idx)


def scene_layer_loss(
    boxes: np.ndarray,
    logits: np.ndarray,
    scene: Scene,
    team: QueryTeam,
    anchors: np.ndarray,
    objective: Objective,
    groups: np.ndarray,
    match: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Loss of one layer's (N, 4) boxes and (N, C) logits against one scene.

    Returns ``(breakdown, d_boxes, d_logits, match)``.
    """
    weights = objective.effective_weights
    if match is None:
        costs = cost_arrays(sigmoid(logits), boxes, scene.gt_classes, scene.gt_boxes, objective.cost_weights)
        qi, oi, _ = match_groups(costs, team.group_of, groups)
        match = (qi, oi)
    qi, oi = match
    targets = class_targets(boxes.shape[0], logits.shape[1], qi, scene.gt_classes[oi])
    cls, d_logits = focal_loss_arrays(logits, targets)
    l1, giou_loss, g_l1, g_giou = box_losses_arrays(boxes[qi], scene.gt_boxes[oi])
    pos, g_pos, _ = position_loss_arrays(boxes[:, :2], anchors[:, :2], objective.eta)

    d_boxes = np.zeros_like(boxes)
    np.add.at(d_boxes, qi, weights.l1 * g_l1 + weights.giou * g_giou)
    d_boxes[:, :2] += weights.pos * g_pos
    total = weights.cls * cls + weights.l1 * l1 + weights.giou * giou_loss + weights.pos * pos
    breakdown = LossBreakdown(cls, l1, giou_loss, pos, total, weights)
    return breakdown, d_boxes, weights.cls * d_logits, match


def loss_and_gradients(
    scenes: Sequence[Scene],
    team: QueryTeam,
    params: dict[str, np.ndarray],
    cfg: DecoderConfig,
    objective: Objective,
    mask: AttentionMask | None = None,
    matches: Matches | None = None,
):
    """Summed loss over scenes and decoder layers, and its parameter gradients.

    Matching is recomputed per layer unless ``matches`` (as returned by a
    previous call) is supplied, in which case the assignment is held fixed.
    Returns ``(breakdown, grads, matches)``.
    """
    if not scenes:
        raise ValueError("no scenes given")
    widths = {s.features.shape for s in scenes}
    if len(widths) != 1:
        raise ValueError(f"scenes in one batch must share a feature shape, got {sorted(widths)}")
    if objective.partition.k != team.k:
        raise ValueError("partition and team disagree on the number of groups")
    anchors = team.anchor_array()
    features = np.stack([s.features for s in scenes])
    out = forward(features, anchors, params, cfg, mask)
    d_boxes = np.zeros_like(out.boxes)
    d_logits = np.zeros_like(out.logits)
    weights = objective.effective_weights
    total = LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, weights)
    used: Matches = []
    for b, scene in enumerate(scenes):
        groups = object_groups(scene, objective.partition, objective.scale_mode)
        scene_matches = []
        for layer in range(cfg.n_layers):
            fixed = matches[b][layer] if matches is not None else None
            part, db, dl, m = scene_layer_loss(
                out.boxes[layer, b], out.logits[layer, b], scene, team, anchors, objective, groups, fixed
            )
            if not math.isfinite(part.total):
                raise DecoderError(f"non-finite loss at layer {layer} of scene {b}")
            total = total + part
            d_boxes[layer, b] = db
            d_logits[layer, b] = dl
            scene_matches.append(m)
        used.append(scene_matches)
    grads = backward(out, params, cfg, d_boxes, d_logits)
    return total, grads, used
