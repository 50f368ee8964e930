"""Central-difference check of the full decoder loss with the assignment held fixed."""
import numpy as np

from queryteam.decoder import DecoderConfig, Objective, forward, init_params, loss_and_gradients
from queryteam.geometry import Box
from queryteam.losses import LossWeights
from queryteam.mask import build_attention_mask
from queryteam.matching import GtObject
from queryteam.partition import build_partition, init_team
from queryteam.scene import Scene

STEP = 1e-5
RTOL = 1e-4
FLOOR = 1e-3
KINK = 1e-4
MIN_SIDE = 1e-3

SMALL = DecoderConfig(d_model=16, n_layers=2, feature_dim=12, n_classes=3, ffn_dim=16, spatial_beta=4.0)


def random_scene(rng, cfg):
    n_obj = int(rng.integers(1, 4))
    objects = []
    for _ in range(n_obj):
        w, h = rng.uniform(0.05, 0.5, 2)
        cx, cy = rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2)
        objects.append(GtObject(Box(cx, cy, w, h), int(rng.integers(cfg.n_classes))))
    features = rng.normal(0, 1, (5, cfg.feature_dim))
    features[:, :2] = rng.uniform(0, 1, (5, 2))
    return Scene(objects, features)


def random_point(seed, cfg=SMALL, n_queries=12):
    """One (scenes, team, params, objective) sample with perturbed parameters."""
    rng = np.random.default_rng(seed)
    partition = build_partition([0.2, 0.4])
    team = init_team(partition, [0.5, 0.25, 0.25], n_queries, seed)
    params = init_params(cfg, seed)
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.1, params[k].shape)
    scenes = [random_scene(rng, cfg) for _ in range(2)]
    objective = Objective(partition, LossWeights(), eta=0.05, use_position=True)
    return scenes, team, params, objective


def kink_gap(scenes, team, params, cfg, objective, matches, mask):
    """Distance of the current outputs to the nearest nondifferentiable point of the loss."""
    out = forward(np.stack([s.features for s in scenes]), team.anchor_array(), params, cfg, mask, keep_cache=False)
    anchors = team.anchor_array()
    gap = np.inf
    for b, scene in enumerate(scenes):
        for layer in range(cfg.n_layers):
            boxes = out.boxes[layer, b]
            # the spatial prior scales with 1 / side, singular as a side collapses to zero
            gap = min(gap, boxes[:, 2:].min() - MIN_SIDE + KINK)
            dist = np.hypot(*(boxes[:, :2] - anchors[:, :2]).T)
            gap = min(gap, np.abs(dist - objective.eta).min())
            qi, oi = matches[b][layer]
            if len(qi):
                p, t = boxes[qi], scene.gt_boxes[oi]
                gap = min(gap, np.abs(p - t).min())
                pe = np.stack([p[:, 0] - p[:, 2] / 2, p[:, 0] + p[:, 2] / 2, p[:, 1] - p[:, 3] / 2, p[:, 1] + p[:, 3] / 2], 1)
                te = np.stack([t[:, 0] - t[:, 2] / 2, t[:, 0] + t[:, 2] / 2, t[:, 1] - t[:, 3] / 2, t[:, 1] + t[:, 3] / 2], 1)
                gap = min(gap, np.abs(pe[:, :, None] - te[:, None, :]).min())
    return gap


def check_point(seed, coords_per_tensor=1, cfg=SMALL):
    """Return (worst relative error, coordinates checked), or None when the point sits on a kink."""
    scenes, team, params, objective = random_point(seed, cfg)
    mask = build_attention_mask(team.group_sizes)
    _, grads, matches = loss_and_gradients(scenes, team, params, cfg, objective, mask)
    if kink_gap(scenes, team, params, cfg, objective, matches, mask) < KINK:
        return None
    rng = np.random.default_rng(seed + 10_000)
    worst = 0.0
    count = 0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        for idx in rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False):
            saved = flat[idx]
            flat[idx] = saved + STEP
            up = loss_and_gradients(scenes, team, params, cfg, objective, mask, matches)[0].total
            flat[idx] = saved - STEP
            dn = loss_and_gradients(scenes, team, params, cfg, objective, mask, matches)[0].total
            flat[idx] = saved
            fd = (up - dn) / (2 * STEP)
            an = grads[name].reshape(-1)[idx]
            worst = max(worst, abs(fd - an) / max(FLOOR, abs(fd), abs(an)))
            count += 1
    return worst, count
