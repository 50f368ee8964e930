"""Training and evaluation loops for one run configuration."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..decoder import DecoderConfig, DecoderError, forward, init_params, loss_and_gradients, save_checkpoint
from ..geometry import relative_scale_arrays
from ..losses import LossBreakdown, sigmoid
from ..mask import build_attention_mask
from ..matching import cost_arrays, match_groups
from ..partition import QueryTeam, ScalePartition, init_team
from ..preference import PreferenceStore, extract_preferences
from ..scene import Scene, object_groups
from .config import RunConfig
from .metrics import Detections, Metrics, average_precision, center_fraction, per_query_scale_std
from .scenes import generate_dataset

log = logging.getLogger(__name__)

CSV_HEADER = (
    "epoch,ap,ap_bucket0,ap_bucket1,ap_bucket2,scale_std_mean,center_within_eta_frac,"
    "loss_total,loss_cls,loss_l1,loss_giou,loss_pos"
)

EVAL_BATCH = 50


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class EvalResult:
    metrics: Metrics
    boxes: np.ndarray
    probs: np.ndarray


@dataclass
class TrainReport:
    config: RunConfig
    rows: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    team: QueryTeam | None = None
    anchor_log: list[dict] = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def csv_text(self) -> str:
        return metrics_csv(self.rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_csv(rows: Sequence[dict]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        buckets = list(r["ap_buckets"]) + [math.nan] * (3 - len(r["ap_buckets"]))
        values = [
            r["ap"], *buckets[:3], r["scale_std_mean"], r["center_within_eta_frac"],
            r["loss_total"], r["loss_cls"], r["loss_l1"], r["loss_giou"], r["loss_pos"],
        ]
        lines.append(",".join([str(r["epoch"]), *(_fmt(v) for v in values)]))
    return "\n".join(lines) + "\n"


def predict(
    scenes: Sequence[Scene], team: QueryTeam, params, cfg: DecoderConfig, mask=None
) -> tuple[np.ndarray, np.ndarray]:
    """Final-layer boxes (S, N, 4) and class probabilities (S, N, C)."""
    anchors = team.anchor_array()
    boxes, probs = [], []
    for start in range(0, len(scenes), EVAL_BATCH):
        chunk = scenes[start:start + EVAL_BATCH]
        out = forward(np.stack([s.features for s in chunk]), anchors, params, cfg, mask, keep_cache=False)
        boxes.append(out.boxes[-1])
        probs.append(sigmoid(out.logits[-1]))
    return np.concatenate(boxes), np.concatenate(probs)


def evaluate(
    params,
    dataset: Sequence[Scene],
    team: QueryTeam,
    partition: ScalePartition,
    cfg: RunConfig,
    eval_partition: ScalePartition | None = None,
) -> EvalResult:
    """AP@0.5 overall and per scale bucket, plus matched-scale spread and center concentration.

    ``partition`` drives the group-wise matching used for the two teamwork
    statistics; ``eval_partition`` defines the AP buckets.
    """
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    eval_partition = eval_partition or cfg.eval_partition
    mask = build_attention_mask(team.group_sizes)
    boxes, probs = predict(dataset, team, params, cfg.model, mask)
    anchors = team.anchor_array()

    dets = [Detections.from_probs(boxes[i], probs[i]) for i in range(len(dataset))]
    gt_boxes = [s.gt_boxes for s in dataset]
    gt_classes = [s.gt_classes for s in dataset]
    n_classes = cfg.model.n_classes
    ap = average_precision(dets, gt_boxes, gt_classes, n_classes)
    ap_buckets = [
        average_precision(dets, gt_boxes, gt_classes, n_classes, (r.s_min, r.s_max))
        for r in eval_partition.ranges
    ]

    query_scales: list[list[float]] = [[] for _ in range(team.n)]
    distances = []
    for i, scene in enumerate(dataset):
        if not len(scene.gt_classes):
            continue
        costs = cost_arrays(probs[i], boxes[i], scene.gt_classes, scene.gt_boxes, cfg.cost_weights)
        groups = object_groups(scene, partition, cfg.scale_mode)
        qi, oi, _ = match_groups(costs, team.group_of, groups)
        scales = relative_scale_arrays(scene.gt_boxes[oi])
        for q, s in zip(qi, scales):
            query_scales[q].append(float(s))
        distances.extend(np.hypot(*(boxes[i, qi, :2] - anchors[qi, :2]).T).tolist())

    metrics = Metrics(
        ap=ap,
        ap_buckets=ap_buckets,
        scale_std_mean=per_query_scale_std(query_scales),
        center_within_eta_frac=center_fraction(distances, cfg.eta),
    )
    return EvalResult(metrics, boxes, probs)


def _clip(grads: dict, max_norm: float) -> None:
    if max_norm <= 0:
        return
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor


def anchor_snapshot(team: QueryTeam) -> list[list[float]]:
    return team.anchor_array().tolist()


def anchor_drift(team: QueryTeam, partition: ScalePartition) -> float:
    """Fraction of anchors whose relative scale has left their group's range."""
    scales = relative_scale_arrays(team.anchor_array())
    out = 0
    for i, s in enumerate(scales):
        r = partition.ranges[team.group_of[i]]
        out += not (r.s_min < s <= r.s_max)
    return out / team.n


def train(
    cfg: RunConfig,
    train_set: Sequence[Scene] | None = None,
    val_set: Sequence[Scene] | None = None,
    out_dir: str | Path | None = None,
) -> TrainReport:
    """Train the decoder under ``cfg``; everything is determined by ``cfg.seed``.

    Preference extraction, when enabled, rewrites the anchors between epochs
    from the validation pass that just ran.
    """
    ss = np.random.SeedSequence(cfg.seed)
    team_seed, param_seed, order_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    if train_set is None:
        train_set = generate_dataset(cfg.scene, cfg.seed, cfg.n_train, stream=0)
    if val_set is None:
        val_set = generate_dataset(cfg.scene, cfg.seed, cfg.n_val, stream=1)

    partition = cfg.partition
    team = init_team(partition, cfg.proportions, cfg.n_queries, team_seed)
    params = init_params(cfg.model, param_seed)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    second = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    objective = cfg.objective()
    order_rng = np.random.default_rng(order_seed)
    opt = cfg.optimizer
    report = TrainReport(cfg)

    for epoch in range(opt.epochs):
        mask = build_attention_mask(team.group_sizes)
        lr = opt.lr_at(epoch)
        order = order_rng.permutation(len(train_set))
        running = LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, objective.effective_weights)
        for start in range(0, len(order), opt.batch_size):
            batch = [train_set[i] for i in order[start:start + opt.batch_size]]
            try:
                loss, grads, _ = loss_and_gradients(batch, team, params, cfg.model, objective, mask)
            except DecoderError as err:
                raise TrainingDiverged(f"epoch {epoch}, batch offset {start}: {err}") from err
            if not math.isfinite(loss.total):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch} at batch offset {start}: {loss}")
            running = running + loss
            for g in grads.values():
                g /= len(batch)
            _clip(grads, opt.clip_norm)
            step += 1
            for k in params:
                if opt.kind == "adam":
                    velocity[k] *= opt.momentum
                    velocity[k] += (1 - opt.momentum) * grads[k]
                    second[k] *= opt.beta2
                    second[k] += (1 - opt.beta2) * grads[k] ** 2
                    m_hat = velocity[k] / (1 - opt.momentum**step)
                    v_hat = second[k] / (1 - opt.beta2**step)
                    params[k] -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
                else:
                    velocity[k] *= opt.momentum
                    velocity[k] += grads[k]
                    params[k] -= lr * velocity[k]
        running = running.scaled(1.0 / len(train_set))

        result = evaluate(params, val_set, team, partition, cfg)
        m = result.metrics
        row = dict(
            epoch=epoch, ap=m.ap, ap_buckets=m.ap_buckets, scale_std_mean=m.scale_std_mean,
            center_within_eta_frac=m.center_within_eta_frac, loss_total=running.total,
            loss_cls=running.cls, loss_l1=running.l1, loss_giou=running.giou, loss_pos=running.pos,
        )
        report.rows.append(row)
        log.info("epoch %d lr %.4g loss %.4f ap %.4f", epoch, lr, running.total, m.ap)

        if cfg.use_preference and epoch < opt.epochs - 1:
            store = PreferenceStore(team.n, cfg.tau)
            confidences = result.probs.max(axis=2)
            for i in range(len(val_set)):
                store.record_many(result.boxes[i], confidences[i])
            before = anchor_snapshot(team)
            team = team.with_anchors(extract_preferences(store, team))
            report.anchor_log.append(dict(
                epoch=epoch, before=before, after=anchor_snapshot(team),
                drift_fraction=anchor_drift(team, partition),
            ))

    report.params = params
    report.team = team
    if out_dir is not None:
        write_run(report, out_dir)
    return report


def write_run(report: TrainReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.csv_text())
    save_checkpoint(report.params, out / "checkpoint", report.config.model)
    run_log = dict(
        config=report.config.to_dict(),
        config_hash=report.config.config_hash(include_seed=True),
        group_sizes=report.team.group_sizes,
        final_anchors=anchor_snapshot(report.team),
        anchor_updates=report.anchor_log,
        epochs=report.rows,
    )
    (out / "run_log.json").write_text(json.dumps(run_log, indent=2))
