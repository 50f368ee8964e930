"""Command line entry point: ``python -m queryteam <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .decoder import decode, init_params, load_checkpoint
from .geometry import Box
from .harness.ablation import ablate
from .harness.config import SETTINGS, RunConfig, load_config, save_config, setting_config
from .harness.scenes import generate_dataset, read_dataset, write_dataset
from .harness.training import evaluate, train
from .mask import build_attention_mask
from .matching import team_match
from .partition import QueryTeam, init_team
from .scene import object_groups

log = logging.getLogger("queryteam")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "setting", None):
        cfg = setting_config(cfg, args.setting)
    return cfg


def _datasets(args, cfg: RunConfig):
    """Train/val scenes from ``--dataset`` (a directory or a single file) or freshly generated."""
    if args.dataset is None:
        return (generate_dataset(cfg.scene, cfg.seed, cfg.n_train, stream=0),
                generate_dataset(cfg.scene, cfg.seed, cfg.n_val, stream=1))
    path = Path(args.dataset)
    if path.is_dir():
        return read_dataset(path / "train.jsonl"), read_dataset(path / "val.jsonl")
    scenes = read_dataset(path)
    return scenes, scenes


def _save_team(team: QueryTeam, path: Path) -> None:
    path.write_text(json.dumps({"group_sizes": team.group_sizes, "anchors": team.anchor_array().tolist()}))


def _load_team(path: Path) -> QueryTeam:
    data = json.loads(path.read_text())
    return QueryTeam([Box.from_array(a) for a in data["anchors"]], data["group_sizes"])


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set = _datasets(argparse.Namespace(dataset=None), cfg)
    write_dataset(train_set, out / "train.jsonl")
    write_dataset(val_set, out / "val.jsonl")
    save_config(cfg, out / "config.json")
    print(f"wrote {len(train_set)} train and {len(val_set)} val scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    train_set, val_set = _datasets(args, cfg)
    report = train(cfg, train_set, val_set, out_dir=out)
    save_config(cfg, out / "config.json")
    _save_team(report.team, out / "team.json")
    sys.stdout.write(report.csv_text())
    return 0


def cmd_eval(args) -> int:
    run = Path(args.out)
    cfg = load_config(args.config or run / "config.json")
    params, _ = load_checkpoint(run / "checkpoint")
    team = _load_team(run / "team.json")
    if args.dataset is None:
        scenes = generate_dataset(cfg.scene, cfg.seed if args.seed is None else args.seed, cfg.n_val, stream=1)
    else:
        path = Path(args.dataset)
        scenes = read_dataset(path / "val.jsonl" if path.is_dir() else path)
    m = evaluate(params, scenes, team, cfg.partition, cfg).metrics
    result = dict(
        ap=m.ap, ap_buckets=m.ap_buckets, scale_std_mean=m.scale_std_mean,
        center_within_eta_frac=m.center_within_eta_frac, n_scenes=len(scenes),
    )
    (run / "eval.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))
    return 0


def cmd_ablate(args) -> int:
    base = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0, 1, 2]
    if args.seed is not None:
        seeds = [args.seed + s for s in seeds]
    report = ablate(base, seeds=seeds, settings=args.settings.split(","), out_dir=args.out)
    sys.stdout.write(report.csv_text())
    if "S1" in args.settings and "S3" in args.settings:
        print(f"scale std ratio S3/S1: {report.scale_std_ratio:.4f}")
    return 0


def cmd_match(args) -> int:
    cfg = _config(args)
    if args.dataset is None:
        raise SystemExit("match needs --dataset <scene file>")
    scene = read_dataset(args.dataset)[args.index]
    if args.checkpoint:
        run = Path(args.checkpoint)
        params, _ = load_checkpoint(run / "checkpoint")
        team = _load_team(run / "team.json")
    else:
        ss = np.random.SeedSequence(cfg.seed)
        team_seed, param_seed, _ = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        team = init_team(cfg.partition, cfg.proportions, cfg.n_queries, team_seed)
        params = init_params(cfg.model, param_seed)
    mask = build_attention_mask(team.group_sizes)
    _, final = decode(scene.features, team, params, mask, cfg.model)
    groups = object_groups(scene, cfg.partition, cfg.scale_mode)
    result = team_match(team, final, scene.objects, cfg.partition, cfg.cost_weights, groups)
    payload = dict(
        pairs=[dict(query=q, object=o, query_group=int(team.group_of[q]), object_group=int(groups[o]))
               for q, o in result.pairs],
        unmatched_objects=result.unmatched_objects,
        total_cost=result.total_cost,
    )
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="queryteam", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--dataset", help="JSON Lines scene file, or a directory with train.jsonl/val.jsonl")
        return p

    common(sub.add_parser("generate", help="write train/val scene files")).set_defaults(func=cmd_generate)
    p = common(sub.add_parser("train", help="train one configuration"))
    p.add_argument("--setting", choices=SETTINGS, help="apply an ablation arm to the config")
    p.set_defaults(func=cmd_train)
    common(sub.add_parser("eval", help="evaluate a trained run directory (--out)")).set_defaults(func=cmd_eval)
    p = common(sub.add_parser("ablate", help="run the S1-S5 ablation"))
    p.add_argument("--seeds", help="comma separated seeds, default 0,1,2 (offset by --seed)")
    p.add_argument("--settings", default=",".join(SETTINGS))
    p.set_defaults(func=cmd_ablate)
    p = common(sub.add_parser("match", help="group-wise matching on one scene"), out_required=False)
    p.add_argument("--index", type=int, default=0, help="line of the scene file to use")
    p.add_argument("--checkpoint", help="trained run directory; an untrained model is used otherwise")
    p.add_argument("--setting", choices=SETTINGS)
    p.set_defaults(func=cmd_match)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)
