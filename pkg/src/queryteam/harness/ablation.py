"""Five-arm ablation: baseline, grouping by absolute / relative scale, position constraint, preference extraction."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import SETTING_LABELS, SETTINGS, RunConfig, setting_config
from .scenes import generate_dataset
from .training import train

log = logging.getLogger(__name__)

REPORT_FIELDS = (
    "setting", "label", "config_hash", "seeds", "ap", "ap_bucket0", "ap_bucket1", "ap_bucket2",
    "scale_std_mean", "center_within_eta_frac",
)


@dataclass
class AblationReport:
    rows: list[dict] = field(default_factory=list)
    per_seed: dict[str, list[dict]] = field(default_factory=dict)
    config_hashes: dict[str, str] = field(default_factory=dict)

    def row(self, setting: str) -> dict:
        return next(r for r in self.rows if r["setting"] == setting)

    @property
    def scale_std_ratio(self) -> float:
        """Mean matched-scale spread of S3 relative to S1."""
        return self.row("S3")["scale_std_mean"] / self.row("S1")["scale_std_mean"]

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in REPORT_FIELDS})
        return buf.getvalue()

    def to_json(self) -> dict:
        return dict(
            rows=self.rows,
            per_seed=self.per_seed,
            config_hashes=self.config_hashes,
            scale_std_ratio_s3_over_s1=self.scale_std_ratio,
            s1_center_within_eta_frac=self.row("S1")["center_within_eta_frac"],
        )

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(self.csv_text())
        (out / "ablation.json").write_text(json.dumps(self.to_json(), indent=2))


def _summary(final: dict) -> dict:
    buckets = list(final["ap_buckets"]) + [math.nan] * 3
    return dict(
        ap=final["ap"], ap_bucket0=buckets[0], ap_bucket1=buckets[1], ap_bucket2=buckets[2],
        scale_std_mean=final["scale_std_mean"],
        center_within_eta_frac=final["center_within_eta_frac"],
    )


def ablate(
    base: RunConfig,
    seeds: Sequence[int] = (0, 1, 2),
    settings: Sequence[str] = SETTINGS,
    out_dir: str | Path | None = None,
) -> AblationReport:
    """Train every setting on every seed; each row averages the final metrics over seeds.

    All settings of one seed share the same training and validation scenes.
    """
    report = AblationReport()
    per_seed: dict[str, list[dict]] = {s: [] for s in settings}
    for seed in seeds:
        seeded = replace(base, seed=seed)
        train_set = generate_dataset(seeded.scene, seed, seeded.n_train, stream=0)
        val_set = generate_dataset(seeded.scene, seed, seeded.n_val, stream=1)
        for setting in settings:
            cfg = setting_config(seeded, setting)
            run_dir = None if out_dir is None else Path(out_dir) / f"{setting}_seed{seed}"
            result = train(cfg, train_set, val_set, out_dir=run_dir)
            summary = dict(seed=seed, **_summary(result.final))
            per_seed[setting].append(summary)
            report.config_hashes[setting] = cfg.config_hash()
            log.info("%s seed %d: ap %.4f", setting, seed, summary["ap"])

    for setting in settings:
        runs = per_seed[setting]
        row = dict(
            setting=setting,
            label=SETTING_LABELS[setting],
            config_hash=report.config_hashes[setting],
            seeds=" ".join(str(r["seed"]) for r in runs),
        )
        for key in REPORT_FIELDS[4:]:
            row[key] = float(np.mean([r[key] for r in runs]))
        report.rows.append(row)
    report.per_seed = per_seed
    if out_dir is not None:
        report.write(out_dir)
    return report
