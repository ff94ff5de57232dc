"""Pretrain -> fine-tune -> evaluate over one varied setting, several seeds."""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..corpus import Segment, Vocab
from ..synth import GroundTruth
from .config import ConfigError, RunConfig
from .downstream import build_task, finetune
from .training import pretrain

log = logging.getLogger(__name__)

AXES = ("fusion_kind", "fusion_layer", "fusion_count", "ablation")
MIN_SWEEP_LAYERS = 3


def run_one(cfg: RunConfig, segments: Sequence[Segment], vocab: Vocab,
            gt: GroundTruth) -> dict:
    """Pretrain and fine-tune once; return held-out metrics."""
    result = pretrain(cfg, segments, vocab)
    data = build_task(gt, vocab, cfg.finetune.task, cfg.seed, cfg.finetune.train_fraction)
    ft = finetune(cfg, result.model.encoder, data)
    m = ft.metrics
    return {
        "micro_f1": m["all"]["micro_f1"],
        "ambiguous_f1": m.get("ambiguous", {}).get("micro_f1", float("nan")),
        "final_l_plm": float(result.log.column("l_plm")[-1]) if cfg.total_steps else float("nan"),
    }


def settings_for(axis: str, base: RunConfig) -> list[tuple[str, RunConfig]]:
    """The configurations compared along ``axis``.

    ``fusion_layer`` and ``fusion_count`` need room for three insertion
    points, so the encoder is deepened to at least three layers for every
    row of those axes.
    """
    if axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {AXES}")
    base = copy.deepcopy(base)
    out = []

    def variant(label, kind=None, layers=None, enabled=True, weight=None, depth=None):
        c = copy.deepcopy(base)
        if depth is not None:
            c.model.num_layers = max(c.model.num_layers, depth)
        c.fusion.enabled = enabled
        if kind is not None:
            c.fusion.kind = kind
        if layers is not None:
            c.fusion.layer_indices = list(layers)
        if weight is not None:
            c.contrastive.weight = weight
        out.append((label, c))

    if axis == "fusion_kind":
        variant("concat", kind="concat")
        variant("attention", kind="attention")
    elif axis == "fusion_layer":
        n = max(base.model.num_layers, MIN_SWEEP_LAYERS)
        for label, l in (("layer=1", 1), ("layer=mid", (n + 1) // 2), ("layer=last", n)):
            variant(label, layers=[l], depth=n)
    elif axis == "fusion_count":
        n = max(base.model.num_layers, MIN_SWEEP_LAYERS)
        for k in (1, 2, 3):
            variant(f"modules={k}", layers=range(1, k + 1), depth=n)
    else:
        variant("fusion+contrastive", enabled=True,
                weight=base.contrastive.weight or 1.0)
        variant("ablated", enabled=False, weight=0.0)
    return out


def config_key(cfg: RunConfig) -> str:
    """Fingerprint of everything that affects a run's metrics."""
    d = cfg.to_dict()
    for k in ("mode", "paths", "sweep"):
        d.pop(k, None)
    return json.dumps(d, sort_keys=True)


@dataclass
class SweepTable:
    axis: str
    rows: list[dict] = field(default_factory=list)

    def means(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for label in dict.fromkeys(r["setting"] for r in self.rows):
            sel = [r for r in self.rows if r["setting"] == label]
            out[label] = {k: sum(r[k] for r in sel) / len(sel)
                          for k in ("micro_f1", "ambiguous_f1")}
        return out

    def to_markdown(self) -> str:
        seeds = sorted({r["seed"] for r in self.rows})
        head = "| setting | " + " | ".join(f"seed {s}" for s in seeds) + " | mean | mean (ambiguous) |"
        lines = [head, "|" + "---|" * (len(seeds) + 3)]
        means = self.means()
        for label, m in means.items():
            vals = {r["seed"]: r["micro_f1"] for r in self.rows if r["setting"] == label}
            cells = " | ".join(f"{vals[s]:.3f}" for s in seeds)
            lines.append(f"| {label} | {cells} | {m['micro_f1']:.3f} | {m['ambiguous_f1']:.3f} |")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["axis", "setting", "seed", "micro_f1",
                                               "ambiguous_f1", "final_l_plm"])
            w.writeheader()
            for r in self.rows:
                w.writerow({"axis": self.axis, **r})


def sweep(base: RunConfig, axis: str, segments: Sequence[Segment], vocab: Vocab,
          gt: GroundTruth, seeds: Sequence[int] | None = None,
          cache: dict | None = None, out_dir=None) -> SweepTable:
    """Run every setting of ``axis`` for every seed (shared across settings).

    ``cache`` maps a configuration fingerprint to metrics so that settings
    repeated across axes are trained once.
    """
    seeds = list(seeds) if seeds is not None else list(base.sweep.seeds)
    cache = {} if cache is None else cache
    table = SweepTable(axis)
    for label, cfg in settings_for(axis, base):
        for seed in seeds:
            c = copy.deepcopy(cfg)
            c.seed = seed
            c.validate()
            key = config_key(c)
            if key not in cache:
                log.info("sweep %s: %s seed %d", axis, label, seed)
                cache[key] = run_one(c, segments, vocab, gt)
            table.rows.append({"setting": label, "seed": seed, **cache[key]})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.write_csv(out / f"sweep_{axis}.csv")
        (out / f"sweep_{axis}.md").write_text(table.to_markdown() + "\n", encoding="utf-8")
    return table
