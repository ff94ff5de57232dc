"""Command line entry point: ``topicfuse <subcommand> [--config F] [--seed N] [--out D]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import read_corpus
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.config import ConfigError, RunConfig, load_config, save_config

log = logging.getLogger("topicfuse")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.mode = args.command
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.synth.seed = args.seed
    if args.out:
        cfg.paths.out = args.out
    cfg.validate()
    return cfg


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_corpus(cfg: RunConfig, vocab=None):
    return read_corpus(_require(cfg.paths.corpus, "corpus"), vocab=vocab)


def _checkpoint_path(cfg: RunConfig, default: str) -> Path:
    return _require(cfg.paths.checkpoint or str(Path(cfg.paths.out) / default), "checkpoint")


def cmd_gen_corpus(cfg: RunConfig, args) -> dict:
    from .synth import generate_synthetic

    corpus = generate_synthetic(cfg.synth)
    out = corpus.write(cfg.paths.out)
    n = sum(len(p["sentences"]) for p in corpus.pages)
    return {"out": str(out), "sentences": n, "seed": cfg.synth.seed}


def cmd_pretrain(cfg: RunConfig, args) -> dict:
    from .harness.training import pretrain

    segments, vocab = _load_corpus(cfg)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    result = pretrain(cfg, segments, vocab, out_dir=out)
    last = result.log.rows[-1] if result.log.rows else {}
    return {"checkpoint": str(out / "pretrained.kplt"), "seed": cfg.seed,
            "final": {k: last.get(k) for k in ("step", "l_plm", "l_aux", "l_contrastive")}}


def cmd_finetune(cfg: RunConfig, args) -> dict:
    from .harness.downstream import build_task, finetune, load_task_ground_truth, task_checkpoint
    from .harness.training import model_from_checkpoint

    model, _, _, vocab = model_from_checkpoint(load_checkpoint(_checkpoint_path(cfg, "pretrained.kplt")))
    gt = load_task_ground_truth(cfg.paths.ground_truth)
    data = build_task(gt, vocab, cfg.finetune.task, cfg.seed, cfg.finetune.train_fraction)
    result = finetune(cfg, model.encoder, data)
    out = Path(cfg.paths.out)
    path = save_checkpoint(task_checkpoint(result.model, cfg, vocab, data, result.steps),
                           out / f"finetuned_{cfg.finetune.task}.kplt")
    result.log.write_csv(out / f"finetune_{cfg.finetune.task}_metrics.csv")
    return {"checkpoint": str(path), "seed": cfg.seed, "metrics": result.metrics}


def cmd_eval(cfg: RunConfig, args) -> dict:
    from .harness.downstream import build_task, evaluate, load_task_ground_truth, \
        task_model_from_checkpoint
    from .harness.training import MetricsLog

    path = _checkpoint_path(cfg, f"finetuned_{cfg.finetune.task}.kplt")
    model, tcfg, vocab = task_model_from_checkpoint(load_checkpoint(path))
    gt = load_task_ground_truth(cfg.paths.ground_truth)
    data = build_task(gt, vocab, model.task, tcfg.seed, tcfg.finetune.train_fraction)
    metrics = evaluate(model, data)
    log_ = MetricsLog()
    log_.add(kind="eval", step=1, **{k: metrics["all"][k] for k in ("precision", "recall", "micro_f1")})
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    log_.write_csv(out / f"eval_{model.task}_metrics.csv")
    return {"checkpoint": str(path), "seed": tcfg.seed, "metrics": metrics}


def cmd_gate_report(cfg: RunConfig, args) -> dict:
    from .harness.gate_report import gate_report, pronoun_summary, write_report
    from .harness.training import model_from_checkpoint

    model, _, mcfg, vocab = model_from_checkpoint(
        load_checkpoint(_checkpoint_path(cfg, "pretrained.kplt")))
    segments, _ = _load_corpus(cfg, vocab=vocab)
    segments = segments[:args.limit] if args.limit else segments
    report = gate_report(model, segments, vocab, top_k=args.top_k)
    txt, page = write_report(report, cfg.paths.out)
    return {"text": str(txt), "html": str(page), "seed": mcfg.seed, **pronoun_summary(report)}


def cmd_gradcheck(cfg: RunConfig, args) -> dict:
    from .harness.gradcheck import run_all

    results = run_all(seed=cfg.seed)
    for r in results:
        print(f"{'ok ' if r.ok else 'BAD'}  {r.rel_error:.2e}  {r.name}")
    failed = [r.name for r in results if not r.ok]
    return {"checked": len(results), "failed": failed, "seed": cfg.seed}


def cmd_sweep(cfg: RunConfig, args) -> dict:
    from .harness.downstream import load_task_ground_truth
    from .harness.sweep import sweep

    segments, vocab = _load_corpus(cfg)
    gt = load_task_ground_truth(cfg.paths.ground_truth)
    axis = args.axis or cfg.sweep.axis
    seeds = [cfg.seed] if args.seed is not None else cfg.sweep.seeds
    table = sweep(cfg, axis, segments, vocab, gt, seeds=seeds, out_dir=cfg.paths.out)
    print(table.to_markdown())
    return {"axis": axis, "seeds": seeds, "means": table.means()}


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gate-report": cmd_gate_report,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topicfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file mirroring RunConfig")
        p.add_argument("--seed", type=int, help="overrides seed (and synth.seed)")
        p.add_argument("--out", help="output directory (paths.out)")
        if name == "gate-report":
            p.add_argument("--top-k", type=int, default=50)
            p.add_argument("--limit", type=int, default=20, help="segments to report (0 = all)")
        if name == "sweep":
            p.add_argument("--axis", choices=("fusion_kind", "fusion_layer", "fusion_count",
                                              "ablation"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        summary = COMMANDS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    if args.command == "gradcheck" and summary["failed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
