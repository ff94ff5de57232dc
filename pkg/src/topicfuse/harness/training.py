"""Pretraining loop and model <-> checkpoint conversion."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..autograd import NumericError, Tape
from ..corpus import Segment, Vocab, iter_batches, mask_batch
from ..encoder import ModelConfig
from ..fusion import FusionConfig
from ..model import TopicAwareLM
from ..optim import AdamWState, adamw_step, warmup_lr
from .checkpoint import Checkpoint, check_shapes, save_checkpoint
from .config import RunConfig

log = logging.getLogger(__name__)

LOG_FIELDS = ("kind", "step", "l_plm", "l_aux", "l_contrastive", "lr",
              "word_acc", "entity_acc", "precision", "recall", "micro_f1")


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        steps = [r["step"] for r in self.rows if r["kind"] == row["kind"]]
        if steps and row["step"] <= steps[-1]:
            raise ValueError("metrics steps must increase")
        for k, v in row.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericError(f"metric {k} is not finite at step {row['step']}")
        self.rows.append(row)

    def column(self, name: str, kind: str = "step") -> np.ndarray:
        return np.array([r[name] for r in self.rows if r["kind"] == kind and r.get(name) != ""],
                        dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, restval="")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def model_config_for(cfg: RunConfig, vocab: Vocab) -> ModelConfig:
    m = ModelConfig(**asdict(cfg.model))
    m.word_vocab_size = vocab.n_words
    m.entity_vocab_size = vocab.n_entities
    return m


def build_model(cfg: RunConfig, vocab: Vocab) -> TopicAwareLM:
    return TopicAwareLM(model_config_for(cfg, vocab), FusionConfig(**asdict(cfg.fusion)),
                        seed=cfg.seed)


def to_checkpoint(model: TopicAwareLM, state: AdamWState | None, cfg: RunConfig,
                  vocab: Vocab, extra: dict | None = None) -> Checkpoint:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    meta = {"config": cfg.to_dict(), "vocab": vocab.to_dict(), "seed": cfg.seed,
            "step": state.step if state else 0}
    if state is not None:
        for name in model.state_dict():
            if name in state.m:
                tensors[f"opt.m.{name}"] = state.m[name]
                tensors[f"opt.v.{name}"] = state.v[name]
        meta["optimizer"] = {k: getattr(state, k) for k in
                             ("learning_rate", "beta1", "beta2", "epsilon", "weight_decay")}
    if extra:
        meta.update(extra)
    return Checkpoint(tensors, meta)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[TopicAwareLM, AdamWState, RunConfig, Vocab]:
    from .config import config_from_dict

    cfg = config_from_dict(ckpt.metadata["config"])
    vocab = Vocab.from_dict(ckpt.metadata["vocab"])
    model = build_model(cfg, vocab)
    expected = {f"model.{k}": v.shape for k, v in model.state_dict().items()}
    check_shapes(ckpt, expected)
    model.load_state_dict({k[len("model."):]: v for k, v in ckpt.tensors.items()
                           if k.startswith("model.")})
    state = AdamWState(**ckpt.metadata.get("optimizer", {}), step=ckpt.metadata.get("step", 0))
    for name in model.state_dict():
        if f"opt.m.{name}" in ckpt.tensors:
            state.m[name] = ckpt.tensors[f"opt.m.{name}"].copy()
            state.v[name] = ckpt.tensors[f"opt.v.{name}"].copy()
    return model, state, cfg, vocab


@dataclass
class PretrainResult:
    model: TopicAwareLM
    state: AdamWState
    log: MetricsLog
    checkpoint: Checkpoint


def pretrain(cfg: RunConfig, segments: Sequence[Segment], vocab: Vocab,
             out_dir=None) -> PretrainResult:
    """Masked word/entity prediction plus weighted contrastive loss.

    Deterministic in ``cfg.seed``: batch order, masking and dropout each draw
    from generators seeded by ``(seed, step)``.
    """
    cfg.validate()
    model = build_model(cfg, vocab)
    params = dict(model.named_parameters())
    o = cfg.optim
    state = AdamWState(o.learning_rate, o.beta1, o.beta2, o.epsilon, o.weight_decay)
    metrics = MetricsLog()
    out = Path(out_dir) if out_dir else None
    last_good = to_checkpoint(model, state, cfg, vocab)
    batches = iter_batches(segments, cfg.batch_size, cfg.seed)

    for step in range(1, cfg.total_steps + 1):
        segs = next(batches)
        batch = mask_batch(segs, cfg.masking.word_rate, cfg.masking.entity_rate,
                           np.random.default_rng([cfg.seed, step, 1]))
        stats: dict = {}
        try:
            with Tape() as tape:
                parts = model.losses(batch, cfg.contrastive,
                                     np.random.default_rng([cfg.seed, step, 2]), stats)
        except NumericError:
            if out is not None:
                save_checkpoint(last_good, out / "last_good.kplt")
            raise
        grads = tape.backward(parts.total)
        named = {name: grads[p] for name, p in params.items() if p in grads}
        lr = warmup_lr(step, o.learning_rate, cfg.warmup_steps)
        adamw_step(params, named, state, lr)

        if step % cfg.log_every == 0 or step == cfg.total_steps:
            metrics.add(kind="step", step=step, l_plm=parts.plm.item(), l_aux=parts.aux.item(),
                        l_contrastive=parts.contrastive.item(), lr=float(lr),
                        word_acc=stats["word_correct"] / max(1, stats["word_count"])
                        if stats.get("word_count") else 0.0,
                        entity_acc=stats["entity_correct"] / max(1, stats["entity_count"])
                        if stats.get("entity_count") else 0.0)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            last_good = to_checkpoint(model, state, cfg, vocab)
            if out is not None:
                save_checkpoint(last_good, out / f"step_{step:06d}.kplt")
        if step % 250 == 0:
            log.info("step %d  plm %.3f  aux %.3f  ctr %.3f", step, parts.plm.item(),
                     parts.aux.item(), parts.contrastive.item())

    final = to_checkpoint(model, state, cfg, vocab)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(final, out / "pretrained.kplt")
        metrics.write_csv(out / "pretrain_metrics.csv")
    return PretrainResult(model, state, metrics, final)
