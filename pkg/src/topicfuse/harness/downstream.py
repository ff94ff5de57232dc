"""Synthetic downstream tasks: entity typing and relation classification.

Examples are rendered from the ground-truth relation table as short
sentences ``<head surface> <relation word> <tail surface>`` with both spans
linked. With probability ``context_rate`` a second tail of the same head is
appended (``and <surface>``) as linked context, mirroring the pretraining
text; it is never a prediction target. The split is by head entity, so
held-out examples talk about topic entities never seen during fine-tuning.
Facts whose entities never occur in the pretraining vocabulary are skipped.

* entity typing: the head and the first tail are separate examples. The
  target's entity id is replaced by [MASK_ENT] and the type is read off that
  mention's hidden state.
* relation classification: the relation word is replaced by [MASK] and the
  label is read off the concatenated head/tail mention states.

Fine-tuning never runs the fusion hook.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import autograd as ag
from ..autograd import Tape, Tensor
from ..corpus import MASK_ENT_ID, MASK_ID, Mention, Segment, Vocab, collate
from ..encoder import Encoder, ModelConfig
from ..nn import Linear, Module, dropout
from ..optim import AdamWState, adamw_step
from ..synth import CONNECTIVE, GroundTruth, load_ground_truth
from .checkpoint import Checkpoint, check_shapes
from .config import ConfigError, RunConfig
from .training import MetricsLog


@dataclass
class Example:
    segment: Segment
    target: int              # mention index (typing) or -1 (relation)
    label: int
    ambiguous: bool = False


@dataclass
class TaskData:
    task: str
    labels: list[str]
    train: list[Example]
    test: list[Example]


def build_task(gt: GroundTruth, vocab: Vocab, task: str, seed: int,
               train_fraction: float = 0.7, context_rate: float = 0.5) -> TaskData:
    relations = [(h, r, t) for h, r, t in gt.relations
                 if vocab.has_entity(h) and vocab.has_entity(t)]
    if not relations:
        raise ConfigError("ground truth has no relations over known entities")
    surface = gt.surface_of()
    ambiguous = gt.ambiguous_entities()
    heads = sorted({h for h, _, _ in relations})
    order = np.random.default_rng([seed, 17]).permutation(len(heads))
    n_train = int(round(train_fraction * len(heads)))
    train_heads = {heads[i] for i in order[:n_train]}

    if task == "entity-typing":
        labels = sorted(set(gt.entity_types.values()))
    elif task == "relation-cls":
        labels = sorted({r for _, r, _ in relations})
    else:
        raise ConfigError(f"unknown task {task!r}")
    label_id = {l: i for i, l in enumerate(labels)}

    tails_of: dict[str, list[str]] = {}
    for h, _, t in relations:
        tails_of.setdefault(h, []).append(t)
    rng = np.random.default_rng([seed, 19])

    train, test = [], []
    for h, r, t in relations:
        hs, ts = surface[h].split(), surface[t].split()
        words = hs + [r] + ts
        mentions = [Mention(0, len(hs), vocab.entity_id(h)),
                    Mention(len(hs) + 1, len(words), vocab.entity_id(t))]
        others = [y for y in tails_of[h] if y != t]
        if others and rng.random() < context_rate:
            # a co-mentioned tail of the same head, context only
            y = others[rng.integers(len(others))]
            words = words + [CONNECTIVE]
            mentions.append(Mention(len(words), len(words) + len(surface[y].split()),
                                    vocab.entity_id(y)))
            words = words + surface[y].split()
        tokens = [vocab.word_id(w) for w in words]
        seg = Segment(vocab.entity_id(h), tokens, mentions, page_id=h)
        bucket = train if h in train_heads else test
        if task == "entity-typing":
            for k, e in enumerate((h, t)):
                bucket.append(Example(seg, k, label_id[gt.entity_types[e]], e in ambiguous))
        else:
            bucket.append(Example(seg, -1, label_id[r], t in ambiguous))
    if not train or not test:
        raise ConfigError("downstream split is empty")
    return TaskData(task, labels, train, test)


def permute_labels(data: TaskData, perm: Sequence[int]) -> TaskData:
    """Rename every class ``i`` to ``perm[i]`` (label-invariance checks)."""
    def remap(xs):
        return [Example(x.segment, x.target, int(perm[x.label]), x.ambiguous) for x in xs]
    labels = [""] * len(data.labels)
    for i, p in enumerate(perm):
        labels[p] = data.labels[i]
    return TaskData(data.task, labels, remap(data.train), remap(data.test))


def _input_batch(examples: Sequence[Example], task: str):
    batch = collate([x.segment for x in examples])
    if task == "entity-typing":
        rows = np.arange(len(examples))
        batch.entity_ids[rows, [x.target for x in examples]] = MASK_ENT_ID
    else:
        # relation word sits right after the head span
        for i, x in enumerate(examples):
            batch.tokens[i, x.segment.mentions[0].end + 1] = MASK_ID
    return batch


class TaskModel(Module):
    """Pretrained encoder + a fresh linear head; no fusion parameters."""

    def __init__(self, encoder: Encoder, task: str, n_labels: int, seed: int):
        self.encoder = encoder
        self.task = task
        d = encoder.cfg.hidden_dim
        rng = np.random.default_rng([seed, 29])
        n_in = d if task == "entity-typing" else 2 * d
        self.head = Linear(n_in, n_labels, rng, encoder.cfg.np_dtype)

    def logits(self, examples: Sequence[Example], rng=None) -> Tensor:
        batch = _input_batch(examples, self.task)
        enc = self.encoder.encode(self.encoder.embed_input(batch), batch, None, rng)
        rows = np.arange(len(examples))
        if self.task == "entity-typing":
            feats = enc.entities[rows, np.array([x.target for x in examples])]
        else:
            feats = ag.concat([enc.entities[rows, np.zeros_like(rows)],
                               enc.entities[rows, np.ones_like(rows)]], axis=-1)
        rate = self.encoder.cfg.dropout_rate if rng is not None else 0.0
        return self.head(dropout(feats, rate, rng))


@dataclass
class FinetuneResult:
    model: TaskModel
    log: MetricsLog
    metrics: dict = field(default_factory=dict)
    steps: int = 0


def finetune(cfg: RunConfig, encoder: Encoder, data: TaskData) -> FinetuneResult:
    """Train the head (and encoder) for ``cfg.finetune.epochs`` epochs."""
    ft = cfg.finetune
    model = TaskModel(encoder, data.task, len(data.labels), cfg.seed)
    frozen = {"encoder.word_embed", "encoder.entity_embed"} if ft.freeze_embeddings else set()
    params = {k: p for k, p in model.named_parameters() if k not in frozen}
    state = AdamWState(ft.learning_rate, cfg.optim.beta1, cfg.optim.beta2,
                       cfg.optim.epsilon, cfg.optim.weight_decay)
    metrics = MetricsLog()
    step = 0
    for epoch in range(ft.epochs):
        order = np.random.default_rng([cfg.seed, 31, epoch]).permutation(len(data.train))
        for i in range(0, len(order), ft.batch_size):
            chunk = [data.train[k] for k in order[i:i + ft.batch_size]]
            step += 1
            with Tape() as tape:
                logits = model.logits(chunk, np.random.default_rng([cfg.seed, 37, step]))
                loss = ag.cross_entropy(logits, np.array([x.label for x in chunk]))
            grads = tape.backward(loss)
            adamw_step(params, {k: grads[p] for k, p in params.items() if p in grads}, state)
        m = evaluate(model, data)
        metrics.add(kind="eval", step=epoch + 1, **{k: m["all"][k] for k in
                                                    ("precision", "recall", "micro_f1")})
    return FinetuneResult(model, metrics, evaluate(model, data), step)


def predict(model: TaskModel, examples: Sequence[Example], batch_size: int = 128) -> np.ndarray:
    out = []
    for i in range(0, len(examples), batch_size):
        out.append(model.logits(examples[i:i + batch_size]).data.argmax(-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def micro_prf(gold: Sequence[int], pred: Sequence[int],
              negative: int | None = None) -> dict[str, float]:
    """Micro-averaged precision / recall / F1 from pooled TP, FP, FN counts.

    ``negative`` optionally names a "no label" class that earns no credit.
    """
    gold = np.asarray(gold)
    pred = np.asarray(pred)
    if gold.size == 0:
        raise ConfigError("cannot score an empty split")
    scored_pred = pred != negative if negative is not None else np.ones_like(pred, bool)
    scored_gold = gold != negative if negative is not None else np.ones_like(gold, bool)
    tp = int(((pred == gold) & scored_pred).sum())
    fp = int(scored_pred.sum()) - tp
    fn = int(scored_gold.sum()) - tp
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "micro_f1": f, "tp": tp, "fp": fp, "fn": fn}


def micro_prf_from_confusion(confusion: np.ndarray) -> dict[str, float]:
    c = np.asarray(confusion)
    gold = np.repeat(np.arange(c.shape[0]), c.sum(axis=1))
    pred = np.concatenate([np.repeat(np.arange(c.shape[1]), row) for row in c])
    return micro_prf(gold, pred)


def evaluate(model: TaskModel, data: TaskData) -> dict:
    """Scores on the held-out split, overall and on ambiguous-surface examples."""
    pred = predict(model, data.test)
    gold = np.array([x.label for x in data.test])
    amb = np.array([x.ambiguous for x in data.test])
    out = {"all": micro_prf(gold, pred), "n_test": int(len(gold))}
    if amb.any():
        out["ambiguous"] = micro_prf(gold[amb], pred[amb])
        out["n_ambiguous"] = int(amb.sum())
    return out


def load_task_ground_truth(directory) -> GroundTruth:
    try:
        return load_ground_truth(directory)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def task_checkpoint(model: TaskModel, cfg: RunConfig, vocab: Vocab, data: TaskData,
                    steps: int = 0) -> Checkpoint:
    tensors = {f"task.{k}": v for k, v in model.state_dict().items()}
    meta = {"config": cfg.to_dict(), "vocab": vocab.to_dict(), "seed": cfg.seed,
            "step": steps, "task": data.task, "labels": data.labels,
            "model_config": asdict(model.encoder.cfg)}
    return Checkpoint(tensors, meta)


def task_model_from_checkpoint(ckpt: Checkpoint) -> tuple[TaskModel, RunConfig, Vocab]:
    from .config import config_from_dict

    meta = ckpt.metadata
    if "task" not in meta:
        raise ConfigError("checkpoint holds no fine-tuned head")
    cfg = config_from_dict(meta["config"])
    vocab = Vocab.from_dict(meta["vocab"])
    encoder = Encoder(ModelConfig(**meta["model_config"]), np.random.default_rng(0))
    model = TaskModel(encoder, meta["task"], len(meta["labels"]), cfg.seed)
    check_shapes(ckpt, {f"task.{k}": v.shape for k, v in model.state_dict().items()})
    model.load_state_dict({k[len("task."):]: v for k, v in ckpt.tensors.items()})
    return model, cfg, vocab
