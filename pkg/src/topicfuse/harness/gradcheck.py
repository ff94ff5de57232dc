"""Central finite-difference checks of tape gradients, in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..autograd import Tape, Tensor
from ..corpus import Mention, Segment, mask_batch
from ..encoder import ModelConfig
from ..fusion import FusionConfig
from ..model import TopicAwareLM
from ..objectives import ContrastiveConfig


@dataclass
class CheckResult:
    name: str
    rel_error: float
    n_points: int

    @property
    def ok(self) -> bool:
        return self.rel_error < 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-12) over the sampled coordinates."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def check_gradients(fn: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]],
                    n_points: int = 10, eps: float = 1e-4,
                    rng: np.random.Generator | None = None) -> list[CheckResult]:
    """Compare tape gradients of ``fn()`` with central differences.

    ``fn`` must rebuild the scalar loss from the current parameter values.
    ``n_points`` coordinates are drawn per parameter (all of them if fewer).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with Tape() as tape:
        loss = fn()
    grads = tape.backward(loss)
    out = []
    for name, p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks need float64 parameters")
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_points, flat.size), replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        analytic = grads.get(p, np.zeros_like(p.data)).reshape(-1)[idx]
        out.append(CheckResult(name, relative_error(analytic, numeric), len(idx)))
    return out


def tiny_batch(seed: int = 0, word_vocab: int = 12, entity_vocab: int = 8):
    """Two segments on different topics, with masked words and entities."""
    segs = [
        Segment(5, [5, 6, 7, 8, 9], [Mention(1, 3, 2), Mention(4, 5, 3)], "p0"),
        Segment(6, [6, 10, 11, 5], [Mention(0, 1, 4)], "p1"),
    ]
    batch = mask_batch(segs, word_mask_rate=0.4, entity_mask_rate=0.5,
                       seed=np.random.default_rng(seed))
    # guarantee both loss terms are live
    if not (batch.word_labels >= 0).any():
        batch.word_labels[0, 2] = batch.tokens[0, 2]
        batch.tokens[0, 2] = 2
    if not (batch.entity_labels >= 0).any():
        batch.entity_labels[0, 0] = batch.entity_ids[0, 0]
        batch.entity_ids[0, 0] = 0
    return batch, word_vocab, entity_vocab


def composed_loss_check(kind: str = "attention", n_points: int = 10, seed: int = 0,
                        eps: float = 1e-4) -> list[CheckResult]:
    """Check the full pretraining loss (2 layers, d=16, batch 2, contrastive on)."""
    batch, nw, ne = tiny_batch(seed)
    cfg = ModelConfig(word_vocab_size=nw, entity_vocab_size=ne, num_layers=2, hidden_dim=16,
                      num_heads=2, ffn_dim=32, entity_embed_dim=8, max_positions=16,
                      dropout_rate=0.0, dtype="float64")
    model = TopicAwareLM(cfg, FusionConfig(kind=kind, layer_indices=[1]), seed=seed)
    ccfg = ContrastiveConfig(temperature=0.07, weight=1.0)
    return check_gradients(lambda: model.losses(batch, ccfg).total,
                           model.named_parameters(), n_points, eps,
                           np.random.default_rng([seed, 3]))


def _t(rng, *shape, low=None):
    x = rng.normal(size=shape)
    if low is not None:
        x = np.abs(x) + low
    return Tensor(x, requires_grad=True)


def _op_cases():
    """name -> builder(rng) returning (output_fn, [params])."""
    from .. import autograd as ag
    from ..objectives import cosine_sim

    def unary(op, low=None):
        def build(rng):
            a = _t(rng, 3, 4, low=low)
            return (lambda: op(a)), [a]
        return build

    def binary(op, low=None, shape_b=(3, 4)):
        def build(rng):
            a, b = _t(rng, 3, 4), _t(rng, *shape_b, low=low)
            return (lambda: op(a, b)), [a, b]
        return build

    def where(rng):
        a, b = _t(rng, 3, 4), _t(rng, 3, 4)
        cond = rng.random((3, 4)) < 0.5
        return (lambda: ag.where(cond, a, b)), [a, b]

    def clamp(rng):
        a = _t(rng, 3, 4)
        a.data[np.abs(a.data) < 0.05] += 0.2   # keep away from the kink
        return (lambda: ag.clamp_min(a, 0.0)), [a]

    def take(rng):
        a = _t(rng, 5, 3)
        idx = (np.array([0, 2, 2, 4]), np.array([1, 0, 0, 2]))
        return (lambda: ag.take(a, idx)), [a]

    def embedding(rng):
        table = _t(rng, 6, 3)
        ids = rng.integers(6, size=(2, 4))
        return (lambda: ag.embedding(table, ids)), [table]

    def concat(rng):
        a, b = _t(rng, 2, 3), _t(rng, 2, 5)
        return (lambda: ag.concat([a, b], axis=-1)), [a, b]

    def stack(rng):
        a, b = _t(rng, 2, 3), _t(rng, 2, 3)
        return (lambda: ag.stack([a, b], axis=1)), [a, b]

    def matmul(rng):
        a, b = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
        return (lambda: ag.matmul(a, b)), [a, b]

    def cross_entropy(rng):
        a = _t(rng, 5, 4)
        labels = rng.integers(4, size=5)
        return (lambda: ag.cross_entropy(a, labels)), [a]

    def layer_norm(rng):
        x, s, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
        return (lambda: ag.layer_norm(x, s, b, 1e-5)), [x, s, b]

    def cosine(rng):
        a, b = _t(rng, 4, 5), _t(rng, 4, 5)
        return (lambda: cosine_sim(a, b)), [a, b]

    return {
        "add": binary(ag.add, shape_b=(4,)),
        "sub": binary(ag.sub),
        "mul": binary(ag.mul, shape_b=(1, 4)),
        "div": binary(ag.div, low=0.5),
        "neg": unary(ag.neg),
        "exp": unary(ag.exp),
        "log": unary(ag.log, low=0.5),
        "sqrt": unary(ag.sqrt, low=0.5),
        "clamp_min": clamp,
        "where": where,
        "sigmoid": unary(ag.sigmoid),
        "gelu": unary(ag.gelu),
        "tsum": unary(lambda a: ag.tsum(a, axis=1)),
        "mean": unary(lambda a: ag.mean(a, axis=0, keepdims=True)),
        "reshape": unary(lambda a: ag.reshape(a, (2, 6))),
        "transpose": unary(ag.transpose),
        "broadcast_to": unary(lambda a: ag.broadcast_to(ag.reshape(a, (3, 1, 4)), (3, 2, 4))),
        "take": take,
        "embedding": embedding,
        "concat": concat,
        "stack": stack,
        "matmul": matmul,
        "softmax": unary(lambda a: ag.softmax(a, axis=-1)),
        "log_softmax": unary(lambda a: ag.log_softmax(a, axis=-1)),
        "cross_entropy": cross_entropy,
        "layer_norm": layer_norm,
        "cosine_sim": cosine,
    }


OP_NAMES = tuple(_op_cases())


def op_check(name: str, n_points: int = 10, seed: int = 0, eps: float = 1e-4) -> CheckResult:
    """Worst error over ``n_points`` random inputs; every coordinate is compared.

    Non-scalar outputs are reduced with a fixed random weighting so the check
    covers a full vector-Jacobian product.
    """
    from .. import autograd as ag

    build = _op_cases()[name]
    worst = 0.0
    for k in range(n_points):
        rng = np.random.default_rng([seed, k])
        out_fn, params = build(rng)
        weight = rng.normal(size=np.shape(out_fn().data))

        def loss():
            return ag.tsum(out_fn() * weight)

        results = check_gradients(loss, [(str(i), p) for i, p in enumerate(params)],
                                  n_points=10 ** 6, eps=eps, rng=rng)
        worst = max(worst, *(r.rel_error for r in results))
    return CheckResult(name, worst, n_points)


def run_all(n_points: int = 10, seed: int = 0) -> list[CheckResult]:
    out = [op_check(n, n_points, seed) for n in OP_NAMES]
    for kind in ("concat", "attention"):
        for r in composed_loss_check(kind, n_points, seed):
            out.append(CheckResult(f"composed[{kind}].{r.name}", r.rel_error, r.n_points))
    return out
