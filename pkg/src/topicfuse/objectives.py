"""Topic-entity-aware contrastive loss and the total pretraining objective.

For every segment S the pair ``{h_cls(S), e_t}`` joins the group of its topic
entity. A topic's in-batch group therefore holds the [CLS] vectors of all its
segments plus a single copy of its projected topic embedding. Every other
group supplies negatives. For each anchor ``h`` of each segment and each
positive ``h+`` from the anchor's own group (self-pairs excluded)::

    term = -log( exp(sim(h, h+)/tau) / (exp(sim(h, h+)/tau) + sum_neg exp(sim(h, h')/tau)) )

The batch loss is the mean term over all (anchor, positive) pairs that have
at least one negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import NumericError, Tensor

COSINE_EPS = 1e-8


@dataclass
class ContrastiveConfig:
    temperature: float = 0.07
    weight: float = 1.0

    def validate(self) -> None:
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class DeltaSet:
    """In-batch members and anchors.

    ``members`` is [M, d]: rows ``0..B-1`` are the [CLS] vectors, the
    remaining rows are one projected topic embedding per distinct topic.
    ``groups[m]`` is the topic id of member ``m``; ``anchors[m]`` is how
    many segments use member ``m`` as an anchor.
    """

    members: Tensor
    groups: np.ndarray
    anchors: np.ndarray

    @classmethod
    def build(cls, cls_vectors: Tensor, topic_ids: np.ndarray,
              topic_reprs: Tensor) -> "DeltaSet":
        """``topic_reprs`` is [B, d] (one row per segment, duplicates allowed)."""
        topic_ids = np.asarray(topic_ids)
        uniq, first, counts = np.unique(topic_ids, return_index=True, return_counts=True)
        members = ag.concat([cls_vectors, topic_reprs[first]], axis=0)
        groups = np.concatenate([topic_ids, uniq])
        anchors = np.concatenate([np.ones(len(topic_ids), dtype=np.int64), counts])
        return cls(members, groups, anchors)

    def group_map(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for m, g in enumerate(self.groups):
            out.setdefault(int(g), []).append(m)
        return out


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity along the last axis, norms floored at ``COSINE_EPS``."""
    na = ag.clamp_min(ag.sqrt(ag.tsum(a * a, axis=-1)), COSINE_EPS)
    nb = ag.clamp_min(ag.sqrt(ag.tsum(b * b, axis=-1)), COSINE_EPS)
    return ag.tsum(a * b, axis=-1) / (na * nb)


def _normalize_rows(x: Tensor) -> Tensor:
    n = ag.clamp_min(ag.sqrt(ag.tsum(x * x, axis=-1, keepdims=True)), COSINE_EPS)
    return x / n


def contrastive_loss(delta: DeltaSet, cfg: ContrastiveConfig) -> Tensor:
    cfg.validate()
    groups = delta.groups
    same = groups[:, None] == groups[None, :]
    pos = same & ~np.eye(len(groups), dtype=bool)
    neg = ~same
    has_neg = neg.any(axis=1)
    weight = pos * (delta.anchors * has_neg)[:, None]
    total = weight.sum()
    dtype = delta.members.dtype
    if total == 0:
        return Tensor(np.zeros((), dtype=dtype))

    z = _normalize_rows(delta.members)
    s = ag.matmul(z, ag.transpose(z)) * (1.0 / cfg.temperature)
    # shift each row by a constant; it cancels inside the log-ratio
    shift = s.data.max(axis=1, keepdims=True)
    e = ag.exp(s - shift)
    neg_sum = ag.tsum(e * neg.astype(dtype), axis=1, keepdims=True)
    lse = ag.log(e + neg_sum) + shift
    terms = lse - s
    return ag.tsum(terms * (weight / total).astype(dtype))


def contrastive_loss_reference(members: np.ndarray, groups, anchors,
                               temperature: float) -> float:
    """Scalar enumeration of every (anchor, positive, negative-set) term."""
    members = [list(map(float, row)) for row in np.asarray(members)]
    groups = [int(g) for g in groups]
    anchors = [int(a) for a in anchors]

    def sim(u, v):
        dot = sum(x * y for x, y in zip(u, v))
        nu = max(math.sqrt(sum(x * x for x in u)), COSINE_EPS)
        nv = max(math.sqrt(sum(x * x for x in v)), COSINE_EPS)
        return dot / (nu * nv)

    total, count = 0.0, 0
    for a, ga in enumerate(groups):
        negs = [j for j, g in enumerate(groups) if g != ga]
        if not negs:
            continue
        neg_exp = sum(math.exp(sim(members[a], members[j]) / temperature) for j in negs)
        for p, gp in enumerate(groups):
            if p == a or gp != ga:
                continue
            e_pos = math.exp(sim(members[a], members[p]) / temperature)
            total += anchors[a] * -math.log(e_pos / (e_pos + neg_exp))
            count += anchors[a]
    return total / count if count else 0.0


def total_loss(l_plm: Tensor, l_aux: Tensor, l_batch: Tensor,
               cfg: ContrastiveConfig) -> Tensor:
    """L_PLM + L_Aux + weight * L_batch."""
    for name, value in (("L_PLM", l_plm), ("L_Aux", l_aux), ("L_contrastive", l_batch)):
        if not np.all(np.isfinite(value.data)):
            raise NumericError(f"{name} is not finite")
    out = l_plm + l_aux
    if cfg.weight:
        out = out + l_batch * float(cfg.weight)
    return out
