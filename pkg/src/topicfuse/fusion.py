"""Topic-entity fusion between transformer layers.

At each insertion point ``l`` the hidden states ``H`` leaving layer ``l-1``
are rewritten position by position::

    g   = sigmoid(F_p(h))                      # how much topic to inject
    h^  = Adapter(h, e_t)                      # concat or attention adapter
    h~  = LayerNorm((1 - g) * h + g * h^)

Padding positions get ``g = 0`` and pass through untouched. Every insertion
point owns its own maps (nothing is shared across layers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import LayerNorm, Linear, Module

KINDS = ("concat", "attention")


@dataclass
class FusionConfig:
    kind: str = "attention"
    layer_indices: list[int] = field(default_factory=lambda: [1])
    enabled: bool = True

    def validate(self, num_layers: int) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"fusion kind must be one of {KINDS}, got {self.kind!r}")
        if len(set(self.layer_indices)) != len(self.layer_indices):
            raise ValueError("fusion layer_indices must be distinct")
        bad = [l for l in self.layer_indices if not 1 <= l <= num_layers]
        if self.enabled and bad:
            raise ValueError(f"fusion layer_indices {bad} outside [1, {num_layers}]")


class FusionLayer(Module):
    """Parameters of one insertion point."""

    def __init__(self, kind: str, d: int, entity_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.kind = kind
        self.d = d
        self.gate = Linear(d, 1, rng, dtype)          # F_p
        self.topic = Linear(entity_dim, d, rng, dtype)  # F_t
        if kind == "concat":
            self.combine = Linear(2 * d, d, rng, dtype)  # F_c
        else:
            self.query = Linear(d, d, rng, dtype)
            self.key = Linear(d, d, rng, dtype)
            self.value = Linear(d, d, rng, dtype)
        self.norm = LayerNorm(d, dtype)
        self.last_gate: np.ndarray | None = None
        self.last_attention: np.ndarray | None = None

    def adapter(self, h: Tensor, topic_embed: Tensor) -> Tensor:
        """``h`` is [..., d]; ``topic_embed`` is [..., entity_dim], broadcastable."""
        if self.kind == "concat":
            return concat_adapter(h, topic_embed, self)
        return attention_adapter(h, topic_embed, self)


def gate(h: Tensor, layer: FusionLayer, valid: np.ndarray | None = None) -> Tensor:
    """g_p per position, [B, T] in (0, 1); padding positions are exactly 0."""
    g = ag.sigmoid(layer.gate(h))
    g = ag.reshape(g, g.shape[:-1])
    if valid is not None:
        g = g * valid.astype(g.dtype)
    return g


def concat_adapter(h: Tensor, topic_embed: Tensor, layer: FusionLayer) -> Tensor:
    """F_c([h ; F_t(e_t)]) for every position."""
    t = ag.broadcast_to(layer.topic(topic_embed), h.shape)
    return layer.combine(ag.concat([h, t], axis=-1))


def attention_adapter(h: Tensor, topic_embed: Tensor, layer: FusionLayer) -> Tensor:
    """One query (the position) attending over two keys: itself and the topic.

    Returns the mixture and leaves the [..., T, 2] weights on
    ``layer.last_attention``.
    """
    scale = 1.0 / math.sqrt(layer.d)
    topic = layer.topic(topic_embed)
    q = layer.query(h)
    s_self = ag.tsum(q * layer.key(h), axis=-1, keepdims=True) * scale
    s_topic = ag.tsum(q * layer.key(topic), axis=-1, keepdims=True) * scale
    s_topic = ag.broadcast_to(s_topic, s_self.shape) if s_topic.shape != s_self.shape else s_topic
    w = ag.softmax(ag.concat([s_self, s_topic], axis=-1), axis=-1)
    layer.last_attention = w.data
    v_self, v_topic = layer.value(h), layer.value(topic)
    return w[..., 0:1] * v_self + w[..., 1:2] * v_topic


def fuse_combine(h: Tensor, g: Tensor, h_hat: Tensor, layer: FusionLayer,
                 valid: np.ndarray | None = None) -> Tensor:
    """LN((1 - g) h + g h^) per position; padding rows keep their input."""
    g3 = ag.reshape(g, g.shape + (1,))
    out = layer.norm((1.0 - g3) * h + g3 * h_hat)
    if valid is not None:
        out = ag.where(valid[..., None], out, h)
    return out


def fuse(h: Tensor, topic_embed: Tensor, layer: FusionLayer,
         valid: np.ndarray | None = None) -> Tensor:
    """Full gate -> adapter -> combine pass at one insertion point.

    ``topic_embed`` is the static topic-entity embedding, [B, entity_dim].
    """
    topic_embed = ag.reshape(topic_embed, (topic_embed.shape[0], 1, topic_embed.shape[1]))
    g = gate(h, layer, valid)
    layer.last_gate = g.data
    return fuse_combine(h, g, layer.adapter(h, topic_embed), layer, valid)


class TopicFusion(Module):
    """All insertion points of one model, keyed by layer index."""

    def __init__(self, cfg: FusionConfig, d: int, entity_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.layers = {str(l): FusionLayer(cfg.kind, d, entity_dim, rng, dtype)
                       for l in cfg.layer_indices}

    def first(self) -> FusionLayer:
        return self.layers[str(self.cfg.layer_indices[0])]

    def hook(self, topic_ids: np.ndarray, entity_table: Tensor, valid: np.ndarray):
        """Build the encoder callback for one batch of segments."""
        return lambda l, h: fusion_hook(l, h, topic_ids, self, entity_table, valid)


def fusion_hook(layer_index: int, h: Tensor, topic_ids: np.ndarray, fusion: TopicFusion,
                entity_table: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Identity unless fusion is enabled and ``layer_index`` is an insertion point."""
    if not fusion.cfg.enabled or layer_index not in fusion.cfg.layer_indices:
        return h
    topic_embed = ag.embedding(entity_table, topic_ids)
    return fuse(h, topic_embed, fusion.layers[str(layer_index)], valid)
