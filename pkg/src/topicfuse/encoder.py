"""Joint word + entity transformer encoder with masked-token/entity heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .corpus import MaskedBatch
from .nn import LayerNorm, Linear, Module, dropout, param

FusionHook = Callable[[int, Tensor], Tensor]


@dataclass
class ModelConfig:
    word_vocab_size: int = 0
    entity_vocab_size: int = 0
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    entity_embed_dim: int = 64
    max_positions: int = 130
    dropout_rate: float = 0.1
    dtype: str = "float32"

    def validate(self) -> None:
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.entity_embed_dim > self.hidden_dim:
            raise ValueError("entity_embed_dim must not exceed hidden_dim")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class EncodedBatch:
    words: Tensor      # H_w  [B, n_w, d]
    entities: Tensor   # H_e  [B, n_e, d]
    cls: Tensor        # h_cls [B, d]


class Block(Module):
    """Pre-norm self-attention + GELU feed-forward block."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d, dt = cfg.hidden_dim, cfg.np_dtype
        self.ln_attn = LayerNorm(d, dt)
        self.query = Linear(d, d, rng, dt)
        self.key = Linear(d, d, rng, dt)
        self.value = Linear(d, d, rng, dt)
        self.out = Linear(d, d, rng, dt)
        self.ln_ffn = LayerNorm(d, dt)
        self.ffn_in = Linear(d, cfg.ffn_dim, rng, dt)
        self.ffn_out = Linear(cfg.ffn_dim, d, rng, dt)
        self.num_heads = cfg.num_heads
        self.last_attention: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.num_heads
        return ag.transpose(ag.reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, key_bias: np.ndarray, rate: float,
                 rng: np.random.Generator | None) -> Tensor:
        b, t, d = x.shape
        h = self.ln_attn(x)
        q, k, v = self._split(self.query(h)), self._split(self.key(h)), self._split(self.value(h))
        scores = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // self.num_heads))
        probs = ag.softmax(scores + key_bias, axis=-1)
        self.last_attention = probs.data
        ctx = ag.matmul(dropout(probs, rate, rng), v)
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        x = x + dropout(self.out(ctx), rate, rng)
        h = self.ffn_out(ag.gelu(self.ffn_in(self.ln_ffn(x))))
        return x + dropout(h, rate, rng)


class Encoder(Module):
    """Embedding tables, transformer stack and pretraining heads."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        d, de, dt = cfg.hidden_dim, cfg.entity_embed_dim, cfg.np_dtype
        self.word_embed = param(rng.normal(0, 0.02, (cfg.word_vocab_size, d)), dt)
        self.entity_embed = param(rng.normal(0, 0.02, (cfg.entity_vocab_size, de)), dt)
        self.pos_embed = param(rng.normal(0, 0.02, (cfg.max_positions, d)), dt)
        self.type_embed = param(rng.normal(0, 0.02, (2, d)), dt)
        self.entity_proj = Linear(de, d, rng, dt, bias=False) if de < d else None
        self.layers = [Block(cfg, rng) for _ in range(cfg.num_layers)]
        self.final_ln = LayerNorm(d, dt) if cfg.num_layers else None
        self.word_head_dense = Linear(d, d, rng, dt)
        self.word_head_ln = LayerNorm(d, dt)
        self.word_decoder = Linear(d, cfg.word_vocab_size, rng, dt)
        self.entity_head_dense = Linear(d, de, rng, dt)
        self.entity_head_ln = LayerNorm(de, dt)
        self.entity_bias = param(np.zeros(cfg.entity_vocab_size), dt)

    # -- forward ------------------------------------------------------------

    def embed_input(self, batch: MaskedBatch) -> Tensor:
        """Initial joint sequence H_S = [words ; entities], shape [B, n_w + n_e, d].

        An entity row is its (projected) embedding plus the mean position
        embedding over its word span plus the entity token-type embedding.
        """
        b, n_w = batch.tokens.shape
        n_e = batch.entity_ids.shape[1]
        if n_w > self.cfg.max_positions:
            raise ShapeError(f"sequence of {n_w} words exceeds max_positions")
        pos = self.pos_embed[:n_w]
        words = ag.embedding(self.word_embed, batch.tokens) + pos + self.type_embed[0]
        ents = ag.embedding(self.entity_embed, batch.entity_ids)
        if self.entity_proj is not None:
            ents = self.entity_proj(ents)
        ents = ents + ag.matmul(Tensor(span_average_matrix(batch, self.cfg.np_dtype)), pos)
        ents = ents + self.type_embed[1]
        if n_e != batch.entity_valid.shape[1]:
            raise ShapeError("entity arrays disagree")
        return ag.concat([words, ents], axis=1)

    def _key_bias(self, batch: MaskedBatch) -> np.ndarray:
        valid = batch.attention_valid
        return np.where(valid, 0.0, -1e9).astype(self.cfg.np_dtype)[:, None, None, :]

    def hidden_before(self, batch: MaskedBatch, layer_index: int) -> Tensor:
        """Hidden states entering layer ``layer_index`` (1-based), no dropout."""
        h = self.embed_input(batch)
        key_bias = self._key_bias(batch)
        for block in self.layers[:layer_index - 1]:
            h = block(h, key_bias, 0.0, None)
        return h

    def encode(self, h: Tensor, batch: MaskedBatch, fusion_hook: FusionHook | None = None,
               rng: np.random.Generator | None = None) -> EncodedBatch:
        """Run the stack over H_S; ``fusion_hook(l, H)`` runs before layer ``l`` (1-based)."""
        rate = self.cfg.dropout_rate if rng is not None else 0.0
        key_bias = self._key_bias(batch)
        h = dropout(h, rate, rng)
        for l, block in enumerate(self.layers, start=1):
            if fusion_hook is not None:
                h = fusion_hook(l, h)
            h = block(h, key_bias, rate, rng)
        if self.final_ln is not None:
            h = self.final_ln(h)
        n_w = batch.tokens.shape[1]
        words = h[:, :n_w]
        ents = h[:, n_w:]
        b, d = batch.size, self.cfg.hidden_dim
        if words.shape != (b, n_w, d) or ents.shape != (b, batch.entity_ids.shape[1], d):
            raise ShapeError(f"encoder output shapes {words.shape}, {ents.shape}")
        return EncodedBatch(words, ents, h[:, 0])

    # -- heads --------------------------------------------------------------

    def word_logits(self, h: Tensor) -> Tensor:
        t = self.word_head_ln(ag.gelu(self.word_head_dense(h)))
        return self.word_decoder(t)

    def entity_logits(self, h: Tensor) -> Tensor:
        # decoder tied to the entity embedding table
        t = self.entity_head_ln(ag.gelu(self.entity_head_dense(h)))
        return ag.matmul(t, ag.transpose(self.entity_embed)) + self.entity_bias


def span_average_matrix(batch: MaskedBatch, dtype=np.float64) -> np.ndarray:
    """[B, n_e, n_w] matrix averaging word positions over each mention span."""
    b, n_e = batch.entity_ids.shape
    n_w = batch.tokens.shape[1]
    m = np.zeros((b, n_e, n_w), dtype=dtype)
    for i, j in zip(*np.nonzero(batch.entity_valid)):
        s, e = batch.spans[i, j]
        m[i, j, s:e] = 1.0 / (e - s)
    return m


def base_losses(encoded: EncodedBatch, batch: MaskedBatch, encoder: Encoder,
                stats: dict | None = None) -> tuple[Tensor, Tensor]:
    """(L_PLM, L_Aux): mean cross-entropy over masked words / masked entities.

    A kind with no masked positions contributes exactly 0. When ``stats`` is
    given it receives masked-prediction hit counts.
    """
    wb, wi = batch.masked_word_positions
    eb, ei = batch.masked_entity_positions
    zero = Tensor(np.zeros((), dtype=encoder.cfg.np_dtype))
    l_plm, l_aux = zero, zero
    if len(wb):
        logits = encoder.word_logits(encoded.words[wb, wi])
        labels = batch.word_labels[wb, wi]
        l_plm = ag.cross_entropy(logits, labels)
        if stats is not None:
            stats["word_correct"] = int((logits.data.argmax(-1) == labels).sum())
    if len(eb):
        logits = encoder.entity_logits(encoded.entities[eb, ei])
        labels = batch.entity_labels[eb, ei]
        l_aux = ag.cross_entropy(logits, labels)
        if stats is not None:
            stats["entity_correct"] = int((logits.data.argmax(-1) == labels).sum())
    if stats is not None:
        stats["word_count"] = int(len(wb))
        stats["entity_count"] = int(len(eb))
    return l_plm, l_aux
