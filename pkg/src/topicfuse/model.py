"""Encoder + optional topic fusion + contrastive projection, wired together."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import MaskedBatch
from .encoder import EncodedBatch, Encoder, ModelConfig, base_losses
from .fusion import FusionConfig, TopicFusion
from .nn import Linear, Module
from .objectives import ContrastiveConfig, DeltaSet, contrastive_loss, total_loss


@dataclass
class LossParts:
    total: Tensor
    plm: Tensor
    aux: Tensor
    contrastive: Tensor


class TopicAwareLM(Module):
    """The pretraining model.

    With fusion enabled the contrastive loss projects topic embeddings with
    the first insertion point's F_t; otherwise a standalone projection of the
    same shape is used.
    """

    def __init__(self, model_cfg: ModelConfig, fusion_cfg: FusionConfig, seed: int = 0):
        fusion_cfg.validate(model_cfg.num_layers)
        rng = np.random.default_rng(seed)
        dt = model_cfg.np_dtype
        self.model_cfg = model_cfg
        self.fusion_cfg = fusion_cfg
        self.encoder = Encoder(model_cfg, rng)
        if fusion_cfg.enabled:
            self.fusion = TopicFusion(fusion_cfg, model_cfg.hidden_dim,
                                      model_cfg.entity_embed_dim, rng, dt)
            self.topic_proj = None
        else:
            self.fusion = None
            self.topic_proj = Linear(model_cfg.entity_embed_dim, model_cfg.hidden_dim, rng, dt)

    def topic_repr(self, topic_ids: np.ndarray) -> Tensor:
        proj = self.fusion.first().topic if self.fusion is not None else self.topic_proj
        return proj(ag.embedding(self.encoder.entity_embed, topic_ids))

    def forward(self, batch: MaskedBatch, rng: np.random.Generator | None = None,
                use_fusion: bool = True) -> EncodedBatch:
        h = self.encoder.embed_input(batch)
        hook = None
        if use_fusion and self.fusion is not None:
            hook = self.fusion.hook(batch.topic_ids, self.encoder.entity_embed,
                                    batch.attention_valid)
        return self.encoder.encode(h, batch, hook, rng)

    def losses(self, batch: MaskedBatch, cfg: ContrastiveConfig,
               rng: np.random.Generator | None = None, stats: dict | None = None) -> LossParts:
        enc = self.forward(batch, rng)
        l_plm, l_aux = base_losses(enc, batch, self.encoder, stats)
        if cfg.weight:
            delta = DeltaSet.build(enc.cls, batch.topic_ids, self.topic_repr(batch.topic_ids))
            l_c = contrastive_loss(delta, cfg)
        else:
            l_c = Tensor(np.zeros((), dtype=self.model_cfg.np_dtype))
        return LossParts(total_loss(l_plm, l_aux, l_c, cfg), l_plm, l_aux, l_c)
