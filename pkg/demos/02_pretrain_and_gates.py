"""Pretrain a small model, then look at where the fusion gate opens."""

# %%
import numpy as np

from topicfuse.corpus import parse_corpus
from topicfuse.harness.config import RunConfig
from topicfuse.harness.gate_report import gate_report, pronoun_summary, render_text
from topicfuse.harness.training import pretrain
from topicfuse.synth import SynthSpec, generate_synthetic

corpus = generate_synthetic(SynthSpec(seed=0))
segments, vocab = parse_corpus(corpus.corpus_lines())

cfg = RunConfig(seed=0, total_steps=400)   # the default budget is 1500 steps
result = pretrain(cfg, segments, vocab)

# %% loss curves
log = result.log
for name in ("l_plm", "l_aux", "l_contrastive", "entity_acc"):
    col = log.column(name)
    print(f"{name:14} first-50 {col[:50].mean():.3f}   last-50 {col[-50:].mean():.3f}")

# %% gate ranking for a couple of sentences
report = gate_report(result.model, segments[:2], vocab, top_k=8)
print(render_text(report))

# %% pronoun positions vs the rest
print(pronoun_summary(gate_report(result.model, segments, vocab)))
