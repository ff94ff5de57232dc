"""Walk through the synthetic world: pages, ambiguous names, masking, batching."""

# %%
import numpy as np

from topicfuse.corpus import make_batches, mask_batch, parse_corpus
from topicfuse.synth import SynthSpec, generate_synthetic

corpus = generate_synthetic(SynthSpec(n_entities=60, pages=10, sentences_per_page=6, seed=1))
segments, vocab = parse_corpus(corpus.corpus_lines())
print(len(segments), "segments,", vocab.n_words, "words,", vocab.n_entities, "entities")

# %% one page, rendered back to text
page = corpus.pages[0]
print("topic:", page["topic_entity"])
for sent in page["sentences"][:4]:
    links = [f"{' '.join(sent['tokens'][m['start']:m['end']])} -> {m['entity']}"
             for m in sent["mentions"]]
    print("  ", " ".join(sent["tokens"]), "|", "; ".join(links))

# %% ambiguous surface forms: same string, different ids, told apart only by the page
shared = {s: ents for s, ents in corpus.surfaces.items() if len(ents) > 1}
for s, ents in list(shared.items())[:3]:
    print(f"{s!r:16} {ents}  types={[corpus.entity_types[e] for e in ents]}")

# %% masking: 15% of words, 60% of mentions
batch = mask_batch(segments[:8], word_mask_rate=0.15, entity_mask_rate=0.6, seed=0)
print("masked words   ", int((batch.word_labels >= 0).sum()), "/", int(batch.word_valid.sum()))
print("masked entities", int((batch.entity_labels >= 0).sum()), "/", int(batch.entity_valid.sum()))

# %% pair-preserving batches keep same-page neighbours together
for b in make_batches(segments, 8, seed=0)[:3]:
    print([s.page_id[-2:] for s in b])
