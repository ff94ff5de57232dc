"""Pages, segments, vocabularies, masking and minibatch construction.

A corpus file is UTF-8 JSONL with one page per line::

    {"page_id": "p0", "topic_entity": "Beyonce",
     "sentences": [{"tokens": ["She", "released", "Crazy", "in", "Love"],
                    "mentions": [{"start": 2, "end": 5, "entity": "Crazy_in_Love"}]}]}

Each sentence becomes one :class:`Segment`. Mention spans are ``[start, end)``
word indices into the sentence; [CLS]/[SEP] are added only when batching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

CLS, SEP, MASK, UNK, PAD = "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"
MASK_ENT, PAD_ENT = "[MASK_ENT]", "[PAD_ENT]"
WORD_SPECIALS = (CLS, SEP, MASK, UNK, PAD)
ENTITY_SPECIALS = (MASK_ENT, PAD_ENT)
CLS_ID, SEP_ID, MASK_ID, UNK_ID, PAD_ID = range(5)
MASK_ENT_ID, PAD_ENT_ID = 0, 1

MAX_SEGMENT_TOKENS = 128
MIN_SEGMENT_TOKENS = 3


class CorpusError(ValueError):
    """Malformed corpus input."""


class ConfigError(ValueError):
    """Invalid batching or masking configuration."""


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    entity_id: int


@dataclass
class Segment:
    topic_entity: int
    tokens: list[int]
    mentions: list[Mention]
    page_id: str


class Vocab:
    """Word and entity tables with reserved low ids."""

    def __init__(self, words: Iterable[str] = (), entities: Iterable[str] = ()):
        self.words: list[str] = list(WORD_SPECIALS)
        self.entities: list[str] = list(ENTITY_SPECIALS)
        self._word_index = {w: i for i, w in enumerate(self.words)}
        self._entity_index = {e: i for i, e in enumerate(self.entities)}
        for w in words:
            self.add_word(w)
        for e in entities:
            self.add_entity(e)

    def add_word(self, word: str) -> int:
        idx = self._word_index.get(word)
        if idx is None:
            idx = self._word_index[word] = len(self.words)
            self.words.append(word)
        return idx

    def add_entity(self, name: str) -> int:
        idx = self._entity_index.get(name)
        if idx is None:
            idx = self._entity_index[name] = len(self.entities)
            self.entities.append(name)
        return idx

    def word_id(self, word: str) -> int:
        return self._word_index.get(word, UNK_ID)

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_index[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def has_entity(self, name: str) -> bool:
        return name in self._entity_index

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def to_dict(self) -> dict:
        return {"words": self.words[len(WORD_SPECIALS):],
                "entities": self.entities[len(ENTITY_SPECIALS):]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(d["words"], d["entities"])


def _validate_mentions(mentions: list[Mention], n_tokens: int, where: str) -> None:
    spans = sorted((m.start, m.end) for m in mentions)
    for s, e in spans:
        if not 0 <= s < e <= n_tokens:
            raise CorpusError(f"{where}: mention span [{s},{e}) outside sentence of "
                              f"length {n_tokens}")
    for (_, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CorpusError(f"{where}: overlapping mention spans")


def parse_corpus(lines: Iterable[str], vocab: Vocab | None = None,
                 max_tokens: int = MAX_SEGMENT_TOKENS,
                 min_tokens: int = MIN_SEGMENT_TOKENS) -> tuple[list[Segment], Vocab]:
    """Read JSONL pages into segments.

    With ``vocab=None`` a new vocabulary is grown in first-occurrence order.
    With a given vocabulary, unseen words map to [UNK] and unseen entities
    are an error. Sentences are truncated to ``max_tokens`` (mentions that no
    longer fit are dropped) and sentences shorter than ``min_tokens`` are
    skipped.
    """
    grow = vocab is None
    if grow:
        vocab = Vocab()
    segments: list[Segment] = []

    def ent(name: str, where: str) -> int:
        if grow:
            return vocab.add_entity(name)
        if not vocab.has_entity(name):
            raise CorpusError(f"{where}: unknown entity {name!r}")
        return vocab.entity_id(name)

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            page = json.loads(line)
            page_id = str(page["page_id"])
            topic_name = page["topic_entity"]
            sentences = page["sentences"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusError(f"line {lineno}: malformed page ({exc})") from exc
        where = f"line {lineno} (page {page_id!r})"
        topic = ent(topic_name, where)
        for sent in sentences:
            try:
                words = list(sent["tokens"])
                raw = [(int(m["start"]), int(m["end"]), m["entity"])
                       for m in sent.get("mentions", [])]
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{where}: malformed sentence ({exc})") from exc
            mentions = [Mention(s, e, ent(name, where)) for s, e, name in raw]
            _validate_mentions(mentions, len(words), where)
            if len(words) > max_tokens:
                words = words[:max_tokens]
                mentions = [m for m in mentions if m.end <= max_tokens]
            if len(words) < min_tokens:
                continue
            ids = [vocab.add_word(w) for w in words] if grow else [vocab.word_id(w) for w in words]
            segments.append(Segment(topic, ids, mentions, page_id))
    return segments, vocab


def emit_corpus(segments: Sequence[Segment], vocab: Vocab) -> list[str]:
    """Inverse of :func:`parse_corpus`: one JSON line per run of same-page segments."""
    lines = []
    i = 0
    while i < len(segments):
        j = i
        while j < len(segments) and segments[j].page_id == segments[i].page_id:
            j += 1
        page = {
            "page_id": segments[i].page_id,
            "topic_entity": vocab.entities[segments[i].topic_entity],
            "sentences": [
                {"tokens": [vocab.words[t] for t in s.tokens],
                 "mentions": [{"start": m.start, "end": m.end,
                               "entity": vocab.entities[m.entity_id]} for m in s.mentions]}
                for s in segments[i:j]
            ],
        }
        lines.append(json.dumps(page, ensure_ascii=False))
        i = j
    return lines


def read_corpus(path, vocab: Vocab | None = None, **kw) -> tuple[list[Segment], Vocab]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, vocab, **kw)


# -- batching -------------------------------------------------------------------

@dataclass
class MaskedBatch:
    """Padded, optionally masked minibatch.

    Word arrays are [B, n_w] and include [CLS] at column 0 and [SEP] after the
    last token. Entity spans are shifted by one to account for [CLS].
    Label arrays hold the pre-mask id at masked positions and -1 elsewhere.
    """

    tokens: np.ndarray
    word_valid: np.ndarray
    entity_ids: np.ndarray
    spans: np.ndarray
    entity_valid: np.ndarray
    topic_ids: np.ndarray
    word_labels: np.ndarray
    entity_labels: np.ndarray
    page_ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    @property
    def attention_valid(self) -> np.ndarray:
        """[B, n_w + n_e] key-validity mask over the joint sequence."""
        return np.concatenate([self.word_valid, self.entity_valid], axis=1)

    @property
    def masked_word_positions(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.word_labels >= 0)

    @property
    def masked_entity_positions(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.entity_labels >= 0)


def collate(segments: Sequence[Segment]) -> MaskedBatch:
    """Pad segments into one unmasked batch."""
    b = len(segments)
    n_w = max(len(s.tokens) for s in segments) + 2
    n_e = max(1, max(len(s.mentions) for s in segments))
    tokens = np.full((b, n_w), PAD_ID, dtype=np.int64)
    word_valid = np.zeros((b, n_w), dtype=bool)
    entity_ids = np.full((b, n_e), PAD_ENT_ID, dtype=np.int64)
    spans = np.zeros((b, n_e, 2), dtype=np.int64)
    entity_valid = np.zeros((b, n_e), dtype=bool)
    for i, s in enumerate(segments):
        n = len(s.tokens)
        tokens[i, 0] = CLS_ID
        tokens[i, 1:n + 1] = s.tokens
        tokens[i, n + 1] = SEP_ID
        word_valid[i, :n + 2] = True
        for j, m in enumerate(s.mentions):
            entity_ids[i, j] = m.entity_id
            spans[i, j] = (m.start + 1, m.end + 1)
            entity_valid[i, j] = True
    return MaskedBatch(
        tokens=tokens, word_valid=word_valid, entity_ids=entity_ids, spans=spans,
        entity_valid=entity_valid,
        topic_ids=np.array([s.topic_entity for s in segments], dtype=np.int64),
        word_labels=np.full((b, n_w), -1, dtype=np.int64),
        entity_labels=np.full((b, n_e), -1, dtype=np.int64),
        page_ids=[s.page_id for s in segments],
    )


def _check_rate(name: str, rate: float) -> None:
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {rate}")


def mask_batch(segments: Sequence[Segment], word_mask_rate: float = 0.15,
               entity_mask_rate: float = 0.6,
               seed: int | np.random.Generator = 0) -> MaskedBatch:
    """Collate and apply independent Bernoulli masking.

    Every real word (not [CLS]/[SEP]/[PAD]) is replaced by [MASK] with
    probability ``word_mask_rate``; every mention's entity id is replaced by
    [MASK_ENT] with probability ``entity_mask_rate``. Original ids are kept in
    the label arrays.
    """
    _check_rate("word_mask_rate", word_mask_rate)
    _check_rate("entity_mask_rate", entity_mask_rate)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch = collate(segments)
    maskable = batch.word_valid & (batch.tokens != CLS_ID) & (batch.tokens != SEP_ID)
    word_draw = rng.random(batch.tokens.shape) < word_mask_rate
    ent_draw = rng.random(batch.entity_ids.shape) < entity_mask_rate
    wsel = maskable & word_draw
    esel = batch.entity_valid & ent_draw
    batch.word_labels[wsel] = batch.tokens[wsel]
    batch.tokens[wsel] = MASK_ID
    batch.entity_labels[esel] = batch.entity_ids[esel]
    batch.entity_ids[esel] = MASK_ENT_ID
    return batch


def pair_segments(segments: Sequence[Segment]) -> list[list[int]]:
    """Glue consecutive same-page segments into index pairs.

    A page with an odd count leaves its last segment as a remnant; remnants
    are paired with each other in corpus order, and a final odd remnant forms
    a group of one.
    """
    pairs: list[list[int]] = []
    remnants: list[int] = []
    i = 0
    n = len(segments)
    while i < n:
        j = i
        while j < n and segments[j].page_id == segments[i].page_id:
            j += 1
        for k in range(i, j - 1, 2):
            pairs.append([k, k + 1])
        if (j - i) % 2:
            remnants.append(j - 1)
        i = j
    for k in range(0, len(remnants), 2):
        pairs.append(remnants[k:k + 2])
    return pairs


def make_batches(segments: Sequence[Segment], batch_size: int,
                 seed: int | np.random.Generator = 0) -> list[list[Segment]]:
    """Pair-preserving shuffle: pair, shuffle the pairs, then unpack into batches.

    Same-page neighbours always land in the same minibatch, which gives the
    contrastive loss in-batch positives. The last batch may be smaller.
    """
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"batch_size must be even and >= 2, got {batch_size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pairs = pair_segments(segments)
    order = rng.permutation(len(pairs))
    flat = [idx for p in order for idx in pairs[p]]
    return [[segments[k] for k in flat[i:i + batch_size]]
            for i in range(0, len(flat), batch_size)]


def iter_batches(segments: Sequence[Segment], batch_size: int,
                 seed: int) -> Iterator[list[Segment]]:
    """Endless stream of epochs, each reshuffled from ``(seed, epoch)``."""
    epoch = 0
    while True:
        yield from make_batches(segments, batch_size,
                                np.random.default_rng([seed, epoch]))
        epoch += 1
