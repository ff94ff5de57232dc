"""Seeded generator of Wikipedia-like pages with controlled mention ambiguity.

World model
-----------
* Every entity has a hidden *community* and a type; with probability
  ``type_purity`` the type is the community's own type, otherwise uniform. The first ``pages``
  entities of a seeded permutation are page topics.
* Each topic relates to a handful of tail entities drawn from its own
  community. Sentences on a topic's page express those facts
  (``<subject> <relation word> <tail surface> [and <tail surface>] ...``).
* The subject is a pronoun with probability ``pronoun_rate`` and otherwise a
  descriptor phrase of the topic's type. The topic's own name never appears on
  its page, mirroring real pages where the title entity is rarely linked.
* With probability ``type_hint_rate`` a mention is preceded by
  ``the <type noun>``, the same noun used as a topic descriptor, so types are
  observable in text.
* A fraction ``ambiguity_rate`` of surface forms is shared by two entities of
  different communities and different types, so an ambiguous mention can only
  be resolved through the page topic.

Ground truth is written next to the corpus as ``entity_types.tsv``,
``relations.tsv`` and ``ambiguity_map.tsv`` (every surface form, with the ids
it may denote; ambiguous forms list two ids).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PRONOUNS = ("she", "he", "it", "they")
CONNECTIVE = "and"
FILLER = ("in", "during", "after")
ARTICLE = "the"

_ONSETS = "b c d f g h k l m n p r s t v z".split() + ["br", "kr", "st", "tr", "pl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]


class SpecError(ValueError):
    """Inconsistent generator settings."""


@dataclass
class SynthSpec:
    n_entities: int = 200
    n_types: int = 5
    n_relations: int = 8
    pages: int = 50
    sentences_per_page: int = 20
    ambiguity_rate: float = 0.3
    pronoun_rate: float = 0.4
    seed: int = 0
    tails_per_topic: int = 8
    topic_tail_rate: float = 0.15
    n_years: int = 12
    type_hint_rate: float = 0.3
    type_purity: float = 0.8

    def validate(self) -> None:
        for name in ("n_entities", "n_types", "n_relations", "pages",
                     "sentences_per_page", "tails_per_topic"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be >= 1")
        for name in ("ambiguity_rate", "pronoun_rate", "topic_tail_rate", "type_hint_rate",
                     "type_purity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpecError(f"{name} must lie in [0, 1]")
        if self.ambiguity_rate > 0 and self.n_entities < 2:
            raise SpecError("ambiguity_rate > 0 needs at least two entities")
        if self.pages > self.n_entities:
            raise SpecError("pages cannot exceed n_entities (one topic per page)")


@dataclass
class SyntheticCorpus:
    pages: list[dict]
    entity_types: dict[str, str]
    relations: list[tuple[str, str, str]]
    surfaces: dict[str, list[str]]
    topics: list[str]
    spec: SynthSpec
    communities: dict[str, int] = field(default_factory=dict)

    def corpus_lines(self) -> list[str]:
        return [json.dumps(p, ensure_ascii=False) for p in self.pages]

    def surface_of(self) -> dict[str, str]:
        return {e: s for s, ents in self.surfaces.items() for e in ents}

    def ambiguous_entities(self) -> set[str]:
        return {e for ents in self.surfaces.values() if len(ents) > 1 for e in ents}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "corpus.jsonl").write_text("\n".join(self.corpus_lines()) + "\n",
                                          encoding="utf-8")
        (out / "entity_types.tsv").write_text(
            "".join(f"{e}\t{t}\n" for e, t in self.entity_types.items()), encoding="utf-8")
        (out / "relations.tsv").write_text(
            "".join(f"{h}\t{r}\t{t}\n" for h, r, t in self.relations), encoding="utf-8")
        (out / "ambiguity_map.tsv").write_text(
            "".join(f"{s}\t{','.join(ents)}\n" for s, ents in self.surfaces.items()),
            encoding="utf-8")
        (out / "synth_spec.json").write_text(json.dumps(asdict(self.spec), sort_keys=True),
                                             encoding="utf-8")
        return out


@dataclass
class GroundTruth:
    entity_types: dict[str, str]
    relations: list[tuple[str, str, str]]
    surfaces: dict[str, list[str]]

    def surface_of(self) -> dict[str, str]:
        return {e: s for s, ents in self.surfaces.items() for e in ents}

    def ambiguous_entities(self) -> set[str]:
        return {e for ents in self.surfaces.values() if len(ents) > 1 for e in ents}


def load_ground_truth(directory) -> GroundTruth:
    d = Path(directory)
    files = [d / n for n in ("entity_types.tsv", "relations.tsv", "ambiguity_map.tsv")]
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise FileNotFoundError(f"ground truth missing: {missing}")

    def rows(path):
        return [ln.split("\t") for ln in path.read_text(encoding="utf-8").splitlines() if ln]

    types = {e: t for e, t in rows(files[0])}
    rels = [(h, r, t) for h, r, t in rows(files[1])]
    surf = {s: ids.split(",") for s, ids in rows(files[2])}
    return GroundTruth(types, rels, surf)


def _word_factory(rng: np.random.Generator):
    used: set[str] = set(PRONOUNS) | set(FILLER) | {CONNECTIVE, ARTICLE}

    def make(n_syll: int) -> str:
        while True:
            w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                        for _ in range(n_syll))
            if w not in used:
                used.add(w)
                return w

    return make


def _pair_ambiguous(cands: list[int], n_pairs: int, types, comms,
                    rng: np.random.Generator) -> list[tuple[int, int]]:
    pool = [int(c) for c in rng.permutation(cands)]
    pairs = []
    while pool and len(pairs) < n_pairs:
        a = pool.pop(0)
        for j, b in enumerate(pool):
            if types[a] != types[b] and comms[a] != comms[b]:
                pairs.append((a, pool.pop(j)))
                break
    if len(pairs) < n_pairs:
        # relax the constraints rather than under-deliver the requested rate
        flat = {x for p in pairs for x in p}
        rest = [c for c in cands if c not in flat]
        while len(pairs) < n_pairs and len(rest) >= 2:
            pairs.append((rest.pop(0), rest.pop(0)))
    return pairs


def generate_synthetic(spec: SynthSpec) -> SyntheticCorpus:
    """Build a deterministic corpus plus ground truth from ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    word = _word_factory(rng)
    n = spec.n_entities
    n_comm = spec.n_types

    comms = rng.permutation(np.arange(n) % n_comm)
    # a community mostly holds entities of its own type
    types = np.where(rng.random(n) < spec.type_purity, comms % spec.n_types,
                     rng.integers(spec.n_types, size=n))
    order = rng.permutation(n)
    topics = [int(i) for i in order[:spec.pages]]
    non_topics = [int(i) for i in order[spec.pages:]]

    # surface forms: one or two pseudo-words, shared across ambiguous pairs
    n_pairs = int(round(spec.ambiguity_rate * n / (1.0 + spec.ambiguity_rate)))
    cands = non_topics if len(non_topics) >= 2 * n_pairs else [int(i) for i in order]
    pairs = _pair_ambiguous(cands, n_pairs, types, comms, rng)
    surface: dict[int, tuple[str, ...]] = {}
    for a, b in pairs:
        s = tuple(word(2) for _ in range(1 + rng.integers(2)))
        surface[a] = surface[b] = s
    for e in range(n):
        if e not in surface:
            surface[e] = tuple(word(2) for _ in range(1 + rng.integers(2)))
    shared = {e for p in pairs for e in p}
    names = {}
    for e in range(n):
        base = "_".join(surface[e])
        names[e] = f"{base}_({e})" if e in shared else base

    type_labels = [f"type_{k}" for k in range(spec.n_types)]
    descriptors = [word(2) for _ in range(spec.n_types)]
    rel_words = [word(3) for _ in range(spec.n_relations)]
    years = [word(1) + word(1) for _ in range(spec.n_years)]

    by_comm: dict[int, list[int]] = {c: [] for c in range(n_comm)}
    for e in non_topics:
        by_comm[int(comms[e])].append(e)
    topics_by_comm: dict[int, list[int]] = {c: [] for c in range(n_comm)}
    for t in topics:
        topics_by_comm[int(comms[t])].append(t)

    facts: dict[int, list[tuple[int, int]]] = {}
    for t in topics:
        c = int(comms[t])
        pool = [e for e in by_comm[c] if e != t]
        if not pool:
            pool = [e for e in range(n) if e != t and int(comms[e]) == c] or \
                   [e for e in range(n) if e != t]
        k = min(spec.tails_per_topic, len(pool))
        tails = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)] if pool else []
        mates = [u for u in topics_by_comm[c] if u != t]
        if mates and rng.random() < spec.topic_tail_rate:
            tails.append(mates[rng.integers(len(mates))])
        facts[t] = [(int(rng.integers(spec.n_relations)), e) for e in tails]

    pronoun_of = {t: PRONOUNS[rng.integers(len(PRONOUNS))] for t in topics}

    def add_mention(tokens: list, mentions: list, e: int) -> None:
        # occasional apposition "the <type noun>" grounds entity types in text
        if rng.random() < spec.type_hint_rate:
            tokens += [ARTICLE, descriptors[types[e]]]
        mentions.append({"start": len(tokens), "end": len(tokens) + len(surface[e]),
                         "entity": names[e]})
        tokens.extend(surface[e])

    pages = []
    for p, t in enumerate(topics):
        sentences = []
        tf = facts[t]
        for s in range(spec.sentences_per_page):
            if rng.random() < spec.pronoun_rate:
                tokens = [pronoun_of[t]]
            else:
                tokens = [ARTICLE, descriptors[types[t]]]
            mentions = []
            if tf:
                r, x = tf[s % len(tf)] if s < len(tf) else tf[rng.integers(len(tf))]
                tokens.append(rel_words[r])
                add_mention(tokens, mentions, x)
                others = [y for _, y in tf if y != x]
                if others and rng.random() < 0.5:
                    tokens.append(CONNECTIVE)
                    add_mention(tokens, mentions, others[rng.integers(len(others))])
            if rng.random() < 0.5:
                tokens += [FILLER[rng.integers(len(FILLER))], years[rng.integers(len(years))]]
            sentences.append({"tokens": tokens, "mentions": mentions})
        pages.append({"page_id": f"page_{p:04d}", "topic_entity": names[t],
                      "sentences": sentences})

    surfaces: dict[str, list[str]] = {}
    for e in range(n):
        surfaces.setdefault(" ".join(surface[e]), []).append(names[e])
    relations = [(names[t], rel_words[r], names[e]) for t in topics for r, e in facts[t]]
    return SyntheticCorpus(
        pages=pages,
        entity_types={names[e]: type_labels[types[e]] for e in range(n)},
        relations=relations,
        surfaces=surfaces,
        topics=[names[t] for t in topics],
        spec=spec,
        communities={names[e]: int(comms[e]) for e in range(n)},
    )
