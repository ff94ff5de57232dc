"""Rank sequence positions by the fusion gate and render the ranking.

The encoder runs up to the first insertion point and the gate ``g_p`` is
read off every valid position (words, then mentions). Positions are listed
by gate value, descending; equal gate values keep position order, so a model
whose gate is constant yields the positions in index order.
"""

from __future__ import annotations

import html
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..autograd import no_grad_tape
from ..corpus import Segment, Vocab, collate
from ..fusion import gate
from ..model import TopicAwareLM
from ..synth import PRONOUNS


class NoFusionError(ValueError):
    pass


@dataclass
class RankedPosition:
    position: int      # index in the joint sequence
    label: str
    gate: float
    is_entity: bool = False


@dataclass
class SegmentReport:
    index: int
    topic: str
    ranked: list[RankedPosition]
    top_k: int


@dataclass
class GateReport:
    segments: list[SegmentReport] = field(default_factory=list)

    def all_values(self) -> np.ndarray:
        return np.array([p.gate for s in self.segments for p in s.ranked])

    def values_for(self, labels: Sequence[str]) -> np.ndarray:
        wanted = set(labels)
        return np.array([p.gate for s in self.segments for p in s.ranked
                         if not p.is_entity and p.label in wanted])


def rank_positions(values: np.ndarray) -> np.ndarray:
    """Indices sorted by value descending, ties broken by smaller index."""
    values = np.asarray(values)
    return np.lexsort((np.arange(len(values)), -values))


def gate_values(model: TopicAwareLM, segments: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray]:
    """(g [B, T], valid [B, T]) at the first insertion point."""
    if model.fusion is None or not model.fusion_cfg.enabled:
        raise NoFusionError("no fusion module: checkpoint was trained with fusion disabled")
    batch = collate(segments)
    layer_index = model.fusion_cfg.layer_indices[0]
    with no_grad_tape():
        h = model.encoder.hidden_before(batch, layer_index)
        g = gate(h, model.fusion.first(), batch.attention_valid)
    return g.data, batch.attention_valid


def _labels(seg: Segment, vocab: Vocab) -> list[str]:
    words = ["[CLS]"] + [vocab.words[t] for t in seg.tokens] + ["[SEP]"]
    return words + ["@" + vocab.entities[m.entity_id] for m in seg.mentions]


def gate_report(model: TopicAwareLM, segments: Sequence[Segment], vocab: Vocab,
                top_k: int = 50, batch_size: int = 64) -> GateReport:
    report = GateReport()
    for start in range(0, len(segments), batch_size):
        chunk = segments[start:start + batch_size]
        g, valid = gate_values(model, chunk)
        n_w = 2 + max(len(s.tokens) for s in chunk)
        for i, seg in enumerate(chunk):
            labels = _labels(seg, vocab)
            pos = np.nonzero(valid[i])[0]
            ranked = []
            for k in rank_positions(g[i, pos]):
                p = int(pos[k])
                ranked.append(RankedPosition(p, labels[_label_index(p, n_w, len(seg.tokens))],
                                             float(g[i, p]), p >= n_w))
            report.segments.append(SegmentReport(start + i, vocab.entities[seg.topic_entity],
                                                 ranked, min(top_k, len(ranked))))
    return report


def _label_index(position: int, n_w: int, n_tokens: int) -> int:
    # joint-sequence index -> index into _labels(); word padding is never valid
    return int(position) if position < n_w else n_tokens + 2 + int(position - n_w)


def pronoun_summary(report: GateReport, pronouns: Sequence[str] = PRONOUNS) -> dict:
    allv = report.all_values()
    pro = report.values_for(pronouns)
    return {
        "pronoun_mean": float(pro.mean()) if pro.size else float("nan"),
        "corpus_mean": float(allv.mean()) if allv.size else float("nan"),
        "n_pronoun": int(pro.size),
        "n_positions": int(allv.size),
    }


def render_text(report: GateReport) -> str:
    lines = []
    for s in report.segments:
        lines.append(f"segment {s.index}  topic={s.topic}")
        for rank, p in enumerate(s.ranked[:s.top_k], start=1):
            lines.append(f"  {rank:3d}  pos={p.position:3d}  g={p.gate:.6f}  {p.label}")
        lines.append("")
    return "\n".join(lines)


def render_html(report: GateReport) -> str:
    """Tokens in sequence order; the top_k are shaded in proportion to g."""
    parts = ["<!DOCTYPE html>", "<html><head><meta charset=\"utf-8\"><title>gate report</title>"
             "</head><body style=\"font-family:monospace\">"]
    for s in report.segments:
        top = {p.position for p in s.ranked[:s.top_k]}
        parts.append(f"<p><b>segment {s.index}</b> topic={html.escape(s.topic)}<br>")
        for p in sorted(s.ranked, key=lambda r: r.position):
            text = html.escape(p.label)
            if p.position in top:
                parts.append(f"<span title=\"g={p.gate:.6f}\" style=\"background:"
                             f"rgba(220,40,40,{p.gate:.4f})\">{text}</span> ")
            else:
                parts.append(f"<span title=\"g={p.gate:.6f}\">{text}</span> ")
        parts.append("</p>")
    parts.append("</body></html>")
    return "\n".join(parts)


def write_report(report: GateReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, page = out / "gate_report.txt", out / "gate_report.html"
    txt.write_text(render_text(report), encoding="utf-8")
    page.write_text(render_html(report), encoding="utf-8")
    return txt, page
