"""Chunk-level precision, recall and F1 over IOB tag sequences.

Predictions are repaired first (a dangling ``I-X`` becomes ``B-X``); a
predicted chunk counts as correct only when type, start and end all match a
gold chunk. Scores are micro-averaged.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Pair, TagSequence, chunk_spans, validate_iob


@dataclass(frozen=True, order=True)
class ChunkSpan:
    kind: str
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"chunk start {self.start} after end {self.end}")


def extract_chunks(tags: TagSequence | Sequence[str]) -> list[ChunkSpan]:
    seq = tags.tags if isinstance(tags, TagSequence) else tuple(tags)
    repaired = validate_iob(seq, "repair").tags
    return [ChunkSpan(*span) for span in chunk_spans(repaired)]


def prf(correct: int, gold: int, predicted: int) -> tuple[float, float, float]:
    """Precision, recall, F1 in percent; 0 wherever a denominator vanishes."""
    p = 100.0 * correct / predicted if predicted else 0.0
    r = 100.0 * correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class F1Report:
    gold: Counter = field(default_factory=Counter)
    predicted: Counter = field(default_factory=Counter)
    correct: Counter = field(default_factory=Counter)
    sentences: int = 0
    tokens: int = 0
    repaired: bool = True
    beam_size: int | None = None

    @property
    def n_gold(self) -> int:
        return sum(self.gold.values())

    @property
    def n_predicted(self) -> int:
        return sum(self.predicted.values())

    @property
    def n_correct(self) -> int:
        return sum(self.correct.values())

    @property
    def precision(self) -> float:
        return round(prf(self.n_correct, self.n_gold, self.n_predicted)[0], 2)

    @property
    def recall(self) -> float:
        return round(prf(self.n_correct, self.n_gold, self.n_predicted)[1], 2)

    @property
    def f1(self) -> float:
        return round(prf(self.n_correct, self.n_gold, self.n_predicted)[2], 2)

    def types(self) -> list[str]:
        return sorted(set(self.gold) | set(self.predicted))

    def per_type(self) -> dict[str, tuple[float, float, float]]:
        return {k: tuple(round(x, 2) for x in prf(self.correct[k], self.gold[k], self.predicted[k]))
                for k in self.types()}

    def __add__(self, other: "F1Report") -> "F1Report":
        return F1Report(self.gold + other.gold, self.predicted + other.predicted,
                        self.correct + other.correct, self.sentences + other.sentences,
                        self.tokens + other.tokens, self.repaired and other.repaired,
                        self.beam_size if self.beam_size == other.beam_size else None)

    def counts(self) -> tuple[int, int, int]:
        return self.n_gold, self.n_predicted, self.n_correct

    def to_record(self) -> dict:
        return {
            "sentences": self.sentences,
            "tokens": self.tokens,
            "gold_chunks": self.n_gold,
            "predicted_chunks": self.n_predicted,
            "correct_chunks": self.n_correct,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "iob_repair": self.repaired,
            "beam_size": self.beam_size,
            "per_type": {k: {"gold": self.gold[k], "predicted": self.predicted[k],
                             "correct": self.correct[k], "precision": p, "recall": r, "f1": f}
                         for k, (p, r, f) in self.per_type().items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    def to_text(self) -> str:
        """conlleval-style summary block."""
        header = "# predictions repaired to valid IOB before scoring" if self.repaired else \
                 "# predictions scored as emitted"
        if self.beam_size is not None:
            header += f"; beam size {self.beam_size}"
        lines = [
            header,
            f"processed {self.tokens} tokens with {self.n_gold} phrases; "
            f"found: {self.n_predicted} phrases; correct: {self.n_correct}.",
            f"precision: {self.precision:6.2f}%; recall: {self.recall:6.2f}%; FB1: {self.f1:6.2f}",
        ]
        for kind, (p, r, f) in self.per_type().items():
            lines.append(f"{kind:>17}: precision: {p:6.2f}%; recall: {r:6.2f}%; "
                         f"FB1: {f:6.2f}  {self.predicted[kind]}")
        return "\n".join(lines) + "\n"


def score_sentence(gold: Sequence[str], predicted: Sequence[str]) -> F1Report:
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold tags but {len(predicted)} predicted")
    g = set(extract_chunks(gold))
    p = set(extract_chunks(predicted))
    report = F1Report(sentences=1, tokens=len(gold))
    report.gold.update(c.kind for c in g)
    report.predicted.update(c.kind for c in p)
    report.correct.update(c.kind for c in g & p)
    return report


def f1_score(gold: Iterable[Pair | TagSequence | Sequence[str]],
             predicted: Iterable[TagSequence | Sequence[str]]) -> F1Report:
    """Micro-averaged chunk F1 of predicted tag sequences against gold."""
    total = F1Report()
    gold, predicted = list(gold), list(predicted)
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold sentences but {len(predicted)} predictions")
    for index, (g, p) in enumerate(zip(gold, predicted)):
        g = _tags_of(g)
        p = _tags_of(p)
        if len(g) != len(p):
            raise ValueError(f"sentence {index}: {len(g)} gold tags but {len(p)} predicted")
        total = total + score_sentence(g, p)
    return total


def _tags_of(item) -> tuple[str, ...]:
    if isinstance(item, TagSequence):
        return item.tags
    if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], TagSequence):
        return item[1].tags
    return tuple(item)


def comparison_table(rows: Sequence[tuple[str, str, float]], title: str = "") -> str:
    """Model / mechanism / F1 table laid out like the usual results table."""
    width = max([len(r[0]) for r in rows] + [10])
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'Model':<{width}} | {'Mechanism':<9} || F1-score (%)")
    lines.append("-" * (width + 30))
    for model, mech, f1 in rows:
        lines.append(f"{model:<{width}} | {mech or '-':<9} || {f1:6.2f}")
    return "\n".join(lines) + "\n"
