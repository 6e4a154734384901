"""CoNLL-style corpora, vocabularies, IOB checks and slot-value augmentation.

Files are UTF-8 with LF line endings, one ``token<TAB>tag`` per line and a
blank line after every sentence. Tokens are opaque strings, so pre-segmented
text in any script works unchanged.
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import seeding

PAD = "<pad>"
UNK = "<unk>"
BOS_TAG = "<s>"
OUTSIDE = "O"


class CorpusError(ValueError):
    """Malformed corpus file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class IOBError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    line: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("a sentence needs at least one token")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TagSequence:
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(self.tags))

    def __len__(self) -> int:
        return len(self.tags)


Pair = tuple[Sentence, TagSequence]


def make_pair(tokens: Sequence[str], tags: Sequence[str]) -> Pair:
    if len(tokens) != len(tags):
        raise ValueError(f"{len(tokens)} tokens but {len(tags)} tags")
    return Sentence(tuple(tokens)), TagSequence(tuple(tags))


# ----------------------------------------------------------------------------
# Reading and writing


def parse_conll(text: str, path=None, require_tags: bool = True) -> list[Pair]:
    """Parse CoNLL text. With ``require_tags=False`` a bare token per line is
    accepted and tagged ``O``."""
    pairs: list[Pair] = []
    tokens: list[str] = []
    tags: list[str] = []
    start = 0
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, start=1):
        if raw.endswith("\r"):
            raise CorpusError("CR line ending; files must use LF", path, lineno)
        if raw == "":
            if tokens:
                pairs.append((Sentence(tuple(tokens), start), TagSequence(tuple(tags))))
                tokens, tags = [], []
            continue
        if raw.strip() == "":
            raise CorpusError("whitespace-only line; sentence separators must be empty", path, lineno)
        fields = raw.split("\t")
        if len(fields) == 1 and not require_tags:
            fields = [fields[0], OUTSIDE]
        if len(fields) != 2:
            raise CorpusError(f"expected token<TAB>tag, found {len(fields)} field(s)", path, lineno)
        token, tag = fields
        if not token or not tag:
            raise CorpusError("empty token or tag", path, lineno)
        if not tokens:
            start = lineno
        tokens.append(token)
        tags.append(tag)
    if tokens:
        pairs.append((Sentence(tuple(tokens), start), TagSequence(tuple(tags))))
    return pairs


def read_conll(path, require_tags: bool = True) -> list[Pair]:
    """Read sentence/tag pairs, raising :class:`CorpusError` with a location."""
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"not valid UTF-8 ({exc.reason} at byte {exc.start})", path) from exc
    pairs = parse_conll(text, path, require_tags)
    if not pairs:
        raise CorpusError("empty file", path)
    return pairs


def format_conll(pairs: Iterable[Pair]) -> str:
    out = io.StringIO()
    for sent, tags in pairs:
        if len(sent) != len(tags):
            raise ValueError(f"sentence at line {sent.line}: {len(sent)} tokens, {len(tags)} tags")
        for tok, tag in zip(sent.tokens, tags.tags):
            out.write(f"{tok}\t{tag}\n")
        out.write("\n")
    return out.getvalue()


def write_conll(path, pairs: Iterable[Pair]) -> None:
    Path(path).write_bytes(format_conll(pairs).encode("utf-8"))


# ----------------------------------------------------------------------------
# Vocabulary


class Vocabulary:
    """Word and tag id maps.

    Word ids: 0 is ``<pad>``, 1 is ``<unk>``, then kept words by descending
    training frequency with ties broken lexicographically. Tag ids: 0 is
    ``<s>``, then tags in the same order.
    """

    def __init__(self, words: Sequence[str], tags: Sequence[str]):
        if list(words[:2]) != [PAD, UNK]:
            raise ValueError("word list must start with <pad>, <unk>")
        if not tags or tags[0] != BOS_TAG:
            raise ValueError("tag list must start with <s>")
        if len(set(words)) != len(words) or len(set(tags)) != len(tags):
            raise ValueError("duplicate vocabulary entries")
        self.words = list(words)
        self.tags = list(tags)
        self.word_to_id = {w: i for i, w in enumerate(self.words)}
        self.tag_to_id = {t: i for i, t in enumerate(self.tags)}
        self.unk_id = 1

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words and self.tags == other.tags

    def __repr__(self) -> str:
        return f"Vocabulary({len(self.words)} words, {len(self.tags)} tags)"

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    def word_id(self, word: str) -> int:
        return self.word_to_id.get(word, self.unk_id)

    def encode_words(self, tokens: Sequence[str]) -> list[int]:
        return [self.word_to_id.get(w, self.unk_id) for w in tokens]

    def encode_tags(self, tags: Sequence[str]) -> list[int]:
        try:
            return [self.tag_to_id[t] for t in tags]
        except KeyError as exc:
            raise ValueError(f"tag {exc.args[0]!r} not in the tag vocabulary") from None

    def decode_tags(self, ids: Sequence[int]) -> list[str]:
        return [self.tags[i] for i in ids]


def _ranked(counts: Counter) -> list[str]:
    return [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def build_vocab(train: Sequence[Pair], min_count: int = 2) -> Vocabulary:
    """Words seen fewer than ``min_count`` times fall back to ``<unk>``."""
    if not train:
        raise ValueError("cannot build a vocabulary from an empty training set")
    word_counts: Counter = Counter()
    tag_counts: Counter = Counter()
    for sent, tags in train:
        word_counts.update(sent.tokens)
        tag_counts.update(tags.tags)
    for reserved in (PAD, UNK):
        word_counts.pop(reserved, None)
    tag_counts.pop(BOS_TAG, None)
    kept = Counter({w: n for w, n in word_counts.items() if n >= min_count})
    return Vocabulary([PAD, UNK] + _ranked(kept), [BOS_TAG] + _ranked(tag_counts))


# ----------------------------------------------------------------------------
# IOB


def split_tag(tag: str) -> tuple[str, str | None]:
    """``'B-loc' -> ('B', 'loc')``; ``'O' -> ('O', None)``."""
    if tag == OUTSIDE:
        return OUTSIDE, None
    prefix, sep, kind = tag.partition("-")
    if not sep or prefix not in ("B", "I") or not kind:
        raise ValueError(f"not an IOB tag: {tag!r}")
    return prefix, kind


def validate_iob(tags: TagSequence | Sequence[str], mode: str = "strict") -> TagSequence:
    """Check IOB consistency.

    ``strict`` raises :class:`IOBError` on an ``I-X`` that does not follow
    ``B-X``/``I-X``; ``repair`` rewrites such a tag to ``B-X``. Positions in
    error messages are 1-based.
    """
    if mode not in ("strict", "repair"):
        raise ValueError(f"mode must be 'strict' or 'repair', got {mode!r}")
    seq = tags.tags if isinstance(tags, TagSequence) else tuple(tags)
    out = list(seq)
    prev_kind = None
    for pos, tag in enumerate(seq):
        try:
            prefix, kind = split_tag(tag)
        except ValueError as exc:
            raise IOBError(f"position {pos + 1}: {exc}", pos + 1) from None
        if prefix == "I" and prev_kind != kind:
            if mode == "strict":
                raise IOBError(f"position {pos + 1}: {tag} does not continue a {kind} chunk", pos + 1)
            out[pos] = f"B-{kind}"
        prev_kind = kind
    return TagSequence(tuple(out))


def chunk_spans(tags: Sequence[str]) -> list[tuple[str, int, int]]:
    """(type, start, end) spans of a valid IOB sequence, end inclusive."""
    spans = []
    current = None
    for pos, tag in enumerate(tags):
        prefix, kind = split_tag(tag)
        if prefix == "I" and current is not None and current[0] == kind:
            current[2] = pos
            continue
        if current is not None:
            spans.append(tuple(current))
            current = None
        if prefix != OUTSIDE:
            current = [kind, pos, pos]
    if current is not None:
        spans.append(tuple(current))
    return spans


# ----------------------------------------------------------------------------
# Slot lexicon and augmentation


class SlotLexicon:
    """Slot type -> set of token-tuple values seen in annotations."""

    def __init__(self, values: dict[str, Iterable[Sequence[str]]] | None = None):
        self.values: dict[str, set[tuple[str, ...]]] = {}
        for kind, vals in (values or {}).items():
            for v in vals:
                self.add(kind, v)

    def add(self, kind: str, value: Sequence[str]) -> None:
        value = tuple(value)
        if not value:
            raise ValueError("empty slot value")
        self.values.setdefault(kind, set()).add(value)

    def choices(self, kind: str) -> list[tuple[str, ...]]:
        return sorted(self.values.get(kind, ()))

    def __contains__(self, kind: str) -> bool:
        return kind in self.values

    def __eq__(self, other) -> bool:
        return isinstance(other, SlotLexicon) and self.values == other.values

    @classmethod
    def from_pairs(cls, pairs: Iterable[Pair]) -> "SlotLexicon":
        lex = cls()
        for sent, tags in pairs:
            for kind, start, end in chunk_spans(validate_iob(tags, "repair").tags):
                lex.add(kind, sent.tokens[start:end + 1])
        return lex

    def dumps(self) -> str:
        """``slot<TAB>value`` lines; multi-token values are space-joined."""
        lines = []
        for kind in sorted(self.values):
            for value in self.choices(kind):
                lines.append(f"{kind}\t{' '.join(value)}\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text: str, path=None) -> "SlotLexicon":
        lex = cls()
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1].split():
                raise CorpusError("expected slot<TAB>value", path, lineno)
            lex.add(fields[0], fields[1].split(" "))
        return lex

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "SlotLexicon":
        return cls.loads(Path(path).read_bytes().decode("utf-8"), path)


def replace_slots(pair: Pair, lexicon: SlotLexicon, rng: np.random.Generator) -> Pair:
    """Swap every slot chunk for a random same-type value from the lexicon."""
    sent, tags = pair
    spans = chunk_spans(validate_iob(tags, "strict").tags)
    tokens: list[str] = []
    new_tags: list[str] = []
    pos = 0
    for kind, start, end in spans:
        tokens.extend(sent.tokens[pos:start])
        new_tags.extend(tags.tags[pos:start])
        options = lexicon.choices(kind)
        value = options[rng.integers(len(options))] if options else sent.tokens[start:end + 1]
        tokens.extend(value)
        new_tags.extend([f"B-{kind}"] + [f"I-{kind}"] * (len(value) - 1))
        pos = end + 1
    tokens.extend(sent.tokens[pos:])
    new_tags.extend(tags.tags[pos:])
    return Sentence(tuple(tokens), sent.line), TagSequence(tuple(new_tags))


def augment(pairs: Sequence[Pair], lexicon: SlotLexicon, factor: int = 10,
            seed: int = 0) -> list[Pair]:
    """Expand a corpus ``factor``-fold by random slot-value replacement.

    Each sentence is followed by ``factor - 1`` variants in which all of its
    slot chunks are independently resampled. Originals are always kept.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    rng = seeding.stream(seed, seeding.AUGMENT)
    out: list[Pair] = []
    for pair in pairs:
        out.append(pair)
        for _ in range(factor - 1):
            out.append(replace_slots(pair, lexicon, rng))
    return out


def split_corpus(pairs: Sequence[Pair], fraction: float = 0.8,
                 seed: int = 0) -> tuple[list[Pair], list[Pair]]:
    """Seeded random split into (first ``fraction``, remainder)."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    order = seeding.stream(seed, seeding.SPLIT).permutation(len(pairs))
    cut = int(round(fraction * len(pairs)))
    return [pairs[i] for i in order[:cut]], [pairs[i] for i in order[cut:]]
