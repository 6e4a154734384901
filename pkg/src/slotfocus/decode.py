"""Length-constrained beam search and file tagging."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Pair, Sentence, TagSequence, Vocabulary, format_conll, parse_conll
from .model import (BOS, LstmState, Mechanism, Seq2SeqTagger, attention_context,
                    blstm_encode, decoder_logits, focus_context, init_decoder_state)


@dataclass
class Hypothesis:
    tag_ids: tuple[int, ...]
    log_prob: float
    state: LstmState

    @property
    def last(self) -> int:
        return self.tag_ids[-1] if self.tag_ids else BOS


def _log_dist(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def beam_search(model: Seq2SeqTagger, mechanism, token_ids: Sequence[int],
                beam_size: int = 2) -> Hypothesis:
    """Best tag sequence of exactly ``len(token_ids)`` labels.

    Every live hypothesis is expanded over all tags and the ``beam_size``
    best by cumulative log-probability survive. Equal scores keep the earlier
    parent, then the lower tag id, so decoding is deterministic.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    mechanism = Mechanism.parse(mechanism)
    mask = model.emit_mask
    tags = np.flatnonzero(mask)
    with ad.no_grad():
        enc = blstm_encode(model, token_ids)
        beam = [Hypothesis((), 0.0, init_decoder_state(model, enc))]
        for t in range(len(token_ids)):
            candidates = []
            if mechanism is Mechanism.FOCUS:
                shared_context = focus_context(enc, t)
            for rank, hyp in enumerate(beam):
                if mechanism is Mechanism.FOCUS:
                    context = shared_context
                else:
                    context = attention_context(model, hyp.state.h, enc)[0]
                state, logits = decoder_logits(model, hyp.state, hyp.last, context)
                logp = _log_dist(logits.data, mask)
                for tag in tags:
                    candidates.append((hyp.log_prob + logp[tag], rank, int(tag), state))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            beam = [Hypothesis(beam[rank].tag_ids + (tag,), float(score), state)
                    for score, rank, tag, state in candidates[:beam_size]]
    return beam[0]


def decode(model: Seq2SeqTagger, mechanism, token_ids: Sequence[int],
           beam_size: int = 2) -> list[int]:
    return list(beam_search(model, mechanism, token_ids, beam_size).tag_ids)


def decode_corpus(model: Seq2SeqTagger, mechanism, vocab: Vocabulary,
                  sentences: Sequence[Sentence | Pair], beam_size: int = 2) -> list[TagSequence]:
    out = []
    for item in sentences:
        sent = item[0] if isinstance(item, tuple) else item
        ids = decode(model, mechanism, vocab.encode_words(sent.tokens), beam_size)
        out.append(TagSequence(tuple(vocab.decode_tags(ids))))
    return out


def tag_text(model: Seq2SeqTagger, mechanism, vocab: Vocabulary, text: str,
             beam_size: int = 2) -> str:
    """Tag CoNLL text (or bare tokens, one per line); returns CoNLL text."""
    pairs = parse_conll(text, require_tags=False)
    if not pairs:
        return ""
    predicted = decode_corpus(model, mechanism, vocab, pairs, beam_size)
    return format_conll([(sent, tags) for (sent, _), tags in zip(pairs, predicted)])


def tag_file(model: Seq2SeqTagger, mechanism, vocab: Vocabulary, src, dst,
             beam_size: int = 2) -> int:
    """Write ``token<TAB>predicted_tag`` for every token of ``src``.

    Returns the number of sentences tagged; an empty input gives an empty
    output.
    """
    pairs = parse_conll(Path(src).read_bytes().decode("utf-8"), src, require_tags=False)
    predicted = decode_corpus(model, mechanism, vocab, pairs, beam_size)
    out = format_conll([(sent, tags) for (sent, _), tags in zip(pairs, predicted)])
    Path(dst).write_bytes(out.encode("utf-8"))
    return len(pairs)
