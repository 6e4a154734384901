"""Per-sentence SGD training with dropout and validation-based model selection."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import seeding
from .chunkeval import F1Report, f1_score
from .corpus import Pair, Vocabulary, build_vocab
from .decode import decode_corpus
from .model import (BOS, Mechanism, ModelConfig, Seq2SeqTagger, attention_context,
                    blstm_encode, decoder_logits, focus_context, init_decoder_state,
                    param_shapes, save_checkpoint)

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.004, 0.008, 0.016, 0.032, 0.04)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name}")
        self.name = name


@dataclass
class TrainConfig:
    learning_rate: float = 0.008
    epochs: int = 100
    dropout_p: float = 0.5
    init_range: float = 0.2
    seed: int = 0
    mechanism: Mechanism = Mechanism.FOCUS
    grid: tuple[float, ...] = DEFAULT_GRID
    beam_size: int = 2
    min_count: int = 2
    emb_dim: int = 100
    hidden: int = 100
    label_dim: int = 100
    peephole: bool = True

    def __post_init__(self):
        self.mechanism = Mechanism.parse(self.mechanism)
        self.grid = tuple(float(x) for x in self.grid)
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.init_range <= 0:
            raise ValueError("init_range must be positive")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if any(lr <= 0 for lr in self.grid):
            raise ValueError("grid learning rates must be positive")

    def model_config(self, vocab: Vocabulary) -> ModelConfig:
        return ModelConfig(vocab_size=vocab.n_words, n_tags=vocab.n_tags, emb_dim=self.emb_dim,
                           hidden=self.hidden, label_dim=self.label_dim,
                           mechanism=self.mechanism, peephole=self.peephole)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mechanism"] = self.mechanism.value
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        """Read a flat JSON object of config keys."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
            raise ValueError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(data)


# ----------------------------------------------------------------------------
# Parameters and loss


def init_params(config: ModelConfig, seed: int, init_range: float = 0.2) -> Seq2SeqTagger:
    """Every parameter i.i.d. uniform on (-init_range, init_range)."""
    rng = seeding.stream(seed, seeding.INIT)
    arrays = {}
    for name, shape in param_shapes(config).items():
        values = rng.uniform(-init_range, init_range, size=shape)
        # uniform() is half-open; keep the interval open at both ends
        values[values == -init_range] = 0.0
        arrays[name] = values
    return Seq2SeqTagger.from_arrays(config, arrays)


def dropout_mask(rng: np.random.Generator, size: int, p: float) -> np.ndarray | None:
    """Inverted-dropout multiplier, or ``None`` when ``p == 0``."""
    if p == 0:
        return None
    keep = rng.random(size) >= p
    return keep / (1.0 - p)


def sequence_loss(model: Seq2SeqTagger, mechanism, token_ids: Sequence[int],
                  tag_ids: Sequence[int], dropout_p: float = 0.0,
                  rng: np.random.Generator | None = None) -> ad.Tensor:
    """Teacher-forced negative log-likelihood of the gold tags.

    Dropout (inverted, rate ``dropout_p``) hits the word embeddings and the
    decoder output before the output layer; recurrent paths are untouched.
    Masks are drawn from ``rng`` in a fixed order, so reseeding ``rng``
    reproduces them exactly.
    """
    if len(token_ids) != len(tag_ids):
        raise ValueError(f"{len(token_ids)} tokens but {len(tag_ids)} tags")
    mechanism = Mechanism.parse(mechanism)
    if dropout_p and rng is None:
        raise ValueError("dropout needs a random generator")
    cfg = model.config
    T = len(token_ids)
    embed_masks = None
    out_masks = [None] * T
    if dropout_p:
        embed_masks = [dropout_mask(rng, cfg.emb_dim, dropout_p) for _ in range(T)]
        out_masks = [dropout_mask(rng, cfg.dec_hidden, dropout_p) for _ in range(T)]
    enc = blstm_encode(model, token_ids, embed_masks)
    state = init_decoder_state(model, enc)
    prev = BOS
    terms = []
    for t, gold in enumerate(tag_ids):
        if gold == BOS:
            raise ValueError("<s> cannot be a gold label")
        if mechanism is Mechanism.FOCUS:
            context = focus_context(enc, t)
        else:
            context = attention_context(model, state.h, enc)[0]
        state, logits = decoder_logits(model, state, prev, context, out_masks[t])
        terms.append(ad.cross_entropy(logits, int(gold), model.emit_mask))
        prev = gold
    loss = terms[0]
    for term in terms[1:]:
        loss = loss + term
    return loss


def sgd_step(model: Seq2SeqTagger | dict[str, ad.Tensor], learning_rate: float) -> None:
    """Plain SGD update of every parameter, then clear the gradients.

    Accepts a model or a plain ``{name: tensor}`` mapping.
    """
    params = model.params if isinstance(model, Seq2SeqTagger) else model
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    for p in params.values():
        p.data -= learning_rate * p.grad
        p.grad = np.zeros_like(p.data)


# ----------------------------------------------------------------------------
# Training loop


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_f1: float
    seconds: float


@dataclass
class TrainRecord:
    config: TrainConfig
    vocab: Vocabulary
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_model: Seq2SeqTagger | None = None
    best_report: F1Report | None = None
    checkpoint: str | None = None

    @property
    def best_f1(self) -> float:
        return self.epochs[self.best_epoch - 1].val_f1 if self.epochs else float("nan")

    def lines(self) -> list[str]:
        """Machine-readable JSON lines: one per epoch and a summary."""
        out = [json.dumps({"epoch": e.epoch, "loss": e.loss, "val_f1": e.val_f1,
                           "seconds": round(e.seconds, 3)}) for e in self.epochs]
        out.append(json.dumps({"summary": True, "best_epoch": self.best_epoch,
                               "best_val_f1": self.best_f1,
                               "learning_rate": self.config.learning_rate,
                               "mechanism": self.config.mechanism.value,
                               "checkpoint": self.checkpoint}))
        return out

    def fingerprint(self) -> tuple:
        """Everything except wall-clock times, for reproducibility checks."""
        params = tuple((k, v.tobytes()) for k, v in self.best_model.arrays().items()) \
            if self.best_model is not None else ()
        return (tuple((e.epoch, e.loss, e.val_f1) for e in self.epochs), self.best_epoch, params)

    def save_checkpoint(self, path) -> None:
        save_checkpoint(path, self.best_model, self.vocab.words, self.vocab.tags,
                        extra={"best_epoch": self.best_epoch, "best_val_f1": self.best_f1,
                               "train_config": self.config.to_dict()})
        self.checkpoint = str(path)


def encode_pairs(vocab: Vocabulary, pairs: Sequence[Pair]) -> list[tuple[list[int], list[int]]]:
    return [(vocab.encode_words(s.tokens), vocab.encode_tags(t.tags)) for s, t in pairs]


def evaluate(model: Seq2SeqTagger, mechanism, vocab: Vocabulary, pairs: Sequence[Pair],
             beam_size: int = 2) -> F1Report:
    predicted = decode_corpus(model, mechanism, vocab, pairs, beam_size)
    report = f1_score(pairs, predicted)
    report.beam_size = beam_size
    return report


def train(config: TrainConfig, train_pairs: Sequence[Pair], valid_pairs: Sequence[Pair],
          vocab: Vocabulary | None = None,
          callback: Callable[[EpochRecord, Seq2SeqTagger], bool] | None = None) -> TrainRecord:
    """Train with a fixed learning rate and keep the best validation epoch.

    The vocabulary is built from ``train_pairs`` unless given. ``callback`` is
    called after every epoch with the epoch record and the current model; a
    truthy return ends training early.
    """
    if not valid_pairs:
        raise ValueError("validation set is empty")
    if not train_pairs:
        raise ValueError("training set is empty")
    vocab = vocab or build_vocab(train_pairs, config.min_count)
    data = encode_pairs(vocab, train_pairs)
    model = init_params(config.model_config(vocab), config.seed, config.init_range)
    shuffle_rng = seeding.stream(config.seed, seeding.SHUFFLE)
    dropout_rng = seeding.stream(config.seed, seeding.DROPOUT)
    record = TrainRecord(config=config, vocab=vocab)
    best = -math.inf
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        total = 0.0
        for index in shuffle_rng.permutation(len(data)):
            tokens, tags = data[index]
            loss = sequence_loss(model, config.mechanism, tokens, tags, config.dropout_p, dropout_rng)
            ad.backward(loss)
            total += loss.item()
            sgd_step(model, config.learning_rate)
        report = evaluate(model, config.mechanism, vocab, valid_pairs, config.beam_size)
        entry = EpochRecord(epoch, total / len(data), report.f1, time.perf_counter() - start)
        record.epochs.append(entry)
        log.info("epoch %d loss %.4f val F1 %.2f", epoch, entry.loss, entry.val_f1)
        if report.f1 > best:
            best = report.f1
            record.best_epoch = epoch
            record.best_model = model.copy()
            record.best_report = report
        if callback is not None and callback(entry, model):
            break
    return record


# ----------------------------------------------------------------------------
# Grid search


@dataclass
class GridResult:
    best: TrainRecord | None
    table: list[tuple[float, float | None, str | None]]  # (rate, best val F1, error)

    def format_table(self) -> str:
        lines = ["learning_rate\tval_f1"]
        for lr, f1, err in self.table:
            lines.append(f"{lr:g}\t{f1:.2f}" if err is None else f"{lr:g}\tfailed: {err}")
        return "\n".join(lines) + "\n"


def _grid_cell(args):
    config, train_pairs, valid_pairs, vocab = args
    try:
        return train(config, train_pairs, valid_pairs, vocab), None
    except (FloatingPointError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def grid_search(config: TrainConfig, train_pairs: Sequence[Pair], valid_pairs: Sequence[Pair],
                jobs: int = 1) -> GridResult:
    """Independent training run per learning rate in ``config.grid``.

    Every cell starts from the same seed. The winner has the highest best
    validation F1, ties going to the smaller rate. Failed cells are recorded
    and the search continues.
    """
    if not config.grid:
        raise ValueError("empty learning-rate grid")
    vocab = build_vocab(train_pairs, config.min_count)
    cells = [(replace(config, learning_rate=lr), train_pairs, valid_pairs, vocab)
             for lr in config.grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_cell, cells))
    else:
        results = [_grid_cell(c) for c in cells]
    table = []
    best = None
    for lr, (record, err) in sorted(zip(config.grid, results), key=lambda x: x[0]):
        table.append((lr, None if record is None else record.best_f1, err))
        if record is not None and (best is None or record.best_f1 > best.best_f1):
            best = record
    return GridResult(best, table)
