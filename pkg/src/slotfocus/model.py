"""BLSTM encoder, LSTM decoder, and the attention / focus context mechanisms.

Shapes (defaults in brackets):

* word embeddings ``E``: |V| x d_emb [100]
* forward and backward encoder cells: hidden H [100]
* encoder state ``h_i = [backward_i ; forward_i]``: 2H
* label embeddings ``L``: |Y| x d_lab [100], row 0 is the ``<s>`` tag
* decoder cell: input d_lab + 2H, hidden d_s [2H]
* attention scorer: width A [H]
* output layer: |Y| x d_s

All positions and decoder steps are 0-based here.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BOS = 0  # tag id of the begin-of-sequence label
CHECKPOINT_VERSION = 1


class Mechanism(str, enum.Enum):
    ATTENTION = "attention"
    FOCUS = "focus"

    @classmethod
    def parse(cls, value) -> "Mechanism":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mechanism {value!r}; expected 'attention' or 'focus'") from None


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_tags: int  # including <s>
    emb_dim: int = 100
    hidden: int = 100
    label_dim: int = 100
    dec_hidden: int | None = None
    attn_dim: int | None = None
    mechanism: Mechanism = Mechanism.FOCUS
    peephole: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism.parse(self.mechanism))
        if self.dec_hidden is None:
            object.__setattr__(self, "dec_hidden", 2 * self.hidden)
        if self.attn_dim is None:
            object.__setattr__(self, "attn_dim", self.hidden)
        for name in ("vocab_size", "emb_dim", "hidden", "label_dim", "dec_hidden", "attn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_tags < 2:
            raise ValueError("need at least one tag besides <s>")
        if self.dec_hidden < self.hidden:
            raise ValueError("dec_hidden must be >= hidden so s_0 can hold the backward state")

    @property
    def context_dim(self) -> int:
        return 2 * self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mechanism"] = self.mechanism.value
        return d


def _cell_shapes(prefix: str, n_in: int, H: int, peephole: bool) -> dict[str, tuple]:
    shapes = {f"{prefix}.W_x": (4 * H, n_in), f"{prefix}.W_h": (4 * H, H), f"{prefix}.b": (4 * H,)}
    if peephole:
        shapes[f"{prefix}.peep"] = (3, H)
    return shapes


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered mapping of internal parameter names to shapes."""
    c = config
    shapes = {"emb.E": (c.vocab_size, c.emb_dim)}
    shapes.update(_cell_shapes("enc.fwd", c.emb_dim, c.hidden, c.peephole))
    shapes.update(_cell_shapes("enc.bwd", c.emb_dim, c.hidden, c.peephole))
    shapes["lab.L"] = (c.n_tags, c.label_dim)
    shapes.update(_cell_shapes("dec", c.label_dim + c.context_dim, c.dec_hidden, c.peephole))
    shapes.update({
        "att.W_s": (c.attn_dim, c.dec_hidden),
        "att.W_h": (c.attn_dim, c.context_dim),
        "att.b": (c.attn_dim,),
        "att.v": (c.attn_dim,),
        "out.W": (c.n_tags, c.dec_hidden),
        "out.b": (c.n_tags,),
    })
    return shapes


class Seq2SeqTagger:
    """Parameter container for the encoder-decoder.

    ``params`` maps names from :func:`param_shapes` to leaf tensors that
    require gradients. The same tensors are reused at every time step.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter set mismatch; missing={missing} unexpected={extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ad.ShapeError(f"{name}: expected {shape}, got {params[name].shape}")
        self.config = config
        self.params = {name: params[name] for name in expected}
        mask = np.ones(config.n_tags, dtype=bool)
        mask[BOS] = False
        self.emit_mask = mask

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "Seq2SeqTagger":
        return cls(config, {k: Tensor(np.array(v, dtype=ad.default_dtype()), requires_grad=True, name=k)
                            for k, v in arrays.items()})

    @classmethod
    def zeros(cls, config: ModelConfig) -> "Seq2SeqTagger":
        return cls.from_arrays(config, {k: np.zeros(s) for k, s in param_shapes(config).items()})

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def cell(self, prefix: str) -> "CellParams":
        p = self.params
        return CellParams(p[f"{prefix}.W_x"], p[f"{prefix}.W_h"], p[f"{prefix}.b"],
                          p.get(f"{prefix}.peep"))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def copy(self) -> "Seq2SeqTagger":
        return Seq2SeqTagger.from_arrays(self.config, {k: v.copy() for k, v in self.arrays().items()})

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))


@dataclass
class CellParams:
    W_x: Tensor
    W_h: Tensor
    b: Tensor
    peep: Tensor | None = None

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_x.shape[1]


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, hidden: int) -> "LstmState":
        return cls(ad.zeros(hidden), ad.zeros(hidden))


@dataclass
class EncoderStates:
    """Encoder output for one sentence.

    ``states[i]`` is ``[backward[i] ; forward[i]]``; ``first_backward`` is the
    backward state at position 0, which has read the whole sentence.
    """

    states: list[Tensor]
    forward: list[Tensor]
    backward: list[Tensor]
    _matrix: Tensor | None = field(default=None, repr=False)
    _keys: Tensor | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def first_backward(self) -> Tensor:
        return self.backward[0]

    @property
    def matrix(self) -> Tensor:
        if self._matrix is None:
            self._matrix = ad.stack(self.states)
        return self._matrix


# ----------------------------------------------------------------------------
# Recurrences


def lstm_cell_step(cell: CellParams, prev: LstmState, x: Tensor) -> LstmState:
    """Peephole LSTM step (input, forget, output gates with cell peepholes)."""
    if x.shape != (cell.input_size,):
        raise ad.ShapeError(f"cell expects input of size {cell.input_size}, got {x.shape}")
    h, c = ad.lstm_cell(x, prev.h, prev.c, cell.W_x, cell.W_h, cell.b, cell.peep)
    return LstmState(h, c)


def lstm_cell_step_unfused(cell: CellParams, prev: LstmState, x: Tensor) -> LstmState:
    """Same recurrence as :func:`lstm_cell_step`, spelled out op by op."""
    H = cell.hidden
    z = ad.matmul(cell.W_x, x) + ad.matmul(cell.W_h, prev.h) + cell.b
    zi, zf, zc, zo = (ad.slice_(z, k * H, (k + 1) * H) for k in range(4))
    if cell.peep is not None:
        p = [ad.take_row(cell.peep, k) for k in range(3)]
        zi = zi + p[0] * prev.c
        zf = zf + p[1] * prev.c
    i, f = ad.sigmoid(zi), ad.sigmoid(zf)
    c = f * prev.c + i * ad.tanh(zc)
    if cell.peep is not None:
        zo = zo + p[2] * c
    h = ad.sigmoid(zo) * ad.tanh(c)
    return LstmState(h, c)


def _check_ids(model: Seq2SeqTagger, token_ids: Sequence[int]) -> None:
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty sentence")
    V = model.config.vocab_size
    for pos, tok in enumerate(token_ids):
        if not 0 <= tok < V:
            raise ValueError(f"token id {tok} at position {pos} outside vocabulary of size {V}")


def blstm_encode(model: Seq2SeqTagger, token_ids: Sequence[int],
                 embed_masks: Sequence[np.ndarray] | None = None,
                 cells: tuple[str, str] = ("enc.fwd", "enc.bwd")) -> EncoderStates:
    """Run both encoder directions over the sentence.

    ``embed_masks`` are optional per-position dropout multipliers applied to
    the word embeddings. ``cells`` names the parameter prefixes used for the
    forward and backward scan.
    """
    _check_ids(model, token_ids)
    E = model["emb.E"]
    inputs = [ad.take_row(E, int(tok)) for tok in token_ids]
    if embed_masks is not None:
        inputs = [x * ad.Tensor(m) for x, m in zip(inputs, embed_masks)]
    fwd_cell, bwd_cell = model.cell(cells[0]), model.cell(cells[1])
    H = fwd_cell.hidden
    T = len(inputs)

    forward = []
    state = LstmState.zeros(H)
    for x in inputs:
        state = lstm_cell_step(fwd_cell, state, x)
        forward.append(state.h)

    backward: list[Tensor] = [None] * T  # type: ignore[list-item]
    state = LstmState.zeros(H)
    for i in range(T - 1, -1, -1):
        state = lstm_cell_step(bwd_cell, state, inputs[i])
        backward[i] = state.h

    states = [ad.concat(b, f) for b, f in zip(backward, forward)]
    return EncoderStates(states, forward, backward)


def attention_context(model: Seq2SeqTagger, s_prev: Tensor, enc: EncoderStates,
                      alpha_override: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Soft alignment over encoder states.

    score_i = v . tanh(W_s s_prev + W_h h_i + b), alpha = softmax(score),
    context = sum_i alpha_i h_i. ``alpha_override`` replaces the computed
    weights (used to pin the alignment, e.g. to a one-hot vector).
    """
    if not np.all(np.isfinite(s_prev.data)):
        raise ad.NumericError("attention: non-finite decoder state")
    T = len(enc)
    if alpha_override is not None:
        alpha = Tensor(np.asarray(alpha_override, dtype=ad.default_dtype()))
        if alpha.shape != (T,):
            raise ad.ShapeError(f"alpha override must have shape {(T,)}, got {alpha.shape}")
    else:
        if enc._keys is None:
            enc._keys = ad.matmul(enc.matrix, _transpose(model["att.W_h"]))
        query = ad.matmul(model["att.W_s"], s_prev) + model["att.b"]
        hidden = ad.tanh(enc._keys + ad.broadcast_rows(query, T))
        alpha = ad.softmax(ad.matmul(hidden, model["att.v"]))
    context = ad.matmul(alpha, enc.matrix)
    return context, alpha


def _transpose(t: Tensor) -> Tensor:
    return ad._result(t.data.T.copy(), (t,), lambda g: (g.T,), "transpose")


def focus_context(enc: EncoderStates, t: int) -> Tensor:
    """The encoder state aligned with decoder step ``t``."""
    if not 0 <= t < len(enc):
        raise IndexError(f"focus step {t} outside sentence of length {len(enc)}: "
                         "focus cannot emit more labels than there are words")
    return enc.states[t]


def context_for(model: Seq2SeqTagger, mechanism: Mechanism, s_prev: Tensor,
                enc: EncoderStates, t: int) -> Tensor:
    if mechanism is Mechanism.FOCUS:
        return focus_context(enc, t)
    return attention_context(model, s_prev, enc)[0]


def init_decoder_state(model: Seq2SeqTagger, enc: EncoderStates) -> LstmState:
    """s_0: the first backward state, zero-padded to the decoder width."""
    if len(enc) == 0:
        raise ValueError("empty encoder states")
    d_s = model.config.dec_hidden
    first = enc.first_backward
    pad = d_s - first.shape[0]
    h = first if pad == 0 else ad.concat(first, ad.zeros(pad))
    return LstmState(h, ad.zeros(d_s))


def decoder_logits(model: Seq2SeqTagger, s_prev: LstmState, y_prev: int, context: Tensor,
                   output_mask: np.ndarray | None = None) -> tuple[LstmState, Tensor]:
    """Advance the decoder and return the pre-softmax output scores."""
    n_tags = model.config.n_tags
    if not 0 <= y_prev < n_tags:
        raise ValueError(f"previous tag id {y_prev} outside [0, {n_tags})")
    x = ad.concat(ad.take_row(model["lab.L"], int(y_prev)), context)
    state = lstm_cell_step(model.cell("dec"), s_prev, x)
    h = state.h if output_mask is None else state.h * Tensor(output_mask)
    logits = ad.matmul(model["out.W"], h) + model["out.b"]
    return state, logits


def decoder_step(model: Seq2SeqTagger, s_prev: LstmState, y_prev: int,
                 context: Tensor) -> tuple[LstmState, Tensor]:
    """One decoder step; returns the new state and the label distribution.

    ``<s>`` never receives probability mass.
    """
    state, logits = decoder_logits(model, s_prev, y_prev, context)
    return state, ad.softmax(logits, mask=model.emit_mask)


def run_decoder(model: Seq2SeqTagger, mechanism, token_ids: Sequence[int],
                prev_tags: Sequence[int],
                alpha_override: Callable[[int], np.ndarray] | None = None
                ) -> list[tuple[Tensor, Tensor, Tensor | None]]:
    """Teacher-forced pass returning ``(dist, context, alpha)`` per step.

    ``prev_tags[t]`` is the label fed at step ``t`` (``prev_tags[0]`` is
    normally ``BOS``). ``alpha_override(t)`` pins the attention weights.
    """
    mechanism = Mechanism.parse(mechanism)
    enc = blstm_encode(model, token_ids)
    state = init_decoder_state(model, enc)
    out = []
    for t, y_prev in enumerate(prev_tags):
        if mechanism is Mechanism.FOCUS:
            context, alpha = focus_context(enc, t), None
        else:
            override = alpha_override(t) if alpha_override is not None else None
            context, alpha = attention_context(model, state.h, enc, override)
        state, dist = decoder_step(model, state, y_prev, context)
        out.append((dist, context, alpha))
    return out


# ----------------------------------------------------------------------------
# Checkpoints
#
# An .npz container. Every parameter is stored under its canonical per-gate
# name (e.g. ``enc.fwd.W_xi``) as a row-major float64 array; ``__meta__``
# holds UTF-8 JSON with the format version, the model config and the
# vocabularies together with their hashes.

_GATES = ("i", "f", "c", "o")
_PEEPS = ("i", "f", "o")


def canonical_arrays(model: Seq2SeqTagger) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, arr in model.arrays().items():
        prefix, _, leaf = name.rpartition(".")
        if prefix.startswith(("enc.", "dec")) and leaf in ("W_x", "W_h", "b", "peep"):
            if leaf == "peep":
                for k, gate in enumerate(_PEEPS):
                    out[f"{prefix}.w_c{gate}"] = arr[k]
                continue
            for k, block in enumerate(np.split(arr, 4, axis=0)):
                suffix = f"b_{_GATES[k]}" if leaf == "b" else f"{leaf}{_GATES[k]}"
                out[f"{prefix}.{suffix}"] = block
        else:
            out[name] = arr
    return {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in out.items()}


def _from_canonical(config: ModelConfig, stored: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    arrays = {}
    for name in param_shapes(config):
        prefix, _, leaf = name.rpartition(".")
        if leaf == "peep":
            arrays[name] = np.stack([stored[f"{prefix}.w_c{g}"] for g in _PEEPS])
        elif prefix.startswith(("enc.", "dec")) and leaf in ("W_x", "W_h"):
            arrays[name] = np.concatenate([stored[f"{prefix}.{leaf}{g}"] for g in _GATES])
        elif prefix.startswith(("enc.", "dec")) and leaf == "b":
            arrays[name] = np.concatenate([stored[f"{prefix}.b_{g}"] for g in _GATES])
        else:
            arrays[name] = stored[name]
    return arrays


def vocab_hash(items: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: Seq2SeqTagger, words: Sequence[str] = (),
                    tags: Sequence[str] = (), extra: dict | None = None) -> None:
    meta = {
        "format": "slotfocus-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "words": list(words),
        "tags": list(tags),
        "words_sha256": vocab_hash(words),
        "tags_sha256": vocab_hash(tags),
        "extra": extra or {},
    }
    arrays = canonical_arrays(model)
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[Seq2SeqTagger, dict]:
    """Load a checkpoint; returns the model and its metadata dict."""
    try:
        with np.load(path, allow_pickle=False) as data:
            stored = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in stored:
        raise CheckpointError(f"{path}: missing metadata")
    meta = json.loads(stored.pop("__meta__").tobytes().decode("utf-8"))
    if meta.get("format") != "slotfocus-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')} "
                              f"v{meta.get('version')}")
    for key in ("words", "tags"):
        if vocab_hash(meta[key]) != meta[f"{key}_sha256"]:
            raise CheckpointError(f"{path}: {key} vocabulary hash mismatch")
    config = ModelConfig(**meta["config"])
    try:
        arrays = _from_canonical(config, stored)
        model = Seq2SeqTagger.from_arrays(config, arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not match config: {exc}") from exc
    return model, meta
