"""BLSTM-LSTM encoder-decoder slot filling with attention and focus contexts."""

__version__ = "0.1.0"

from .chunkeval import ChunkSpan, F1Report, extract_chunks, f1_score
from .corpus import (SlotLexicon, Sentence, TagSequence, Vocabulary, augment, build_vocab,
                     read_conll, validate_iob, write_conll)
from .decode import beam_search, decode, tag_file
from .model import (Mechanism, ModelConfig, Seq2SeqTagger, attention_context, blstm_encode,
                    decoder_step, focus_context, init_decoder_state, load_checkpoint,
                    lstm_cell_step, save_checkpoint)
from .training import TrainConfig, grid_search, init_params, sequence_loss, sgd_step, train

__all__ = [
    "ChunkSpan", "F1Report", "extract_chunks", "f1_score",
    "SlotLexicon", "Sentence", "TagSequence", "Vocabulary", "augment", "build_vocab",
    "read_conll", "validate_iob", "write_conll",
    "beam_search", "decode", "tag_file",
    "Mechanism", "ModelConfig", "Seq2SeqTagger", "attention_context", "blstm_encode",
    "decoder_step", "focus_context", "init_decoder_state", "load_checkpoint",
    "lstm_cell_step", "save_checkpoint",
    "TrainConfig", "grid_search", "init_params", "sequence_loss", "sgd_step", "train",
]
