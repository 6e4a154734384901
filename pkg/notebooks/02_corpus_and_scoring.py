"""
CoNLL data, slot augmentation and chunk F1
==========================================
"""

# %%
from slotfocus import SlotLexicon, augment, build_vocab, extract_chunks, f1_score
from slotfocus.corpus import format_conll, make_pair, parse_conll
from slotfocus.synthetic import toy_slot_corpus

example = make_pair(
    "show flights from boston to new york today".split(),
    ["O", "O", "O", "B-fromloc", "O", "B-toloc", "I-toloc", "B-date"],
)
text = format_conll([example])
print(text)
assert format_conll(parse_conll(text)) == text

# %% [markdown]
# Chunks are (type, start, end) with an inclusive end.

# %%
print(extract_chunks(example[1]))

# %% [markdown]
# Augmentation swaps every slot value for another value of the same slot
# seen in the data. Each sentence is kept and followed by ``factor - 1``
# variants.

# %%
data = toy_slot_corpus(20, seed=1)
lexicon = SlotLexicon.from_pairs(data)
bigger = augment(data, lexicon, factor=10, seed=0)
print(len(data), "->", len(bigger))
for sent, tags in bigger[1:4]:
    print(" ".join(sent.tokens))

vocab = build_vocab(bigger)
print(vocab.n_words, "words,", vocab.n_tags, "tags")

# %% [markdown]
# Scoring one missed chunk out of two: precision 100, recall 50.

# %%
report = f1_score([["B-a", "O", "B-b"]], [["B-a", "O", "O"]])
print(report.to_text())
