import sys

import numpy as np
import pytest

from slotfocus.model import ModelConfig
from slotfocus.synthetic import toy_slot_corpus
from slotfocus.training import init_params


def small_config(mechanism="focus", vocab_size=9, n_labels=4, hidden=4, emb_dim=3, **kw):
    return ModelConfig(vocab_size=vocab_size, n_tags=n_labels + 1, emb_dim=emb_dim,
                       hidden=hidden, label_dim=emb_dim, mechanism=mechanism, **kw)


def random_model(seed=0, init_range=0.2, **kw):
    return init_params(small_config(**kw), seed, init_range)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_corpus():
    return toy_slot_corpus(60, seed=3)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
