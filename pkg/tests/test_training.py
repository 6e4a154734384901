import math

import numpy as np
import pytest

from slotfocus import autodiff as ad
from slotfocus import seeding
from slotfocus.gradcheck import check_gradients
from slotfocus.model import Seq2SeqTagger, load_checkpoint
from slotfocus.synthetic import toy_slot_corpus
from slotfocus.training import (DEFAULT_GRID, NonFiniteGradient, TrainConfig, evaluate,
                                grid_search, init_params, sequence_loss, sgd_step, train)

from conftest import small_config

TINY = dict(hidden=8, emb_dim=8, label_dim=4, min_count=1)


def test_init_range_and_determinism():
    cfg = small_config(vocab_size=50, hidden=16, emb_dim=10)
    a, b = init_params(cfg, 3), init_params(cfg, 3)
    for k, t in a.params.items():
        assert np.all(np.abs(t.data) < 0.2)
        assert t.data.tobytes() == b[k].data.tobytes()
    assert not np.array_equal(init_params(cfg, 4)["emb.E"].data, a["emb.E"].data)


def test_init_stream_mean():
    cfg = small_config(vocab_size=1000, emb_dim=100)
    values = init_params(cfg, 0)["emb.E"].data.ravel()
    assert values.size == 100_000
    assert abs(values.mean()) < 0.01


def test_zero_model_loss_is_length_times_log_labels():
    model = Seq2SeqTagger.zeros(small_config(n_labels=4))
    loss = sequence_loss(model, "focus", [1, 2, 3, 4, 5], [1, 2, 3, 4, 1])
    assert loss.item() == pytest.approx(5 * math.log(4), abs=1e-12)
    loss = sequence_loss(model, "attention", [1, 2, 3], [1, 1, 1])
    assert loss.item() == pytest.approx(3 * math.log(4), abs=1e-12)


def test_loss_without_dropout_is_deterministic():
    model = init_params(small_config(), 1)
    a = sequence_loss(model, "attention", [1, 2, 3], [1, 2, 3]).item()
    b = sequence_loss(model, "attention", [1, 2, 3], [1, 2, 3]).item()
    assert a == b


def test_dropout_changes_loss_and_reseeding_freezes_it():
    model = init_params(small_config(), 1)
    loss = lambda rng: sequence_loss(model, "focus", [1, 2, 3], [1, 2, 3], 0.5, rng).item()
    rng = seeding.stream(0, seeding.DROPOUT)
    assert loss(rng) != loss(rng)
    assert loss(seeding.stream(0, seeding.DROPOUT)) == loss(seeding.stream(0, seeding.DROPOUT))


@pytest.mark.parametrize("mechanism", ["focus", "attention"])
def test_loss_gradient_with_frozen_masks(mechanism):
    model = init_params(small_config(), 2)

    def loss():
        return sequence_loss(model, mechanism, [1, 4, 2, 7], [1, 3, 3, 2], 0.5,
                             seeding.stream(9, seeding.DROPOUT))

    assert check_gradients(loss, model.params).max_error < 1e-4


def test_loss_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        sequence_loss(init_params(small_config(), 0), "focus", [1, 2], [1])


def test_sgd_zero_rate_and_scalar_case():
    model = init_params(small_config(), 0)
    before = {k: v.copy() for k, v in model.arrays().items()}
    ad.backward(sequence_loss(model, "focus", [1, 2], [1, 2]))
    sgd_step(model, 0.0)
    for k, v in model.arrays().items():
        assert v.tobytes() == before[k].tobytes()
        assert not model[k].grad.any()

    theta = ad.tensor(1.0, requires_grad=True)
    theta.grad = np.asarray(2.0)
    sgd_step({"theta": theta}, 0.1)
    assert theta.item() == pytest.approx(0.8, abs=1e-15)


def test_sgd_reduces_convex_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    w = ad.tensor(np.zeros(3), requires_grad=True)
    quad = lambda: ad.sum((w - target) * (w - target))
    before = quad().item()
    ad.backward(quad())
    sgd_step({"w": w}, 0.1)
    assert quad().item() < before


def test_sgd_aborts_on_non_finite_gradient():
    w = ad.tensor([1.0], requires_grad=True)
    w.grad = np.array([np.nan])
    with pytest.raises(NonFiniteGradient) as info:
        sgd_step({"dec.W_x": w}, 0.1)
    assert info.value.name == "dec.W_x"
    assert w.data[0] == 1.0


def test_config_validation():
    for bad in (dict(epochs=0), dict(dropout_p=1.0), dict(learning_rate=0.0), dict(dropout_p=-0.1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_config_defaults_and_file(tmp_path):
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.dropout_p, cfg.init_range, cfg.beam_size) == (100, 0.5, 0.2, 2)
    assert cfg.grid == DEFAULT_GRID
    assert min(DEFAULT_GRID) == 0.004 and max(DEFAULT_GRID) == 0.04
    path = tmp_path / "cfg.json"
    path.write_text('{"learning_rate": 0.016, "mechanism": "attention", "hidden": 12}')
    loaded = TrainConfig.load(path)
    assert (loaded.learning_rate, loaded.mechanism.value, loaded.hidden) == (0.016, "attention", 12)
    path.write_text('{"nested": {"a": 1}}')
    with pytest.raises(ValueError):
        TrainConfig.load(path)


@pytest.fixture(scope="module")
def small_run():
    data = toy_slot_corpus(12, seed=1)
    cfg = TrainConfig(learning_rate=0.02, epochs=3, seed=5, **TINY)
    return cfg, data, train(cfg, data[:8], data[8:])


def test_one_epoch_one_evaluation():
    data = toy_slot_corpus(6, seed=2)
    calls = []
    rec = train(TrainConfig(epochs=1, **TINY), data[:4], data[4:],
                callback=lambda e, m: calls.append(e.epoch))
    assert calls == [1] and len(rec.epochs) == 1 and rec.best_epoch == 1


def test_best_epoch_is_max(small_run):
    _, _, rec = small_run
    assert rec.best_f1 == max(e.val_f1 for e in rec.epochs)
    assert rec.epochs[rec.best_epoch - 1].val_f1 == rec.best_f1


def test_best_checkpoint_reproduces_validation_f1(small_run, tmp_path):
    cfg, data, rec = small_run
    path = tmp_path / "best.npz"
    rec.save_checkpoint(path)
    model, meta = load_checkpoint(path)
    from slotfocus.corpus import Vocabulary
    vocab = Vocabulary(meta["words"], meta["tags"])
    assert vocab == rec.vocab
    first = evaluate(model, cfg.mechanism, vocab, data[8:], cfg.beam_size)
    second = evaluate(model, cfg.mechanism, vocab, data[8:], cfg.beam_size)
    assert first.f1 == second.f1 == rec.best_f1
    assert meta["extra"]["best_epoch"] == rec.best_epoch


def test_training_is_reproducible(small_run):
    cfg, data, rec = small_run
    again = train(cfg, data[:8], data[8:])
    assert again.fingerprint() == rec.fingerprint()


def test_record_lines(small_run):
    import json
    _, _, rec = small_run
    lines = [json.loads(x) for x in rec.lines()]
    assert [x["epoch"] for x in lines[:-1]] == [1, 2, 3]
    assert lines[-1]["summary"] and lines[-1]["best_epoch"] == rec.best_epoch


def test_empty_validation_rejected():
    with pytest.raises(ValueError):
        train(TrainConfig(epochs=1, **TINY), toy_slot_corpus(3), [])


def test_single_rate_grid_equals_train(small_run):
    cfg, data, rec = small_run
    from dataclasses import replace
    result = grid_search(replace(cfg, grid=(cfg.learning_rate,)), data[:8], data[8:])
    assert result.best.fingerprint() == rec.fingerprint()
    assert result.table == [(cfg.learning_rate, rec.best_f1, None)]


def test_grid_winner_dominates():
    data = toy_slot_corpus(10, seed=4)
    cfg = TrainConfig(epochs=2, grid=(0.004, 0.04, 0.3), **TINY)
    result = grid_search(cfg, data[:7], data[7:])
    f1s = [f for _, f, err in result.table if err is None]
    assert result.best.best_f1 == max(f1s)
    assert [lr for lr, _, _ in result.table] == [0.004, 0.04, 0.3]
    assert "0.04" in result.format_table()
    best_rates = [lr for lr, f, _ in result.table if f == max(f1s)]
    assert result.best.config.learning_rate == min(best_rates)


def test_training_loss_decreases_at_small_rate():
    data = toy_slot_corpus(20, seed=6)
    non_increasing = 0
    for seed in range(5):
        cfg = TrainConfig(learning_rate=0.004, epochs=8, dropout_p=0.0, seed=seed, **TINY)
        rec = train(cfg, data, data[:3])
        losses = [e.loss for e in rec.epochs]
        non_increasing += all(b <= a for a, b in zip(losses, losses[1:]))
    assert non_increasing >= 4
