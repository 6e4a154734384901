import numpy as np
import pytest

from slotfocus.chunkeval import ChunkSpan, F1Report, comparison_table, extract_chunks, f1_score
from slotfocus.corpus import make_pair
from slotfocus.synthetic import random_tag_sequence

from oracles import brute_force_chunks, brute_force_f1


def test_extract_chunks_basic():
    assert extract_chunks(["B-loc", "I-loc", "O", "B-date"]) == [
        ChunkSpan("loc", 0, 1), ChunkSpan("date", 3, 3)]
    assert extract_chunks(["O", "O"]) == []


def test_adjacent_b_tags_are_separate_chunks():
    assert extract_chunks(["B-loc", "B-loc"]) == [ChunkSpan("loc", 0, 0), ChunkSpan("loc", 1, 1)]


def test_dangling_inside_is_repaired():
    assert extract_chunks(["O", "I-loc", "I-loc", "I-date"]) == [
        ChunkSpan("loc", 1, 2), ChunkSpan("date", 3, 3)]


def test_span_invariant():
    with pytest.raises(ValueError):
        ChunkSpan("x", 3, 2)


def test_perfect_prediction():
    gold = [make_pair("a b c".split(), ["B-x", "I-x", "O"])]
    report = f1_score(gold, [["B-x", "I-x", "O"]])
    assert (report.precision, report.recall, report.f1) == (100.0, 100.0, 100.0)


def test_hand_derived_partial_match():
    gold = ["O", "O", "O", "B-dept", "O", "B-arr", "I-arr"]
    pred = ["O", "O", "O", "B-dept", "O", "O", "O"]
    report = f1_score([gold], [pred])
    assert (report.precision, report.recall, report.f1) == (100.0, 50.0, 66.67)


def test_empty_prediction_convention():
    report = f1_score([["B-x", "O"]], [["O", "O"]])
    assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)


def test_length_mismatch_names_sentence():
    with pytest.raises(ValueError, match="sentence 1"):
        f1_score([["O"], ["O", "O"]], [["O"], ["O"]])


def test_boundary_errors_count_as_wrong():
    report = f1_score([["B-x", "I-x"]], [["B-x", "O"]])
    assert report.counts() == (1, 1, 0)


def random_pairs(n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        length = int(rng.integers(1, 12))
        yield random_tag_sequence(rng, length), random_tag_sequence(rng, length)


def test_chunks_agree_with_brute_force():
    for gold, pred in random_pairs(1000, 0):
        for seq in (gold, pred):
            assert {(c.kind, c.start, c.end) for c in extract_chunks(seq)} == brute_force_chunks(seq)


def test_scores_agree_with_brute_force():
    pairs = list(random_pairs(1000, 1))
    gold, pred = zip(*pairs)
    report = f1_score(gold, pred)
    counts, scores = brute_force_f1(gold, pred)
    assert report.counts() == counts
    assert (report.precision, report.recall, report.f1) == scores


def test_micro_average_is_additive():
    pairs = list(random_pairs(200, 2))
    gold, pred = zip(*pairs)
    whole = f1_score(gold, pred)
    parts = f1_score(gold[:70], pred[:70]) + f1_score(gold[70:], pred[70:])
    assert whole.counts() == parts.counts()
    assert whole.f1 == parts.f1
    assert whole.gold == parts.gold and whole.correct == parts.correct


def test_correct_never_exceeds_gold_or_predicted():
    for gold, pred in random_pairs(300, 3):
        r = f1_score([gold], [pred])
        assert r.n_correct <= min(r.n_gold, r.n_predicted)


def test_report_serialisations():
    report = f1_score([["B-a", "I-a", "O", "B-b"]], [["B-a", "I-a", "O", "O"]])
    report.beam_size = 2
    text = report.to_text()
    assert "repaired" in text and "beam size 2" in text
    assert "FB1:  66.67" in text
    record = report.to_record()
    assert record["per_type"]["a"]["f1"] == 100.0 and record["per_type"]["b"]["recall"] == 0.0
    assert '"f1": 66.67' in report.to_json()


def test_comparison_table_layout():
    table = comparison_table([("LSTM", "", 93.40), ("BLSTM-LSTM", "Attention", 92.73),
                              ("BLSTM-LSTM", "Focus", 95.79)])
    lines = table.splitlines()
    assert "Mechanism" in lines[0]
    assert lines[-1].split("||")[1].strip() == "95.79"
    assert "Attention" in lines[-2] and "92.73" in lines[-2]
