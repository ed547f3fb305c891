import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import intent_acc_oracle, overall_oracle, random_corpus, slot_prf_oracle, spans_oracle
from misca.metrics import (
    evaluate,
    extract_spans,
    intent_accuracy,
    overall_accuracy,
    parse_kv,
    sequence_accuracy,
    slot_f1,
)


def test_spans_basic():
    assert extract_spans(["B-a", "I-a", "O", "B-b"]) == {(0, 2, "a"), (3, 4, "b")}
    assert extract_spans(["I-a", "I-a", "B-a", "I-b"]) == {(0, 2, "a"), (2, 3, "a"), (3, 4, "b")}
    assert extract_spans(["O", "O"]) == set()


def test_invalid_tag_raises():
    with pytest.raises(ValueError):
        extract_spans(["X-a"])


def test_partial_span_counts_as_miss():
    p, r, f = slot_f1([["B-a", "O", "O"]], [["B-a", "I-a", "O"]])
    assert (p, r, f) == (0.0, 0.0, 0.0)


def test_empty_predictions_give_zero_precision():
    assert slot_f1([["O"]], [["B-a"]]) == (0.0, 0.0, 0.0)
    assert slot_f1([["O"]], [["O"]]) == (0.0, 0.0, 0.0)


def test_intent_accuracy_order_insensitive():
    assert intent_accuracy([["b", "a"], ["a"]], [["a", "b"], ["a", "b"]]) == 0.5


def test_overall_needs_both():
    pi, gi = [["a"], ["a"], ["b"]], [["a"], ["a"], ["a"]]
    pt, gt = [["O"], ["B-x"], ["O"]], [["O"], ["O"], ["O"]]
    assert overall_accuracy(pi, gi, pt, gt) == pytest.approx(1 / 3)


def test_misaligned_inputs_raise():
    with pytest.raises(ValueError):
        overall_accuracy([["a"]], [], [], [])
    with pytest.raises(ValueError):
        slot_f1([["O", "O"]], [["O"]])


@pytest.mark.parametrize("seed", range(25))
def test_against_oracles(seed):
    pi, gi, pt, gt = random_corpus(seed)
    for tags in pt + gt:
        assert extract_spans(tags) == set(spans_oracle(tags))
    assert slot_f1(pt, gt) == pytest.approx(slot_prf_oracle(pt, gt), abs=1e-12)
    assert intent_accuracy(pi, gi) == pytest.approx(intent_acc_oracle(pi, gi), abs=1e-12)
    assert overall_accuracy(pi, gi, pt, gt) == pytest.approx(overall_oracle(pi, gi, pt, gt), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_overall_bounded_by_parts(seed):
    pi, gi, pt, gt = random_corpus(seed)
    ov = overall_accuracy(pi, gi, pt, gt)
    assert ov <= min(intent_accuracy(pi, gi), sequence_accuracy(pt, gt)) + 1e-15
    _, _, f = slot_f1(pt, gt)
    assert 0.0 <= f <= 1.0


def test_perfect_predictions():
    _, gi, _, gt = random_corpus(3, n_utt=6)
    rep = evaluate(gi, gi, gt, gt)
    assert rep.intent_accuracy == rep.overall_accuracy == rep.sequence_accuracy == 1.0
    has_spans = any(extract_spans(t) for t in gt)
    assert rep.slot_f1 == (1.0 if has_spans else 0.0)


def test_report_kv_round_trip():
    pi, gi, pt, gt = random_corpus(7)
    rep = evaluate(pi, gi, pt, gt)
    kv = parse_kv(rep.to_kv())
    assert float(kv["overall_accuracy"]) == pytest.approx(rep.overall_accuracy, abs=1e-6)
    assert int(kv["n"]) == len(gi)
    for label, (_, _, f, support) in rep.per_slot.items():
        assert int(kv[f"slot.{label}.support"]) == support
    assert "overall accuracy" in rep.to_table()
