import logging
import string

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from misca.corpus import (
    UNK,
    CorpusError,
    LabelHierarchy,
    Sample,
    Vocabularies,
    build_hierarchy,
    dump_hierarchy,
    format_sample,
    load_hierarchy,
    make_batches,
    parse_corpus,
    parse_lines,
    repair_bio,
)
from misca.synthetic import generate


def test_minimal_block():
    (s,) = parse_lines(["show O", "flights O", "atis_flight"])
    assert s.tokens == ("show", "flights")
    assert s.intent_set == {"atis_flight"}


def test_multi_intent_and_tab_separator():
    (s,) = parse_lines(["fares\tO", "boston\tB-toloc.city_name", "atis_airfare#atis_flight", ""])
    assert s.intents == ("atis_airfare", "atis_flight")
    assert s.slot_tags == ("O", "B-toloc.city_name")


def test_blank_line_separated_blocks(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("a O\nx\n\nb O\nc B-loc\ny#z\n\n\n", encoding="utf-8")
    samples = parse_corpus(p)
    assert [s.intents for s in samples] == [("x",), ("y", "z")]


def test_missing_intent_line_reports_line_number():
    with pytest.raises(CorpusError, match=r":5: missing intent line"):
        parse_lines(["a O", "x", "", "b O", "c O"])


def test_token_without_tag_reports_line_number():
    with pytest.raises(CorpusError, match=r":2: expected 'token tag'"):
        parse_lines(["a O", "b", "c O", "x"])


def test_invalid_tag_rejected():
    with pytest.raises(CorpusError, match="invalid BIO tag"):
        parse_lines(["a X-foo", "x"])


def test_bio_repair(caplog):
    tags, fixed = repair_bio(["O", "I-loc", "I-loc", "B-x", "I-y"])
    assert tags == ("O", "B-loc", "I-loc", "B-x", "B-y")
    assert fixed == 2
    with caplog.at_level(logging.INFO, logger="misca.corpus"):
        (s,) = parse_lines(["a I-loc", "x"])
    assert s.slot_tags == ("B-loc",)
    assert "repaired 1" in caplog.text


def _every_i_continues(tags):
    prev = None
    for t in tags:
        if t.startswith("I-") and prev != t[2:]:
            return False
        prev = None if t == "O" else t[2:]
    return True


words = st.text(alphabet=string.ascii_letters + "'.-", min_size=1, max_size=6)
labels = st.sampled_from(["loc", "toloc.city_name", "time"])
tags = st.one_of(st.just("O"), st.builds(lambda p, l: f"{p}-{l}", st.sampled_from("BI"), labels))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(words, tags), min_size=1, max_size=8), st.lists(st.sampled_from(["a", "b_c", "d.e"]), min_size=1, max_size=3, unique=True))
def test_round_trip(pairs, intents):
    toks = tuple(p[0] for p in pairs)
    fixed, _ = repair_bio([p[1] for p in pairs])
    s = Sample(toks, fixed, tuple(intents))
    (back,) = parse_lines(format_sample(s).splitlines())
    assert back == s
    assert _every_i_continues(back.slot_tags)


def _samples_with(labels):
    return [Sample(("w",) * len(labels), tuple(f"B-{l}" for l in labels), ("i",))]


def test_hierarchy_two_levels():
    h = build_hierarchy(_samples_with(["toloc.city_name", "fromloc.city_name", "city_name"]), 2)
    assert h.slot_levels[0] == ["city_name", "fromloc", "toloc"]
    assert h.fine_labels == ["city_name", "fromloc.city_name", "toloc.city_name"]
    assert h.parent == {"city_name": "city_name", "fromloc.city_name": "fromloc", "toloc.city_name": "toloc"}
    assert h.bio_tag_count == 7
    assert h.tags[:3] == ["O", "B-city_name", "I-city_name"]


def test_hierarchy_one_level():
    h = build_hierarchy(_samples_with(["b.x", "a"]), 1)
    assert h.slot_levels == [["a", "b.x"]]
    assert h.parent == {}


def test_hierarchy_without_prefixes_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="misca.corpus"):
        h = build_hierarchy(_samples_with(["a", "b"]), 2)
    assert "no slot label has a '.' prefix" in caplog.text
    assert h.slot_levels == [["a", "b"], ["a", "b"]]


def test_hierarchy_rejects_bad_level():
    with pytest.raises(ValueError):
        build_hierarchy(_samples_with(["a"]), 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.from_regex(r"[a-z]{1,4}(\.[a-z_]{1,5})?", fullmatch=True), min_size=1, max_size=8))
def test_parent_is_prefix(labels):
    h = build_hierarchy(_samples_with(labels), 2)
    for fine in h.fine_labels:
        parent = h.parent[fine]
        assert parent == fine or fine.startswith(parent + ".")
        assert parent in h.slot_levels[0]


def test_hierarchy_sidecar_round_trip(tmp_path):
    h = build_hierarchy(generate(seed=2)["train"], 2)
    dump_hierarchy(h, tmp_path / "labels.txt")
    text = (tmp_path / "labels.txt").read_text()
    assert "slot2\tloc.city\tloc" in text
    assert load_hierarchy(tmp_path / "labels.txt") == h


def _n_samples(k):
    return [Sample(("w",) * (1 + i % 4), ("O",) * (1 + i % 4), ("x",)) for i in range(k)]


def test_batch_sizes():
    samples = _n_samples(70)
    h = build_hierarchy(samples)
    v = Vocabularies.build(samples)
    assert [len(b) for b in make_batches(samples, v, h, 32)] == [32, 32, 6]


def test_empty_input_gives_no_batches():
    h = LabelHierarchy(["x"], [[]])
    assert make_batches([], Vocabularies.build([]), h, 32) == []


def test_mask_and_padding(toy):
    samples, h, v = toy
    short = Sample(("fly",), ("O",), ("atis_flight",))
    b = make_batches([samples[0], short], v, h, 8)[0]
    assert b.mask.tolist() == [[1.0, 1.0], [1.0, 0.0]]
    assert b.token_ids[1, 1] == 0
    assert b.char_ids[1, 1].sum() == 0


def test_shuffle_is_seeded():
    samples = _n_samples(50)
    h = build_hierarchy(samples)
    v = Vocabularies.build(samples)
    order = lambda seed: [len(s.tokens) for b in make_batches(samples, v, h, 7, seed) for s in b.samples]
    assert order(5) == order(5)
    assert order(5) != order(6)


def test_batch_intent_invariants():
    sp = generate(seed=0)
    h = build_hierarchy(sp["train"], 2)
    v = Vocabularies.build(sp["train"])
    for b in make_batches(sp["train"], v, h, 6):
        assert torch.equal(b.gold_intents.sum(dim=1).long(), b.gold_intent_count)
        assert int(b.gold_intent_count.max()) <= h.max_intents
        assert torch.equal(b.mask.sum(dim=1).long(), torch.tensor(b.lengths))


def test_vocab_train_only():
    train = [Sample(("Show", "Boston"), ("O", "B-x"), ("i",))]
    v = Vocabularies.build(train)
    assert "show" in v.words and "boston" in v.words
    assert "Show" not in v.words  # lowercased
    assert "S" in v.chars and "B" in v.chars  # characters keep case
    assert v.words["denver"] == v.words[UNK] == 1
