import json
import math

import numpy as np
import pytest

from oracles import APPENDIX_EXAMPLE, SPEARMAN_CASES, SQUAD_CASES, fuzz_cases, translation_is_valid
from xferlab.errors import ConfigError, ContractError, ValidationError
from xferlab.evalprobe import (
    MinimalPair,
    QAExample,
    ScwsExample,
    WicExample,
    classification_accuracy,
    corpus_token_stats,
    normalize_answer,
    probe_scws,
    probe_syntax,
    probe_wic,
    read_minimal_pairs_tsv,
    read_scws_tsv,
    read_squad_dataset,
    read_squad_json,
    read_wic_tsv,
    spearman,
    squad_evaluate,
    squad_f1_em,
    validate_placeholders,
    write_squad_json,
)
from xferlab.evalprobe.probes import linear_probe_accuracy
from xferlab.tokenization import build_vocab


def test_accuracy():
    assert classification_accuracy([1, 1], [1, 1]) == 1.0
    assert classification_accuracy([0, 0], [1, 1]) == 0.0
    assert classification_accuracy([1, 2, 3, 0], [1, 2, 3, 4]) == 0.75
    with pytest.raises(ContractError):
        classification_accuracy([1], [1, 2])


@pytest.mark.parametrize("pred,golds,profile,f1,em", SQUAD_CASES)
def test_squad_suite(pred, golds, profile, f1, em):
    assert squad_f1_em(pred, golds, profile) == (f1, em)


def test_em_implies_f1():
    for pred, golds, profile, _, _ in SQUAD_CASES:
        f1, em = squad_f1_em(pred, golds, profile)
        assert em == 0.0 or f1 == 1.0


def test_normalization_profiles():
    assert normalize_answer("The  Cat, a dog.") == "cat dog"
    assert normalize_answer("The  Cat, a dog.", "whitespace") == "the cat a dog"
    with pytest.raises(ConfigError):
        normalize_answer("x", "klingon")


@pytest.mark.parametrize("x,y,rho", SPEARMAN_CASES)
def test_spearman_suite(x, y, rho):
    assert abs(spearman(x, y) - rho) < 1e-9


def squad_doc():
    return {"version": "1.1", "data": [{"title": "T", "paragraphs": [
        {"context": "The black cat sat on the mat.", "qas": [
            {"id": "q1", "question": "Who sat?", "answers": [{"text": "black cat", "answer_start": 4}]},
            {"id": "q2", "question": "Where?", "answers": [{"text": "the mat", "answer_start": 21}]}]}]}]}


def test_squad_roundtrip(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(squad_doc()))
    ex = read_squad_json(p)
    assert [e.id for e in ex] == ["q1", "q2"]
    write_squad_json(ex, tmp_path / "e.json")
    again = read_squad_json(tmp_path / "e.json")
    assert [(e.id, e.context, e.question, e.answers) for e in again] == [(e.id, e.context, e.question, e.answers) for e in ex]


def test_squad_off_by_one_names_id(tmp_path):
    doc = squad_doc()
    doc["data"][0]["paragraphs"][0]["qas"][1]["answers"][0]["answer_start"] = 22
    p = tmp_path / "d.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="q2"):
        read_squad_json(p)


def test_squad_evaluate_scores_missing_as_zero(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(squad_doc()))
    res = squad_evaluate({"q1": "cat"}, read_squad_json(p))
    assert res["missing"] == 1 and abs(res["f1"] - (2 / 3) / 2) < 1e-12


def test_token_stats():
    ex = [QAExample("a", "one two three four five six seven eight nine ten", "what is it", [("two three", 4)])]
    st = corpus_token_stats(ex)
    assert st["paragraph"] == 10.0 and st["question"] == 3.0 and st["answer"] == 2.0
    assert st["tokenizer"] == "whitespace"
    empty = corpus_token_stats([])
    assert empty["question"] is None and empty["paragraph"] is None


def test_token_stats_char_profile():
    st = corpus_token_stats([QAExample("a", "ab c", "d", [("ab", 0)])], "char")
    assert st["paragraph"] == 3.0 and st["answer"] == 2.0


def test_token_stats_dataset_counts_paragraphs_without_questions(tmp_path):
    doc = squad_doc()
    doc["data"][0]["paragraphs"].append({"context": "lonely words here", "qas": []})
    p = tmp_path / "d.json"
    p.write_text(json.dumps(doc))
    st = corpus_token_stats(read_squad_dataset(p))
    assert st["n_paragraphs"] == 2 and st["n_questions"] == 2


def test_placeholder_appendix_example():
    r = validate_placeholders(APPENDIX_EXAMPLE, APPENDIX_EXAMPLE)
    assert r.ok and r.spans == {0: "an example span"}


def test_placeholder_missing_closer():
    r = validate_placeholders(APPENDIX_EXAMPLE, "this is *0* an example span delimited by placeholders")
    assert not r.ok
    assert [(v.kind, v.key) for v in r.violations] == [("unclosed", 0)]
    assert r.violations[0].position == 8


def test_placeholder_reordered_spans_ok():
    src = "a *0* b #0# c *1* d #1#"
    r = validate_placeholders(src, "*1* d #1# c *0* b #0# a")
    assert r.ok and r.spans == {0: "b", 1: "d"}


def test_placeholder_crossing_and_duplicate():
    src = "*0* a #0# *1* b #1#"
    assert not validate_placeholders(src, "*0* a *1* b #0# #1#").ok
    assert not validate_placeholders(src, "*0* a #0# *1* b #1# #1#").ok


def test_placeholder_malformed_source_rejected():
    with pytest.raises(ValidationError):
        validate_placeholders("*0* never closed", "x")


def test_placeholder_fuzz_against_oracle():
    for src, tgt in fuzz_cases(1000, seed=7):
        assert validate_placeholders(src, tgt).ok == translation_is_valid(src, tgt), (src, tgt)


# ------------------------------------------------------------------ probes with stand-in models


class TableModel:
    """Stand-in exposing the probe interface over a fixed per-piece vector table."""

    def __init__(self, vocab, vectors):
        self.vocab = vocab
        self.vectors = vectors

    def hidden_states(self, ids, segments=None):
        ids = np.atleast_2d(ids)
        h = self.vectors[ids]
        h[:, 0] = h.mean(axis=1)
        return h


class RiggedMlm:
    def __init__(self, vocab, good_ids):
        self.vocab = vocab
        self.good = good_ids

    def masked_log_probs(self, ids, position):
        lp = np.full(len(self.vocab), -50.0)
        lp[list(self.good)] = 0.0
        return lp


@pytest.fixture(scope="module")
def vocab():
    return build_vocab(["the dog runs", "the dogs run", "a bank river money near far"] * 4, 60, "L1")


def test_linear_probe_separable():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 5))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x[:, 0] += np.where(y == 1, 1.0, -1.0)
    assert linear_probe_accuracy(x[:100], y[:100], x[100:], y[100:]) == 1.0


def test_linear_probe_random_labels_near_chance():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2000, 8))
    y = rng.integers(0, 2, 2000)
    acc = linear_probe_accuracy(x[:1000], y[:1000], x[1000:], y[1000:])
    assert abs(acc - 0.5) <= 3 * math.sqrt(0.25 / 1000)


def test_wic_contradictory_duplicate(vocab):
    model = TableModel(vocab, np.random.default_rng(0).normal(size=(len(vocab), 4)))
    ex = [WicExample("the bank", "a bank", "bank", 1), WicExample("the bank", "a bank", "bank", 0)]
    res = probe_wic(model, ex, ex)
    assert res.value <= 0.5


def test_wic_skips_missing_target(vocab):
    model = TableModel(vocab, np.random.default_rng(0).normal(size=(len(vocab), 4)))
    train = [WicExample("the bank", "a bank", "bank", 1), WicExample("the dog", "a dog", "dog", 0),
             WicExample("the dog", "no such", "dog", 1)]
    res = probe_wic(model, train, train)
    assert res.skipped == 2 and res.skipped_ids == [2] and res.n == 2


def test_wic_target_representation(vocab):
    vecs = np.random.default_rng(0).normal(size=(len(vocab), 4))
    model = TableModel(vocab, vecs)
    ex = [WicExample("the bank", "a bank", "bank", 1), WicExample("the dog", "a dog", "dog", 0)]
    assert probe_wic(model, ex, ex, representation="target").n == 2
    with pytest.raises(ConfigError):
        probe_wic(model, ex, ex, representation="avg")


def test_scws_perfect_and_reversed(vocab):
    vecs = np.random.default_rng(3).normal(size=(len(vocab), 4))
    model = TableModel(vocab, vecs)
    words = ["dog", "dogs", "bank", "river", "money"]

    def vec(w):
        return vecs[vocab.encode(w)].mean(axis=0)

    ref = vec("the")
    sims = [float(vec(w) @ ref / np.linalg.norm(vec(w)) / np.linalg.norm(ref)) for w in words]
    ex = [ScwsExample(w, w, "the", "the", s) for w, s in zip(words, sims)]
    assert abs(probe_scws(model, ex).value - 1.0) < 1e-12
    ex = [ScwsExample(w, w, "the", "the", -s) for w, s in zip(words, sims)]
    assert abs(probe_scws(model, ex).value + 1.0) < 1e-12


def test_syntax_rigged_head_and_coverage(vocab):
    runs = vocab.encode("x runs")
    assert len(runs) == 2
    pairs = [MinimalPair("the dog runs", "the dog run", "sv"),
             MinimalPair("a dog runs", "a dog run", "sv"),
             MinimalPair("the dog runs", "a dogs runs", "two_words"),
             MinimalPair("the dog runs", "the dog zzzzqq", "multi")]
    res = probe_syntax(RiggedMlm(vocab, {runs[1]}), pairs)
    c = res.coverage
    assert c == {"total": 4, "retained": 2, "multi_word": 1, "multi_piece": 1}
    assert c["retained"] + c["multi_word"] + c["multi_piece"] == c["total"]
    assert res.per_category == {"sv": 1.0} and res.macro == 1.0
    assert res.counts == {"sv": 2}


def test_syntax_argmax_reparameterisation_invariance(vocab):
    pairs = [MinimalPair("the dog runs", "the dog run", "sv")]
    base = RiggedMlm(vocab, {vocab.encode("x runs")[1]})

    class Scaled(RiggedMlm):
        def masked_log_probs(self, ids, position):
            return 3.0 * super().masked_log_probs(ids, position) - 7.0

    a = probe_syntax(base, pairs).macro
    b = probe_syntax(Scaled(vocab, base.good), pairs).macro
    assert a == b == 1.0


def test_tsv_readers(tmp_path):
    (tmp_path / "w.tsv").write_text("s one\ts two\tone\t1\n")
    assert read_wic_tsv(tmp_path / "w.tsv")[0].label == 1
    (tmp_path / "s.tsv").write_text("a b\tb\tc d\td\t3.5\n")
    assert read_scws_tsv(tmp_path / "s.tsv")[0].score == 3.5
    (tmp_path / "m.tsv").write_text("a b\ta c\tcat\n")
    assert read_minimal_pairs_tsv(tmp_path / "m.tsv")[0].category == "cat"
    (tmp_path / "bad.tsv").write_text("a\tb\n")
    with pytest.raises(ValidationError):
        read_wic_tsv(tmp_path / "bad.tsv")
    (tmp_path / "badlabel.tsv").write_text("a\tb\ta\t2\n")
    with pytest.raises(ValidationError):
        read_wic_tsv(tmp_path / "badlabel.tsv")
