import math

import numpy as np
import pytest

from xferlab import data as D
from xferlab import tokenization as tk
from xferlab.errors import ConfigError, ValidationError


def unique_corpus(n_docs=6, per_doc=4, lang="L1"):
    docs = [[f"w{d}x{i} tok{d} tok{i}" for i in range(per_doc)] for d in range(n_docs)]
    return D.Corpus(lang, docs)


@pytest.fixture(scope="module")
def small():
    c = unique_corpus()
    return c, tk.build_vocab(c, 80, "L1")


def test_upsample_examples():
    assert np.array_equal(D.upsample_distribution([9, 1], 0.5), [0.75, 0.25])
    assert np.allclose(D.upsample_distribution([2, 6], 1.0), [0.25, 0.75])
    assert np.allclose(D.upsample_distribution([2, 6, 100], 0.0), [1 / 3] * 3)
    q = D.upsample_distribution([5, 50, 500], 0.7)
    assert abs(q.sum() - 1) < 1e-12 and (np.diff(q) > 0).all()


def test_upsample_zero_size_raises():
    with pytest.raises(ConfigError):
        D.upsample_distribution([3, 0], 0.5)
    with pytest.raises(ConfigError):
        D.upsample_distribution([3, 1], 1.5)


def test_row_layout(small):
    c, v = small
    b = D.MlmBatcher(c, v, seq_len=24, mask_prob=0.0, seed=1).next_batch(16)
    for row, seg, att in zip(b.ids, b.segments, b.attention):
        n = int(att.sum())
        assert row[0] == tk.CLS and row[n - 1] == tk.SEP
        assert (row[n:] == tk.PAD).all() and not att[n:].any()
        seps = np.flatnonzero(row[:n] == tk.SEP)
        assert len(seps) == 2
        assert (seg[: seps[0] + 1] == 0).all() and (seg[seps[0] + 1 : n] == 1).all()


def test_mask_prob_zero_means_no_labels(small):
    c, v = small
    b = D.MlmBatcher(c, v, mask_prob=0.0).next_batch(8)
    assert b.mlm_positions.size == 0 and b.mlm_labels.size == 0


def test_labels_only_at_recorded_positions(small):
    c, v = small
    batcher = D.MlmBatcher(c, v, mask_prob=0.3, seed=4)
    b = batcher.next_batch(8)
    flat = b.ids.reshape(-1)
    assert len(set(b.mlm_positions.tolist())) == b.mlm_positions.size
    assert (flat[b.mlm_positions[b.mask_kinds == D.MASKED]] == tk.MASK).all()
    # no [MASK] outside the recorded positions
    others = np.setdiff1d(np.arange(flat.size), b.mlm_positions)
    assert (flat[others] != tk.MASK).all()
    assert (b.ids[:, 0] == tk.CLS).all()


def test_masking_binomial_statistics():
    rng = np.random.default_rng(0)
    ids = np.full((1, 10_000), 7)
    cand = np.ones_like(ids, dtype=bool)
    _, pos, _, _ = D.apply_mlm_masking(ids, cand, 0.15, 100, rng)
    sigma = math.sqrt(10_000 * 0.15 * 0.85)
    assert abs(pos.size - 1500) <= 3 * sigma


def test_masking_80_10_10_split():
    rng = np.random.default_rng(1)
    ids = np.full((1, 10_000), 7)
    new, pos, labels, kinds = D.apply_mlm_masking(ids, np.ones_like(ids, dtype=bool), 0.999999, 100, rng)
    n = kinds.size
    for kind, p in ((D.MASKED, 0.8), (D.RANDOM, 0.1), (D.KEEP, 0.1)):
        assert abs((kinds == kind).sum() - n * p) <= 3 * math.sqrt(n * p * (1 - p))
    flat = new.reshape(-1)
    assert (flat[pos[kinds == D.RANDOM]] >= tk.N_SPECIALS).all()
    assert (flat[pos[kinds == D.KEEP]] == labels[kinds == D.KEEP]).all()


def test_nsp_balance_and_negatives_never_true_next(small):
    c, v = small
    batcher = D.MlmBatcher(c, v, mask_prob=0.0, seed=2)
    nxt = {}
    for d, doc in enumerate(c.documents):
        for i in range(len(doc) - 1):
            nxt[tuple(v.encode(doc[i]))] = tuple(v.encode(doc[i + 1]))
    labels = []
    for _ in range(40):
        b = batcher.next_batch(25)
        for row, seg, att, lab in zip(b.ids, b.segments, b.attention, b.nsp_labels):
            n = int(att.sum())
            a = tuple(row[1:n][seg[1:n] == 0][:-1])
            bb = tuple(row[1:n][seg[1:n] == 1][:-1])
            if lab == D.RANDOM_NEXT:
                assert nxt[a] != bb
            else:
                assert nxt[a] == bb
            labels.append(lab)
    frac = np.mean(labels)
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / len(labels))


def test_batches_reproducible(small):
    c, v = small
    a = D.MlmBatcher(c, v, seed=9).next_batch(6)
    b = D.MlmBatcher(c, v, seed=9).next_batch(6)
    assert np.array_equal(a.ids, b.ids) and np.array_equal(a.mlm_positions, b.mlm_positions)


def test_batcher_state_roundtrip(small):
    c, v = small
    bt = D.MlmBatcher(c, v, seed=3)
    bt.next_batch(4)
    st = bt.get_state()
    x = bt.next_batch(4)
    bt.set_state(st)
    y = bt.next_batch(4)
    assert np.array_equal(x.ids, y.ids)


def test_truncation_recorded_and_layout_kept():
    c = D.Corpus("L1", [[" ".join(["abc"] * 30), " ".join(["abd"] * 30)]] * 2)
    v = tk.build_vocab(c, 20, "L1")
    b = D.MlmBatcher(c, v, seq_len=12, mask_prob=0.0).next_batch(4)
    assert b.n_truncated == 4
    assert (b.ids[:, 0] == tk.CLS).all() and (b.ids[:, -1] == tk.SEP).all()
    assert ((b.ids == tk.SEP).sum(axis=1) == 2).all()


def test_multilingual_language_frequencies():
    big = D.Corpus("A", [[f"a{i} b", f"c{i} d"] for i in range(9)])
    little = D.Corpus("B", [["x y", "y x"], ["x x", "y y"]])
    vs = {"A": tk.build_vocab(big, 60, "A"), "B": tk.build_vocab(little, 20, "B")}
    bt = D.MlmBatcher({"A": big, "B": little}, vs, sampler=D.SamplerConfig(0.5, 0))
    n = 0
    count_a = 0
    while n < 100_000:
        b = bt.next_batch(1000)
        count_a += sum(l == "A" for l in b.languages)
        n += 1000
    p = D.upsample_distribution([9, 2], 0.5)[0]
    assert abs(count_a - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_single_tiny_document_rejected_up_front():
    c = D.Corpus("L1", [["a b", "b a"]])
    with pytest.raises(ConfigError):
        D.MlmBatcher(c, tk.build_vocab(c, 20, "L1"))


def test_split_by_language():
    a = D.Corpus("A", [["a b", "b a"], ["a a", "b b"]])
    b = D.Corpus("B", [["x y", "y x"], ["x x", "y y"]])
    vs = {"A": tk.build_vocab(a, 20, "A"), "B": tk.build_vocab(b, 20, "B")}
    batch = D.MlmBatcher({"A": a, "B": b}, vs, mask_prob=0.5).next_batch(20)
    parts = batch.split_by_language()
    assert sum(len(p.nsp_labels) for p in parts.values()) == 20
    assert sum(p.mlm_labels.size for p in parts.values()) == batch.mlm_labels.size


def test_identity_transform():
    r = D.generate_synthetic(D.SynthSpec(transform=D.IDENTITY, seed=1), 200)
    assert r.l1.documents == r.l2.documents


def test_cipher_has_no_surface_overlap():
    r = D.generate_synthetic(D.SynthSpec(transform=D.CIPHER, seed=2), 500)
    w1 = {w for s in r.l1.sentences for w in s.split()}
    w2 = {w for s in r.l2.sentences for w in s.split()}
    assert not w1 & w2
    assert len(set(r.cipher.values())) == len(r.cipher)


def test_reverse_variant_reverses_word_order():
    spec = D.SynthSpec(transform=D.CIPHER_REVERSE, seed=3)
    r = D.generate_synthetic(spec, 100)
    for s1, s2 in zip(r.l1.sentences, r.l2.sentences):
        assert [r.cipher[w] for w in s1.split()][::-1] == s2.split()


def test_labels_preserved_under_cipher():
    spec = D.SynthSpec(transform=D.CIPHER, seed=4)
    l1, l2 = D.generate_task(spec, 300, 5)
    r = D.generate_synthetic(spec, 10)
    inverse = {v: k for k, v in r.cipher.items()}
    for (t1, y1), (t2, y2) in zip(l1, l2):
        assert y1 == y2
        assert D.topic_label(t1.split(), r.lexicon) == y1
        assert D.topic_label(t2.split(), r.lexicon, inverse) == y2


def test_task_is_balanced():
    l1, _ = D.generate_task(D.SynthSpec(seed=1), 400, 2)
    counts = np.bincount([y for _, y in l1])
    assert (counts == 100).all()


def test_nonpositive_sentences_raise():
    with pytest.raises(ConfigError):
        D.generate_synthetic(D.SynthSpec(), 0)


def test_minimal_pairs_differ_in_one_word():
    pairs = D.generate_minimal_pairs(D.SynthSpec(seed=5), 50, 6)
    assert len({p.category for p in pairs}) >= 3
    for p in pairs:
        assert len(p.differing_words()) == 1


def test_corpus_and_task_io(tmp_path):
    c = unique_corpus(2, 3)
    D.write_corpus(c, tmp_path / "c.txt")
    back = D.read_corpus(tmp_path / "c.txt", "L1")
    assert back.documents == c.documents
    D.write_task([("a b", 1), ("c", 0)], tmp_path / "t.tsv")
    assert D.read_task(tmp_path / "t.tsv") == [("a b", 1), ("c", 0)]
    D.write_task([("a", "b", 2)], tmp_path / "p.tsv")
    assert D.read_task(tmp_path / "p.tsv") == [("a", "b", 2)]
    (tmp_path / "bad.tsv").write_text("1\ta\tb\tc\n")
    with pytest.raises(ValidationError):
        D.read_task(tmp_path / "bad.tsv")


def test_classification_batch(small):
    c, v = small
    b = D.make_classification_batch([("w0x0 tok0", 1), ("w1x1 tok1", 0, )], v, 16)
    assert b.labels.tolist() == [1, 0]
    assert (b.ids[:, 0] == tk.CLS).all()


def test_synth_spec_roundtrip():
    spec = D.SynthSpec(transform=D.CIPHER, seed=7)
    assert D.SynthSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        D.SynthSpec(transform="rot13")


def test_topics_prefer_distinct_templates():
    lex = D.build_lexicon(D.Grammar())
    tops = lex.template_pref.argmax(axis=1)
    assert len(set(tops.tolist())) == lex.template_pref.shape[0]
    assert np.allclose(lex.template_pref.sum(axis=1), 1.0)
    assert D.build_lexicon(D.Grammar(template_skew=0)).template_pref is None


def test_task_templates_independent_of_topic():
    from collections import Counter

    gen = D.SentenceGenerator(D.Grammar(), 0, mix=0.0, topic_templates=False)
    seen = Counter((t, gen.sentence(t).template) for t in range(4) for _ in range(300))
    for t in range(4):
        counts = [seen[(t, tpl)] for tpl in D.TEMPLATES]
        assert max(counts) < 2 * min(counts)
