"""Corpora, language upsampling, MLM/NSP batch construction, synthetic languages."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .tokenization import CLS, MASK, N_SPECIALS, PAD, SEP, Vocabulary

IS_NEXT, RANDOM_NEXT = 0, 1
KEEP, MASKED, RANDOM = 0, 1, 2


@dataclass
class Corpus:
    language: str
    documents: list[list[str]]

    def __post_init__(self) -> None:
        for i, doc in enumerate(self.documents):
            if not doc:
                raise ValidationError(f"document {i} of corpus {self.language!r} is empty")

    @property
    def sentences(self) -> list[str]:
        return [s for doc in self.documents for s in doc]

    def __len__(self) -> int:
        return sum(len(d) for d in self.documents)


def read_corpus(path: str | Path, language: str) -> Corpus:
    """One sentence per line; blank lines separate documents."""
    docs: list[list[str]] = []
    cur: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        line = line.rstrip("\r")
        if line.strip():
            cur.append(line)
        elif cur:
            docs.append(cur)
            cur = []
    if cur:
        docs.append(cur)
    return Corpus(language, docs)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text("\n\n".join("\n".join(doc) for doc in corpus.documents) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SamplerConfig:
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"upsampling exponent must lie in [0, 1], got {self.alpha}")


def upsample_distribution(sizes: Sequence[float], alpha: float) -> np.ndarray:
    """q_i proportional to n_i ** alpha (equivalently to p_i ** alpha)."""
    n = np.asarray(sizes, dtype=np.float64)
    if n.size == 0 or np.any(n <= 0):
        raise ConfigError(f"every language needs a positive example count, got {list(sizes)}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"upsampling exponent must lie in [0, 1], got {alpha}")
    w = np.power(n, alpha)
    return w / w.sum()


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass
class MlmBatch:
    ids: np.ndarray  # [B, T]
    positions: np.ndarray
    segments: np.ndarray
    attention: np.ndarray  # bool, True for real tokens
    mlm_positions: np.ndarray  # flat indices into B*T
    mlm_labels: np.ndarray
    nsp_labels: np.ndarray  # [B]
    languages: list[str] | None = None
    n_truncated: int = 0
    mask_kinds: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def rows(self, idx: Sequence[int]) -> "MlmBatch":
        idx = np.asarray(idx, dtype=np.int64)
        t = self.ids.shape[1]
        row_of = self.mlm_positions // t
        keep = np.isin(row_of, idx)
        remap = {int(r): k for k, r in enumerate(idx)}
        new_pos = np.array([remap[int(p // t)] * t + int(p % t) for p in self.mlm_positions[keep]], dtype=np.int64)
        return MlmBatch(
            self.ids[idx], self.positions[idx], self.segments[idx], self.attention[idx],
            new_pos, self.mlm_labels[keep], self.nsp_labels[idx],
            None if self.languages is None else [self.languages[i] for i in idx],
            self.n_truncated, None if self.mask_kinds is None else self.mask_kinds[keep],
        )

    def split_by_language(self) -> dict[str, "MlmBatch"]:
        if self.languages is None:
            raise ConfigError("batch carries no per-row languages")
        out = {}
        for lang in sorted(set(self.languages)):
            out[lang] = self.rows([i for i, l in enumerate(self.languages) if l == lang])
            out[lang].languages = [lang] * len(out[lang].nsp_labels)
        return out


def apply_mlm_masking(
    ids: np.ndarray, candidates: np.ndarray, mask_prob: float, vocab_size: int, rng: np.random.Generator
):
    """Select candidate positions w.p. ``mask_prob``; corrupt 80/10/10.

    Returns (corrupted ids, flat positions, labels, kinds).
    """
    flat = ids.reshape(-1).copy()
    cand = np.flatnonzero(candidates.reshape(-1))
    chosen = cand[rng.random(cand.size) < mask_prob]
    labels = flat[chosen].copy()
    u = rng.random(chosen.size)
    kinds = np.where(u < 0.8, MASKED, np.where(u < 0.9, RANDOM, KEEP))
    rand_ids = rng.integers(N_SPECIALS, vocab_size, size=chosen.size)
    flat[chosen[kinds == MASKED]] = MASK
    flat[chosen[kinds == RANDOM]] = rand_ids[kinds == RANDOM]
    return flat.reshape(ids.shape), chosen.astype(np.int64), labels.astype(np.int64), kinds


def pack_pair(a: Sequence[int], b: Sequence[int] | None, seq_len: int):
    """Lay out [CLS] a [SEP] (b [SEP]) [PAD]...; truncates the longer segment from its end.

    Returns (ids, segments, attention, truncated flag).
    """
    a, b = list(a), (list(b) if b is not None else None)
    room = seq_len - (3 if b is not None else 2)
    if room < 1:
        raise ConfigError(f"sequence length {seq_len} too short")
    truncated = False
    while len(a) + (len(b) if b is not None else 0) > room:
        truncated = True
        if b is not None and len(b) >= len(a):
            b.pop()
        else:
            a.pop()
    ids = [CLS] + a + [SEP]
    seg = [0] * len(ids)
    if b is not None:
        ids += b + [SEP]
        seg += [1] * (len(b) + 1)
    n = len(ids)
    att = [True] * n + [False] * (seq_len - n)
    ids += [PAD] * (seq_len - n)
    seg += [0] * (seq_len - n)
    return ids, seg, att, truncated


class MlmBatcher:
    """Builds MLM+NSP batches from one or more tokenised corpora; owns its RNG."""

    def __init__(
        self,
        corpora: Corpus | Mapping[str, Corpus],
        vocabs: Vocabulary | Mapping[str, Vocabulary],
        seq_len: int = 32,
        mask_prob: float = 0.15,
        sampler: SamplerConfig | None = None,
        seed: int = 0,
    ):
        if seq_len < 8:
            raise ConfigError("seq_len must be at least 8")
        if not 0.0 <= mask_prob < 1.0:
            raise ConfigError("mask_prob must lie in [0, 1)")
        if isinstance(corpora, Corpus):
            corpora = {corpora.language: corpora}
        if isinstance(vocabs, Vocabulary):
            vocabs = {lang: vocabs for lang in corpora}
        self.langs = list(corpora)
        self.multilingual = len(self.langs) > 1
        self.vocabs = dict(vocabs)
        self.seq_len = seq_len
        self.mask_prob = mask_prob
        sampler = sampler or SamplerConfig(seed=seed)
        self.probs = upsample_distribution([len(corpora[l]) for l in self.langs], sampler.alpha)
        self.rng = np.random.default_rng(sampler.seed if sampler is not None else seed)
        self.docs: dict[str, list[list[tuple[int, ...]]]] = {}
        self.anchors: dict[str, list[tuple[int, int]]] = {}
        for lang in self.langs:
            v = self.vocabs[lang]
            docs = [[tuple(v.encode(s)) for s in doc] for doc in corpora[lang].documents]
            self.docs[lang] = docs
            anchors = [(d, i) for d, doc in enumerate(docs) for i in range(len(doc) - 1)]
            if not anchors:
                raise ConfigError(f"corpus {lang!r} has no document with two sentences")
            if len(docs) == 1 and len(docs[0]) < 3:
                raise ConfigError(f"corpus {lang!r} is too small to draw NSP negatives")
            self.anchors[lang] = anchors

    def _negative(self, lang: str, d: int, i: int) -> tuple[int, ...]:
        docs = self.docs[lang]
        if len(docs) > 1:
            while True:
                d2 = int(self.rng.integers(len(docs)))
                if d2 != d:
                    doc = docs[d2]
                    return doc[int(self.rng.integers(len(doc)))]
        doc = docs[d]
        choices = [j for j in range(len(doc)) if j not in (i, i + 1)]
        if not choices:
            raise ConfigError("cannot draw an NSP negative from a single two-sentence document")
        return doc[choices[int(self.rng.integers(len(choices)))]]

    def next_batch(self, batch_size: int) -> MlmBatch:
        rows, segs, atts, nsp, langs = [], [], [], [], []
        truncated = 0
        for _ in range(batch_size):
            lang = self.langs[int(self.rng.choice(len(self.langs), p=self.probs))] if self.multilingual else self.langs[0]
            anchors = self.anchors[lang]
            d, i = anchors[int(self.rng.integers(len(anchors)))]
            a = self.docs[lang][d][i]
            if self.rng.random() < 0.5:
                b, label = self.docs[lang][d][i + 1], IS_NEXT
            else:
                b, label = self._negative(lang, d, i), RANDOM_NEXT
            ids, seg, att, trunc = pack_pair(a, b, self.seq_len)
            truncated += trunc
            rows.append(ids)
            segs.append(seg)
            atts.append(att)
            nsp.append(label)
            langs.append(lang)
        ids = np.array(rows, dtype=np.int64)
        att = np.array(atts, dtype=bool)
        cand = att & (ids != CLS) & (ids != SEP)
        # random replacements are drawn per row from that row's vocabulary
        out_ids = ids.copy()
        positions, labels, kinds = [], [], []
        t = self.seq_len
        for lang in dict.fromkeys(langs):
            sel = np.array([l == lang for l in langs])
            sub = np.where(sel[:, None], cand, False)
            new, pos, lab, kd = apply_mlm_masking(ids, sub, self.mask_prob, len(self.vocabs[lang]), self.rng)
            rows_sel = np.flatnonzero(sel)
            out_ids[rows_sel] = new[rows_sel]
            positions.append(pos)
            labels.append(lab)
            kinds.append(kd)
        pos = np.concatenate(positions) if positions else np.zeros(0, np.int64)
        order = np.argsort(pos, kind="stable")
        return MlmBatch(
            ids=out_ids,
            positions=np.tile(np.arange(t, dtype=np.int64), (batch_size, 1)),
            segments=np.array(segs, dtype=np.int64),
            attention=att,
            mlm_positions=pos[order],
            mlm_labels=np.concatenate(labels)[order],
            nsp_labels=np.array(nsp, dtype=np.int64),
            languages=langs,
            n_truncated=truncated,
            mask_kinds=np.concatenate(kinds)[order],
        )

    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


def make_mlm_nsp_batch(
    corpora: Corpus | Mapping[str, Corpus],
    vocabs: Vocabulary | Mapping[str, Vocabulary],
    batch_size: int,
    seq_len: int = 32,
    mask_prob: float = 0.15,
    sampler: SamplerConfig | None = None,
    seed: int = 0,
) -> MlmBatch:
    return MlmBatcher(corpora, vocabs, seq_len, mask_prob, sampler, seed).next_batch(batch_size)


@dataclass
class ClassificationBatch:
    ids: np.ndarray
    positions: np.ndarray
    segments: np.ndarray
    attention: np.ndarray
    labels: np.ndarray
    n_truncated: int = 0


def make_classification_batch(
    examples: Sequence[tuple[str, int]] | Sequence[tuple[str, str, int]],
    vocab: Vocabulary,
    seq_len: int = 32,
) -> ClassificationBatch:
    """Examples are ``(text, label)`` or ``(text_a, text_b, label)``."""
    rows, segs, atts, labels = [], [], [], []
    truncated = 0
    for ex in examples:
        if len(ex) == 2:
            a, b, y = vocab.encode(ex[0]), None, ex[1]
        else:
            a, b, y = vocab.encode(ex[0]), vocab.encode(ex[1]), ex[2]
        ids, seg, att, trunc = pack_pair(a, b, seq_len)
        truncated += trunc
        rows.append(ids)
        segs.append(seg)
        atts.append(att)
        labels.append(int(y))
    n = len(rows)
    return ClassificationBatch(
        np.array(rows, dtype=np.int64).reshape(n, seq_len),
        np.tile(np.arange(seq_len, dtype=np.int64), (n, 1)),
        np.array(segs, dtype=np.int64).reshape(n, seq_len),
        np.array(atts, dtype=bool).reshape(n, seq_len),
        np.array(labels, dtype=np.int64),
        truncated,
    )


@dataclass
class SpanBatch:
    ids: np.ndarray
    positions: np.ndarray
    segments: np.ndarray
    attention: np.ndarray
    context_mask: np.ndarray  # True where a span may start or end
    starts: np.ndarray
    ends: np.ndarray


def make_span_batch(examples, vocab: Vocabulary, seq_len: int = 64) -> SpanBatch:
    """Pack (question, context, answer_start_char, answer_text) into [CLS] q [SEP] c [SEP].

    QA examples are accepted too and contribute their first answer. Answer character
    offsets are mapped to token positions through whitespace words.
    """
    rows, segs, atts, ctxs, starts, ends = [], [], [], [], [], []
    for ex in examples:
        if hasattr(ex, "answers"):
            answer, char_start = ex.answers[0]
            question, context = ex.question, ex.context
        else:
            question, context, char_start, answer = ex
        q = vocab.encode(question)
        words, spans, offset = context.split(), [], 0
        for w in words:
            k = context.index(w, offset)
            spans.append((k, k + len(w)))
            offset = k + len(w)
        pieces = vocab.encode_words(words, first_marked=False)
        char_end = char_start + len(answer)
        tok_start = tok_end = None
        flat: list[int] = []
        for (ws, we), wp in zip(spans, pieces):
            if tok_start is None and we > char_start:
                tok_start = len(flat)
            flat.extend(wp)
            if ws < char_end:
                tok_end = len(flat) - 1
        if tok_start is None or tok_end is None:
            raise ValidationError(f"answer {answer!r} not located in context")
        ids, seg, att, _ = pack_pair(q, flat, seq_len)
        base = len(q) + 2
        ctx = np.zeros(seq_len, dtype=bool)
        n_ctx = sum(1 for s in seg if s == 1) - 1
        ctx[base : base + max(n_ctx, 0)] = True
        if base + tok_end >= base + n_ctx:
            raise ValidationError(f"answer {answer!r} truncated away at seq_len={seq_len}")
        rows.append(ids)
        segs.append(seg)
        atts.append(att)
        ctxs.append(ctx)
        starts.append(base + tok_start)
        ends.append(base + tok_end)
    n = len(rows)
    return SpanBatch(
        np.array(rows, dtype=np.int64),
        np.tile(np.arange(seq_len, dtype=np.int64), (n, 1)),
        np.array(segs, dtype=np.int64),
        np.array(atts, dtype=bool),
        np.array(ctxs, dtype=bool),
        np.array(starts, dtype=np.int64),
        np.array(ends, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# synthetic languages
# ---------------------------------------------------------------------------

L1_CONSONANTS = "bdfgklmnprstvz"
L1_VOWELS = "aeiou"
L2_CONSONANTS = "бвгджзклмнпрстфхцчш"
L2_VOWELS = "аеиоуэюя"

DET_SG = ("the", "a", "this")
DET_PL = ("the", "some", "these")
PREPS = ("near", "behind", "with")
THAT, AND = "that", "and"

TEMPLATES = ("simple", "adjective", "across_pp", "relative", "vp_coord")
IDENTITY, CIPHER, CIPHER_REVERSE = "identity", "cipher", "cipher_reverse"
TRANSFORMS = (IDENTITY, CIPHER, CIPHER_REVERSE)


@dataclass(frozen=True)
class Grammar:
    """Topic-classed lexicon with subject-verb agreement templates.

    Word, topic and template choices follow Zipf weights with exponent ``zipf``. With
    probability ``mix`` a non-subject noun phrase comes from another topic drawn from a
    fixed random affinity matrix. Each topic also has its own determiner and preposition
    preferences, drawn once from a Dirichlet with concentration ``function_alpha`` (0
    disables them). Templates are ranked per topic by rotating one random order of the
    templates, so topic ``t`` favours template ``t`` of that order with weights
    ``rank ** -template_skew`` (0 gives every topic the same Zipf template choice).
    Without such asymmetries topics are interchangeable and nothing identifies which
    L2 topic corresponds to which L1 topic. Word-level cues alone are not enough once
    the L2 embeddings are free to move; the template preference is a syntactic cue
    that the frozen body reads from positions and function words.
    """

    n_topics: int = 4
    nouns_per_topic: int = 6
    verbs_per_topic: int = 4
    adjectives_per_topic: int = 3
    templates: tuple[str, ...] = TEMPLATES
    doc_len: tuple[int, int] = (4, 8)
    lexicon_seed: int = 0
    zipf: float = 1.0
    mix: float = 0.25
    function_alpha: float = 0.7
    template_skew: float = 2.0

    def __post_init__(self) -> None:
        bad = set(self.templates) - set(TEMPLATES)
        if bad or not self.templates:
            raise ConfigError(f"unknown templates {sorted(bad)}")
        if min(self.n_topics, self.nouns_per_topic, self.verbs_per_topic, self.adjectives_per_topic) < 1:
            raise ConfigError("grammar needs at least one word of each class per topic")
        if not 1 <= self.doc_len[0] <= self.doc_len[1]:
            raise ConfigError(f"bad document length range {self.doc_len}")
        if self.zipf < 0:
            raise ConfigError("zipf exponent must be non-negative")
        if not 0 <= self.mix < 1:
            raise ConfigError("mix must lie in [0, 1)")
        if self.function_alpha < 0:
            raise ConfigError("function_alpha must be non-negative")
        if self.template_skew < 0:
            raise ConfigError("template_skew must be non-negative")


@dataclass(frozen=True)
class SynthSpec:
    grammar: Grammar = field(default_factory=Grammar)
    transform: str = IDENTITY
    seed: int = 0
    cipher_seed: int = 1

    def __post_init__(self) -> None:
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")

    def to_dict(self) -> dict:
        g = self.grammar
        return {
            "grammar": {
                "n_topics": g.n_topics, "nouns_per_topic": g.nouns_per_topic,
                "verbs_per_topic": g.verbs_per_topic, "adjectives_per_topic": g.adjectives_per_topic,
                "templates": list(g.templates), "doc_len": list(g.doc_len), "lexicon_seed": g.lexicon_seed,
                "zipf": g.zipf, "mix": g.mix, "function_alpha": g.function_alpha,
                "template_skew": g.template_skew,
            },
            "transform": self.transform, "seed": self.seed, "cipher_seed": self.cipher_seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        g = dict(d.get("grammar", {}))
        if "templates" in g:
            g["templates"] = tuple(g["templates"])
        if "doc_len" in g:
            g["doc_len"] = tuple(g["doc_len"])
        return cls(Grammar(**g), d.get("transform", IDENTITY), d.get("seed", 0), d.get("cipher_seed", 1))


@dataclass
class Lexicon:
    nouns: list[list[tuple[str, str]]]  # topic -> [(singular, plural)]
    verbs: list[list[tuple[str, str]]]  # topic -> [(singular, plural)]
    adjectives: list[list[str]]
    topic_of: dict[str, int]
    affinity: np.ndarray | None = None  # [topic, other topic] sampling weights, zero diagonal
    function_pref: dict[str, np.ndarray] | None = None  # word class -> [topic, choice] weights
    template_pref: np.ndarray | None = None  # [topic, template] weights

    @property
    def word_types(self) -> list[str]:
        words = set(DET_SG) | set(DET_PL) | set(PREPS) | {THAT, AND}
        for t in range(len(self.nouns)):
            for pair in self.nouns[t] + self.verbs[t]:
                words.update(pair)
            words.update(self.adjectives[t])
        return sorted(words)


def _pseudo_words(rng: np.random.Generator, n: int, consonants: str, vowels: str, taken: set[str],
                  syllables=(2, 3)) -> list[str]:
    out = []
    while len(out) < n:
        k = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(consonants[int(rng.integers(len(consonants)))] + vowels[int(rng.integers(len(vowels)))] for _ in range(k))
        if w not in taken and not w.endswith("s"):
            taken.add(w)
            out.append(w)
    return out


def build_lexicon(grammar: Grammar) -> Lexicon:
    rng = np.random.default_rng(grammar.lexicon_seed)
    taken = set(DET_SG) | set(DET_PL) | set(PREPS) | {THAT, AND}
    nouns, verbs, adjs, topic_of = [], [], [], {}
    for t in range(grammar.n_topics):
        ns = _pseudo_words(rng, grammar.nouns_per_topic, L1_CONSONANTS, L1_VOWELS, taken)
        vs = _pseudo_words(rng, grammar.verbs_per_topic, L1_CONSONANTS, L1_VOWELS, taken)
        as_ = _pseudo_words(rng, grammar.adjectives_per_topic, L1_CONSONANTS, L1_VOWELS, taken)
        nouns.append([(n, n + "s") for n in ns])
        verbs.append([(v + "s", v) for v in vs])
        adjs.append(as_)
        for w in ns + [n + "s" for n in ns] + vs + [v + "s" for v in vs] + as_:
            topic_of[w] = t
    n = grammar.n_topics
    aff = rng.dirichlet(np.ones(max(n - 1, 1)), size=n) if n > 1 else np.zeros((1, 1))
    affinity = np.zeros((n, n))
    for t in range(n):
        others = [u for u in range(n) if u != t]
        affinity[t, others] = aff[t, :len(others)]
    pref = None
    if grammar.function_alpha > 0:
        pref = {name: rng.dirichlet(np.full(len(words), grammar.function_alpha), size=n)
                for name, words in (("det_sg", DET_SG), ("det_pl", DET_PL), ("prep", PREPS))}
    tpref = None
    if grammar.template_skew > 0:
        k = len(grammar.templates)
        order = rng.permutation(k)
        w = np.arange(1, k + 1, dtype=np.float64) ** -grammar.template_skew
        tpref = np.zeros((n, k))
        for t in range(n):
            tpref[t, np.roll(order, -t)] = w / w.sum()
    return Lexicon(nouns, verbs, adjs, topic_of, affinity, pref, tpref)


def build_cipher(lexicon: Lexicon, seed: int) -> dict[str, str]:
    """Bijection from L1 word types to fresh surface forms over a disjoint alphabet."""
    rng = np.random.default_rng(seed)
    words = lexicon.word_types
    targets = _pseudo_words(rng, len(words), L2_CONSONANTS, L2_VOWELS, set(), syllables=(1, 3))
    return dict(zip(words, targets))


@dataclass
class SynthSentence:
    words: list[str]
    topic: int
    template: str
    verb_slots: dict[str, tuple[int, str]]  # category -> (index, wrong form)


class SentenceGenerator:
    def __init__(self, grammar: Grammar, seed: int, mix: float | None = None, topic_templates: bool = True):
        self.grammar = grammar
        self.lex = build_lexicon(grammar)
        self.rng = np.random.default_rng(seed)
        self.mix = grammar.mix if mix is None else mix
        self.topic_templates = topic_templates
        self._weights: dict[int, np.ndarray] = {}

    def zipf_weights(self, n: int) -> np.ndarray:
        w = self._weights.get(n)
        if w is None:
            w = 1.0 / np.arange(1, n + 1) ** self.grammar.zipf
            w = self._weights[n] = w / w.sum()
        return w

    def _pick(self, seq):
        return seq[int(self.rng.choice(len(seq), p=self.zipf_weights(len(seq))))]

    def topic(self) -> int:
        return self._pick(range(self.grammar.n_topics))

    def _obj_topic(self, topic: int) -> int:
        if self.mix > 0 and self.grammar.n_topics > 1 and self.rng.random() < self.mix:
            return int(self.rng.choice(self.grammar.n_topics, p=self.lex.affinity[topic]))
        return topic

    def _function(self, kind: str, words: Sequence[str], topic: int) -> str:
        pref = self.lex.function_pref
        if pref is None:
            return self._pick(words)
        return words[int(self.rng.choice(len(words), p=pref[kind][topic]))]

    def _np(self, topic: int, plural: bool, adj: bool = False) -> list[str]:
        det = self._function("det_pl", DET_PL, topic) if plural else self._function("det_sg", DET_SG, topic)
        noun = self._pick(self.lex.nouns[topic])[int(plural)]
        return [det, self._pick(self.lex.adjectives[topic]), noun] if adj else [det, noun]

    def _verb(self, topic: int, plural: bool) -> tuple[str, str]:
        pair = self._pick(self.lex.verbs[topic])
        return pair[int(plural)], pair[1 - int(plural)]

    def sentence(self, topic: int, template: str | None = None) -> SynthSentence:
        if template is None:
            templates = self.grammar.templates
            if not self.topic_templates:
                template = templates[int(self.rng.integers(len(templates)))]
            elif self.lex.template_pref is None:
                template = self._pick(templates)
            else:
                template = templates[int(self.rng.choice(len(templates), p=self.lex.template_pref[topic]))]
        pl = bool(self.rng.integers(2))
        other = lambda: bool(self.rng.integers(2))  # noqa: E731
        slots: dict[str, tuple[int, str]] = {}
        if template == "simple":
            subj = self._np(topic, pl)
            v, wrong = self._verb(topic, pl)
            words = subj + [v] + self._np(self._obj_topic(topic), other())
            slots["simple"] = (len(subj), wrong)
        elif template == "adjective":
            subj = self._np(topic, pl, adj=True)
            v, wrong = self._verb(topic, pl)
            words = subj + [v] + self._np(self._obj_topic(topic), other(), adj=True)
            slots["simple"] = (len(subj), wrong)
        elif template == "across_pp":
            subj = self._np(topic, pl) + [self._function("prep", PREPS, topic)] + self._np(self._obj_topic(topic), other())
            v, wrong = self._verb(topic, pl)
            words = subj + [v] + self._np(self._obj_topic(topic), other())
            slots["across_pp"] = (len(subj), wrong)
        elif template == "relative":
            head = self._np(topic, pl)
            v1, w1 = self._verb(topic, pl)
            rel = [THAT, v1] + self._np(self._obj_topic(topic), other())
            v2, w2 = self._verb(topic, pl)
            words = head + rel + [v2] + self._np(self._obj_topic(topic), other())
            slots["in_relative"] = (len(head) + 1, w1)
            slots["across_relative"] = (len(head) + len(rel), w2)
        elif template == "vp_coord":
            subj = self._np(topic, pl)
            v1, _ = self._verb(topic, pl)
            obj = self._np(self._obj_topic(topic), other())
            v2, w2 = self._verb(topic, pl)
            words = subj + [v1] + obj + [AND, v2] + self._np(self._obj_topic(topic), other())
            slots["vp_coord"] = (len(subj) + 1 + len(obj) + 1, w2)
        else:
            raise ConfigError(f"unknown template {template!r}")
        return SynthSentence(words, topic, template, slots)


def cipher_words(words: Sequence[str], cipher: Mapping[str, str], reverse: bool = False) -> list[str]:
    out = [cipher[w] for w in words]
    return out[::-1] if reverse else out


def topic_label(words: Sequence[str], lexicon: Lexicon, inverse: Mapping[str, str] | None = None) -> int:
    """Majority topic over content words (ties to the lowest topic id)."""
    votes = np.zeros(len(lexicon.nouns), dtype=np.int64)
    for w in words:
        w = inverse[w] if inverse is not None else w
        if w in lexicon.topic_of:
            votes[lexicon.topic_of[w]] += 1
    return int(np.argmax(votes))


@dataclass
class SynthResult:
    l1: Corpus
    l2: Corpus
    cipher: dict[str, str] | None
    lexicon: Lexicon
    topics: list[int]  # per document


def generate_synthetic(spec: SynthSpec, n_sentences: int, l1_name: str = "L1", l2_name: str = "L2") -> SynthResult:
    """Generate an L1 corpus and its transformed L2 counterpart."""
    if n_sentences <= 0:
        raise ConfigError("n_sentences must be positive")
    gen = SentenceGenerator(spec.grammar, spec.seed)
    lo, hi = spec.grammar.doc_len
    docs, topics = [], []
    made = 0
    while made < n_sentences:
        topic = gen.topic()
        k = min(int(gen.rng.integers(lo, hi + 1)), n_sentences - made)
        docs.append([gen.sentence(topic).words for _ in range(k)])
        topics.append(topic)
        made += k
    l1 = Corpus(l1_name, [[" ".join(s) for s in doc] for doc in docs])
    if spec.transform == IDENTITY:
        return SynthResult(l1, Corpus(l2_name, [list(d) for d in l1.documents]), None, gen.lex, topics)
    cipher = build_cipher(gen.lex, spec.cipher_seed)
    rev = spec.transform == CIPHER_REVERSE
    l2 = Corpus(l2_name, [[" ".join(cipher_words(s, cipher, rev)) for s in doc] for doc in docs])
    return SynthResult(l1, l2, cipher, gen.lex, topics)


def transform_text(text: str, spec: SynthSpec) -> str:
    if spec.transform == IDENTITY:
        return text
    cipher = build_cipher(build_lexicon(spec.grammar), spec.cipher_seed)
    return " ".join(cipher_words(text.split(), cipher, spec.transform == CIPHER_REVERSE))


def generate_task(spec: SynthSpec, n: int, seed: int) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
    """Balanced topic-classification examples: (L1 examples, transformed parallel examples).

    Templates are drawn uniformly here, so sentence shape carries no label information.
    """
    if n <= 0:
        raise ConfigError("n must be positive")
    gen = SentenceGenerator(spec.grammar, seed, mix=0.0, topic_templates=False)
    cipher = build_cipher(gen.lex, spec.cipher_seed) if spec.transform != IDENTITY else None
    rev = spec.transform == CIPHER_REVERSE
    l1, l2 = [], []
    for i in range(n):
        s = gen.sentence(i % spec.grammar.n_topics)
        label = s.topic
        l1.append((" ".join(s.words), label))
        l2.append((" ".join(cipher_words(s.words, cipher, rev)) if cipher else " ".join(s.words), label))
    order = gen.rng.permutation(n)
    return [l1[i] for i in order], [l2[i] for i in order]


def generate_minimal_pairs(spec: SynthSpec, n: int, seed: int):
    """Agreement minimal pairs in the L1 grammar, round-robin over categories."""
    from .evalprobe.types import MinimalPair

    gen = SentenceGenerator(spec.grammar, seed)
    by_cat: dict[str, list[str]] = {}
    for t in spec.grammar.templates:
        probe = gen.sentence(0, t)
        for cat in probe.verb_slots:
            by_cat.setdefault(cat, []).append(t)
    cats = sorted(by_cat)
    pairs = []
    for i in range(n):
        cat = cats[i % len(cats)]
        s = gen.sentence(int(gen.rng.integers(spec.grammar.n_topics)), gen._pick(by_cat[cat]))
        idx, wrong = s.verb_slots[cat]
        bad = list(s.words)
        bad[idx] = wrong
        pairs.append(MinimalPair(" ".join(s.words), " ".join(bad), cat))
    return pairs


def write_cipher_map(cipher: Mapping[str, str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in sorted(cipher.items())), encoding="utf-8")


def read_cipher_map(path: str | Path) -> dict[str, str]:
    out = {}
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln:
            k, v = ln.split("\t")
            out[k] = v
    return out


def write_task(examples: Sequence[tuple], path: str | Path) -> None:
    """TSV with the label first: ``label<TAB>text`` or ``label<TAB>text_a<TAB>text_b``."""
    lines = [f"{ex[-1]}\t" + "\t".join(ex[:-1]) + "\n" for ex in examples]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_task(path: str | Path) -> list[tuple]:
    out: list[tuple] = []
    for n, ln in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) not in (2, 3):
            raise ValidationError(f"{path}:{n}: expected 2 or 3 tab-separated fields")
        try:
            label = int(parts[0])
        except ValueError as e:
            raise ValidationError(f"{path}:{n}: label {parts[0]!r} is not an integer") from e
        out.append((*parts[1:], label))
    return out
