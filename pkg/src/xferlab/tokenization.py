"""Subword vocabularies: unigram language model and BPE.

Text is split on whitespace; every word except the first of a string carries
a leading boundary marker ``▁`` glued to its first character, so the marker is
never a piece on its own. No lowercasing or normalisation is applied.
Pieces never cross word boundaries.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ValidationError

MARKER = "▁"
SPECIALS: tuple[str, ...] = ("[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]")
CLS, SEP, MASK, PAD, UNK = range(5)
N_SPECIALS = len(SPECIALS)
JOINT = "JOINT"

UNIGRAM = "unigram"
BPE = "bpe"
ALGORITHMS = (UNIGRAM, BPE)

Symbols = tuple[str, ...]


def word_symbols(word: str, marked: bool) -> Symbols:
    if not word:
        return ()
    if marked:
        return (MARKER + word[0],) + tuple(word[1:])
    return tuple(word)


def text_words(text: str) -> list[Symbols]:
    return [word_symbols(w, i > 0) for i, w in enumerate(text.split())]


def word_counts(sentences: Iterable[str], weight: float = 1.0) -> Counter:
    counts: Counter = Counter()
    for s in getattr(sentences, "sentences", sentences):
        for w in text_words(s):
            counts[w] += weight
    return counts


@dataclass
class SubwordModel:
    algorithm: str
    pieces: list[tuple[str, float]]
    merges: list[tuple[str, str]] = field(default_factory=list)
    max_piece_symbols: int = 16

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown subword algorithm {self.algorithm!r}")
        surfaces = [p for p, _ in self.pieces]
        if len(set(surfaces)) != len(surfaces):
            raise ValidationError("subword model has duplicate piece surfaces")
        clash = set(surfaces) & set(SPECIALS)
        if clash:
            raise ValidationError(f"pieces collide with special symbols: {sorted(clash)}")
        if self.algorithm == UNIGRAM and not all(math.isfinite(s) for _, s in self.pieces):
            raise ValidationError("unigram scores must be finite log-probabilities")
        self._score = {p: s for p, s in self.pieces}
        self._unk_score = min((s for _, s in self.pieces), default=0.0) - 10.0

    @property
    def surfaces(self) -> list[str]:
        return [p for p, _ in self.pieces]

    def score(self, piece: str) -> float | None:
        return self._score.get(piece)

    def segment(self, symbols: Symbols) -> list[str | None]:
        """Segment one word; ``None`` marks a symbol the model cannot cover."""
        if self.algorithm == UNIGRAM:
            return _viterbi(symbols, self._score, self.max_piece_symbols, self._unk_score)
        return _bpe_apply(symbols, self._score)


def _viterbi(
    symbols: Symbols,
    score: Mapping[str, float],
    max_span: int = 32,
    unk_score: float = -1e6,
    exclude: str | None = None,
) -> list[str | None]:
    n = len(symbols)
    if n == 0:
        return []
    best = [-math.inf] * (n + 1)
    back: list[tuple[int, str | None]] = [(0, None)] * (n + 1)
    best[0] = 0.0
    for j in range(1, n + 1):
        for i in range(max(0, j - max_span), j):
            if best[i] == -math.inf:
                continue
            piece = "".join(symbols[i:j])
            s = score.get(piece) if piece != exclude else None
            if s is None:
                if j - i != 1:
                    continue
                cand, label = best[i] + unk_score, None
            else:
                cand, label = best[i] + s, piece
            if cand > best[j]:
                best[j] = cand
                back[j] = (i, label)
    out: list[str | None] = []
    j = n
    while j > 0:
        i, label = back[j]
        out.append(label)
        j = i
    out.reverse()
    return out


def _bpe_apply(symbols: Symbols, score: Mapping[str, float]) -> list[str | None]:
    """Merge the adjacent pair whose concatenation is the highest-scoring piece, repeatedly."""
    parts = list(symbols)
    while len(parts) > 1:
        best_i, best_s = -1, -math.inf
        for i in range(len(parts) - 1):
            s = score.get(parts[i] + parts[i + 1])
            if s is not None and s > best_s:
                best_i, best_s = i, s
        if best_i < 0:
            break
        parts[best_i : best_i + 2] = [parts[best_i] + parts[best_i + 1]]
    return [p if p in score else None for p in parts]


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------


def _alphabet(counts: Mapping[Symbols, float]) -> list[str]:
    # every character gets both its bare and its marked form, so any corpus
    # character is encodable whatever its position in a word
    chars = {s[-1] for w in counts for s in w}
    return sorted(chars | {MARKER + c for c in chars})


def _check_size(size: int, alphabet: Sequence[str]) -> None:
    if size <= N_SPECIALS + len(alphabet):
        raise ConfigError(
            f"vocabulary size {size} cannot cover {len(alphabet)} base symbols plus {N_SPECIALS} specials"
        )


def learn_bpe(counts: Mapping[Symbols, float], size: int, min_frequency: float = 3.0) -> SubwordModel:
    alphabet = _alphabet(counts)
    _check_size(size, alphabet)
    budget = size - N_SPECIALS
    words = {w: list(w) for w in counts}
    pieces = set(alphabet)
    merged: list[str] = []
    merges: list[tuple[str, str]] = []
    while len(pieces) < budget:
        pair_counts: dict[tuple[str, str], float] = defaultdict(float)
        for w, parts in words.items():
            c = counts[w]
            for a, b in zip(parts, parts[1:]):
                pair_counts[(a, b)] += c
        pair_counts = {p: c for p, c in pair_counts.items() if p[0] + p[1] not in SPECIALS}
        if not pair_counts:
            break
        top = max(pair_counts.values())
        if top < min_frequency:
            break
        a, b = min((p for p, c in pair_counts.items() if c == top), key=lambda p: (p[0] + p[1], p))
        new = a + b
        merges.append((a, b))
        if new not in pieces:
            pieces.add(new)
            merged.append(new)
        for parts in words.values():
            i = 0
            while i < len(parts) - 1:
                if parts[i] == a and parts[i + 1] == b:
                    parts[i : i + 2] = [new]
                i += 1
    # merged pieces outrank each other by learn order; base symbols rank last
    scored = [(p, -float(r)) for r, p in enumerate(merged)]
    scored += [(p, -float(len(merged) + r)) for r, p in enumerate(alphabet)]
    return SubwordModel(BPE, scored, merges)


def _log_forward_backward(symbols: Symbols, logp: Mapping[str, float], max_len: int):
    n = len(symbols)
    spans = []
    for j in range(1, n + 1):
        for i in range(max(0, j - max_len), j):
            piece = "".join(symbols[i:j])
            if piece in logp:
                spans.append((i, j, piece))
    alpha = [-math.inf] * (n + 1)
    alpha[0] = 0.0
    for i, j, piece in spans:  # spans sorted by end position
        alpha[j] = np.logaddexp(alpha[j], alpha[i] + logp[piece])
    beta = [-math.inf] * (n + 1)
    beta[n] = 0.0
    for i, j, piece in sorted(spans, key=lambda s: -s[0]):
        beta[i] = np.logaddexp(beta[i], beta[j] + logp[piece])
    return spans, alpha, beta


def _expected_counts(counts: Mapping[Symbols, float], logp: Mapping[str, float], max_len: int):
    expected: dict[str, float] = defaultdict(float)
    total_ll = 0.0
    for w, c in counts.items():
        spans, alpha, beta = _log_forward_backward(w, logp, max_len)
        z = alpha[len(w)]
        if z == -math.inf:
            continue
        total_ll += c * z
        for i, j, piece in spans:
            post = alpha[i] + logp[piece] + beta[j] - z
            if post > -50:
                expected[piece] += c * math.exp(post)
    return expected, total_ll


def learn_unigram(
    counts: Mapping[Symbols, float],
    size: int,
    seed_factor: int = 10,
    shrink: float = 0.8,
    em_iters: int = 2,
    max_piece_symbols: int = 16,
) -> SubwordModel:
    """EM-estimated unigram LM with iterative pruning to ``size - 5`` pieces."""
    alphabet = _alphabet(counts)
    _check_size(size, alphabet)
    target = size - N_SPECIALS
    base = set(alphabet)

    sub_freq: dict[str, float] = defaultdict(float)
    for w, c in counts.items():
        n = len(w)
        for i in range(n):
            for j in range(i + 2, min(n, i + max_piece_symbols) + 1):
                sub_freq["".join(w[i:j])] += c
    for s in SPECIALS:
        sub_freq.pop(s, None)
    seed_n = max(target * seed_factor - len(base), 0)
    ranked = sorted(sub_freq.items(), key=lambda kv: (-kv[1] * len(kv[0]), kv[0]))[:seed_n]
    char_freq: dict[str, float] = defaultdict(float)
    for w, c in counts.items():
        for s in w:
            char_freq[s] += c
    freq = {**{s: max(char_freq[s], 1.0) for s in base}, **dict(ranked)}
    total = sum(freq.values())
    logp = {p: math.log(f / total) for p, f in freq.items()}

    def em(logp: dict[str, float], iters: int) -> dict[str, float]:
        for _ in range(iters):
            expected, _ = _expected_counts(counts, logp, max_piece_symbols)
            kept = {p: expected.get(p, 0.0) for p in logp if p in base or expected.get(p, 0.0) > 1e-9}
            for p in base:
                kept[p] = max(kept[p], 1e-9)
            z = sum(kept.values())
            logp = {p: math.log(c / z) for p, c in kept.items()}
        return logp

    logp = em(logp, em_iters)
    while len(logp) > target:
        expected, _ = _expected_counts(counts, logp, max_piece_symbols)
        losses = []
        for p, lp in logp.items():
            if p in base:
                continue
            alt = _viterbi(tuple(_split_symbols(p)), logp, max_piece_symbols, exclude=p)
            alt_lp = sum(logp[q] if q is not None else -1e9 for q in alt)
            losses.append((expected.get(p, 0.0) * (lp - alt_lp), p))
        keep_n = max(target, int(len(logp) * shrink)) - len(base)
        losses.sort(key=lambda t: (-t[0], t[1]))
        keep = {p for _, p in losses[: max(keep_n, 0)]} | base
        logp = {p: s for p, s in logp.items() if p in keep}
        logp = em(logp, em_iters)
    pieces = sorted(logp.items(), key=lambda kv: (-kv[1], kv[0]))
    return SubwordModel(UNIGRAM, [(p, float(s)) for p, s in pieces], max_piece_symbols=max_piece_symbols)


def _split_symbols(piece: str) -> list[str]:
    if piece.startswith(MARKER) and len(piece) > 1:
        return [piece[:2]] + list(piece[2:])
    return list(piece)


def learn_vocab_from_counts(counts: Mapping[Symbols, float], size: int, algorithm: str = UNIGRAM, **kw) -> SubwordModel:
    if not counts:
        raise ConfigError("cannot learn a vocabulary from an empty corpus")
    if algorithm == UNIGRAM:
        return learn_unigram(counts, size, **kw)
    if algorithm == BPE:
        return learn_bpe(counts, size, **kw)
    raise ConfigError(f"unknown subword algorithm {algorithm!r}")


def learn_vocab(corpus: Sequence[str], size: int, algorithm: str = UNIGRAM, **kw) -> SubwordModel:
    """Learn a subword model covering every character of ``corpus``."""
    return learn_vocab_from_counts(word_counts(corpus), size, algorithm, **kw)


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Five shared specials at ids 0-4 followed by the model's pieces."""

    def __init__(self, model: SubwordModel, language: str):
        if not language:
            raise ConfigError("language id must be nonempty")
        self.model = model
        self.language = language
        self.pieces: list[str] = list(SPECIALS) + model.surfaces
        self._ids = {p: i for i, p in enumerate(self.pieces)}
        self._cache: dict[Symbols, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.pieces)

    def __repr__(self) -> str:
        return f"Vocabulary(language={self.language!r}, algorithm={self.model.algorithm!r}, size={len(self)})"

    def piece_to_id(self, piece: str) -> int:
        return self._ids.get(piece, UNK)

    def id_to_piece(self, i: int) -> str:
        return self.pieces[i]

    def encode_symbols(self, symbols: Symbols) -> tuple[int, ...]:
        ids = self._cache.get(symbols)
        if ids is None:
            ids = tuple(UNK if p is None else self._ids[p] for p in self.model.segment(symbols))
            self._cache[symbols] = ids
        return ids

    def encode_words(self, words: Sequence[str], first_marked: bool = False) -> list[tuple[int, ...]]:
        return [self.encode_symbols(word_symbols(w, first_marked or i > 0)) for i, w in enumerate(words)]

    def encode(self, text: str) -> list[int]:
        return [i for ids in self.encode_words(text.split()) for i in ids]

    def tokenize_pieces(self, text: str) -> list[str]:
        return [self.pieces[i] for i in self.encode(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return detokenize_pieces([self.pieces[i] for i in ids])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.model.algorithm.encode())
        for p, s in self.model.pieces:
            h.update(f"{p}\t{s!r}\n".encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "algorithm": self.model.algorithm,
            "pieces": [[p, s] for p, s in self.model.pieces],
            "merges": [list(m) for m in self.model.merges],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Vocabulary":
        model = SubwordModel(d["algorithm"], [(p, float(s)) for p, s in d["pieces"]], [tuple(m) for m in d.get("merges", [])])
        return cls(model, d["language"])


def detokenize_pieces(pieces: Sequence[str]) -> str:
    return "".join(pieces).replace(MARKER, " ")


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    return vocab.encode(text)


def detokenize(vocab: Vocabulary, ids: Sequence[int]) -> str:
    return vocab.decode(ids)


def build_vocab(corpus: Sequence[str], size: int, language: str, algorithm: str = UNIGRAM, **kw) -> Vocabulary:
    return Vocabulary(learn_vocab(corpus, size, algorithm, **kw), language)


def joint_word_counts(corpora: Mapping[str, Sequence[str]], alpha: float) -> Counter:
    """Word counts under the upsampled language distribution.

    Each language's counts are rescaled so its share of sentences equals its
    upsampled probability; total mass equals the mean corpus size.
    """
    from .data import upsample_distribution

    langs = list(corpora)
    if len(langs) < 2:
        raise ConfigError("joint vocabulary needs at least two languages")
    for lang in langs:
        if not corpora[lang]:
            raise ConfigError(f"corpus for language {lang!r} is empty")
    sizes = [len(corpora[lang]) for lang in langs]
    q = upsample_distribution(sizes, alpha)
    mass = sum(sizes) / len(sizes)
    counts: Counter = Counter()
    for lang, qi, ni in zip(langs, q, sizes):
        counts.update(word_counts(corpora[lang], weight=float(qi * mass / ni)))
    return counts


def build_joint_vocab(
    corpora: Mapping[str, Sequence[str]], size: int, alpha: float = 0.5, algorithm: str = UNIGRAM, **kw
) -> Vocabulary:
    return Vocabulary(learn_vocab_from_counts(joint_word_counts(corpora, alpha), size, algorithm, **kw), JOINT)


def build_disjoint_vocabs(
    corpora: Mapping[str, Sequence[str]], size: int, algorithm: str = UNIGRAM, **kw
) -> dict[str, Vocabulary]:
    """One full-size vocabulary per language, each learned on its own corpus."""
    return {lang: build_vocab(c, size, lang, algorithm, **kw) for lang, c in corpora.items()}


# ---------------------------------------------------------------------------
# file format: piece<TAB>score, specials first
# ---------------------------------------------------------------------------


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    lines = [f"{s}\t0" for s in SPECIALS]
    lines += [f"{p}\t{s!r}" for p, s in vocab.model.pieces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path, algorithm: str = UNIGRAM, language: str = "L1") -> Vocabulary:
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln]
    head = [r.split("\t")[0] for r in rows[:N_SPECIALS]]
    if tuple(head) != SPECIALS:
        raise ValidationError(f"{path}: first five lines must be the special symbols {SPECIALS}, got {head}")
    pieces = []
    for lineno, r in enumerate(rows[N_SPECIALS:], start=N_SPECIALS + 1):
        try:
            p, s = r.split("\t")
            pieces.append((p, float(s)))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: expected 'piece<TAB>score'") from None
    return Vocabulary(SubwordModel(algorithm, pieces), language)
