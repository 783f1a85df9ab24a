"""Cross-lingual word embeddings: skip-gram, identical-spelling seeds, orthogonal mapping."""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .errors import ConfigError, ContractError, ValidationError
from .tokenization import SPECIALS

DEFAULT_DIMS = (300, 768)


@dataclass
class WordEmbeddings:
    language: str
    words: list[str]
    matrix: np.ndarray
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.words):
            raise ValidationError(f"matrix shape {self.matrix.shape} does not match {len(self.words)} words")
        if len(set(self.words)) != len(self.words):
            raise ValidationError("duplicate words in embedding table")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("embedding rows must be finite")
        self._index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index(self, word: str) -> int:
        return self._index[word]

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def vector(self, word: str) -> np.ndarray:
        return self.matrix[self._index[word]]


@dataclass
class MappingResult:
    W: np.ndarray
    dictionary: list[tuple[int, int]]
    objective: list[float]
    iterations: int
    converged: bool

    def apply(self, emb: WordEmbeddings, normalize: bool = True) -> WordEmbeddings:
        m = normalize_embeddings(emb.matrix) if normalize else emb.matrix
        return WordEmbeddings(emb.language, list(emb.words), m @ self.W)


def _sentences(corpus) -> list[list[str]]:
    sents = getattr(corpus, "sentences", corpus)
    return [s.split() if isinstance(s, str) else list(s) for s in sents]


def train_skipgram(
    corpus,
    dim: int = 300,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    min_count: int = 1,
    batch_size: int = 256,
    seed: int = 0,
    language: str = "",
) -> WordEmbeddings:
    """Skip-gram with negative sampling; returns input vectors and the per-epoch mean loss."""
    if dim < 1 or window < 1 or negatives < 1 or epochs < 1:
        raise ConfigError("dim, window, negatives and epochs must be positive")
    sents = _sentences(corpus)
    counts = Counter(w for s in sents for w in s)
    words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    if len(words) < negatives + 1:
        raise ConfigError(f"vocabulary of {len(words)} types is below negatives+1 = {negatives + 1}")
    index = {w: i for i, w in enumerate(words)}
    centers, contexts = [], []
    for s in sents:
        ids = [index[w] for w in s if w in index]
        for i, c in enumerate(ids):
            for j in range(max(0, i - window), min(len(ids), i + window + 1)):
                if j != i:
                    centers.append(c)
                    contexts.append(ids[j])
    if not centers:
        raise ConfigError("corpus yields no skip-gram pairs")
    centers = np.array(centers, dtype=np.int64)
    contexts = np.array(contexts, dtype=np.int64)
    freq = np.array([counts[w] for w in words], dtype=np.float64) ** 0.75
    noise = freq / freq.sum()

    rng = np.random.default_rng(seed)
    v = len(words)
    w_in = (rng.random((v, dim)) - 0.5) / dim
    w_out = np.zeros((v, dim))
    n = len(centers)
    total_batches = epochs * math.ceil(n / batch_size)
    done = 0
    trace = []
    for _ in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = rng.choice(v, size=(len(idx), negatives), p=noise)
            alpha = lr * max(1e-4, 1.0 - done / total_batches)
            done += 1
            vc = w_in[c]
            uo = w_out[o]
            un = w_out[neg]
            pos_score = np.einsum("bd,bd->b", vc, uo)
            neg_score = np.einsum("bd,bkd->bk", vc, un)
            loss_sum -= float(log_expit(pos_score).sum() + log_expit(-neg_score).sum())
            g_pos = expit(pos_score) - 1.0
            g_neg = expit(neg_score)
            grad_vc = g_pos[:, None] * uo + np.einsum("bk,bkd->bd", g_neg, un)
            np.add.at(w_out, o, -alpha * g_pos[:, None] * vc)
            np.add.at(w_out, neg.reshape(-1), (-alpha * g_neg[:, :, None] * vc[:, None, :]).reshape(-1, dim))
            np.add.at(w_in, c, -alpha * grad_vc)
        trace.append(loss_sum / n)
    return WordEmbeddings(language, words, w_in, trace)


def seed_dictionary_identical(a: WordEmbeddings, b: WordEmbeddings) -> list[tuple[str, str]]:
    """Surface-identical word pairs, excluding special symbols, in the order of ``a``."""
    specials = set(SPECIALS)
    return [(w, w) for w in a.words if w in b and w not in specials]


def normalize_embeddings(m: np.ndarray) -> np.ndarray:
    """Unit length, mean centering, unit length."""

    def unit(x):
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.where(norms > 0, norms, 1.0)

    m = unit(np.asarray(m, dtype=np.float64))
    m = m - m.mean(axis=0, keepdims=True)
    return unit(m)


def procrustes(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Orthogonal W minimising ||xW - z||_F."""
    m = x.T @ z
    if np.linalg.matrix_rank(m) < m.shape[0]:
        warnings.warn("dictionary matrix is rank-deficient; the mapping is not unique", RuntimeWarning, stacklevel=2)
    u, _, vt = np.linalg.svd(m)
    return u @ vt


def _nearest(xw: np.ndarray, z: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    idx = np.empty(len(xw), dtype=np.int64)
    best = np.empty(len(xw))
    for lo in range(0, len(xw), chunk):
        sims = xw[lo:lo + chunk] @ z.T
        idx[lo:lo + chunk] = sims.argmax(axis=1)
        best[lo:lo + chunk] = sims.max(axis=1)
    return idx, best


def map_orthogonal(
    a: WordEmbeddings,
    b: WordEmbeddings,
    dictionary: Sequence[tuple[str, str]] | Sequence[tuple[int, int]],
    self_learning: bool = False,
    iterations: int = 20,
    normalize: bool = True,
) -> MappingResult:
    """Map ``a`` into the space of ``b``.

    The objective trace holds, after each solve, the mean over source words of the
    best cosine to any target word. Self-learning re-induces a full nearest-neighbour
    dictionary each round, which makes that trace non-decreasing.
    """
    if a.dim != b.dim:
        raise ConfigError(f"dimension mismatch {a.dim} vs {b.dim}")
    pairs = [(a.index(s), b.index(t)) if isinstance(s, str) else (int(s), int(t)) for s, t in dictionary]
    if not pairs:
        raise ContractError("seed dictionary is empty")
    x = normalize_embeddings(a.matrix) if normalize else np.asarray(a.matrix, np.float64)
    z = normalize_embeddings(b.matrix) if normalize else np.asarray(b.matrix, np.float64)
    objective = []
    converged = not self_learning
    it = 0
    while True:
        src, tgt = map(np.array, zip(*pairs))
        w = procrustes(x[src], z[tgt])
        it += 1
        nn, best = _nearest(x @ w, z)
        objective.append(float(best.mean()))
        if not self_learning:
            break
        new = list(enumerate(nn.tolist()))
        if new == pairs:
            converged = True
            break
        if it >= iterations:
            break
        pairs = new
    return MappingResult(w, pairs, objective, it, converged)


def translate(mapping: MappingResult, a: WordEmbeddings, b: WordEmbeddings, words: Iterable[str],
              normalize: bool = True) -> list[str]:
    x = normalize_embeddings(a.matrix) if normalize else a.matrix
    z = normalize_embeddings(b.matrix) if normalize else b.matrix
    rows = np.array([a.index(w) for w in words], dtype=np.int64)
    nn, _ = _nearest(x[rows] @ mapping.W, z)
    return [b.words[i] for i in nn]


def translation_accuracy(mapping: MappingResult, a: WordEmbeddings, b: WordEmbeddings,
                         pairs: Sequence[tuple[str, str]]) -> float:
    if not pairs:
        raise ContractError("no evaluation pairs")
    got = translate(mapping, a, b, [s for s, _ in pairs])
    return sum(g == t for g, (_, t) in zip(got, pairs)) / len(pairs)


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def write_embeddings(emb: WordEmbeddings, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(emb.words)} {emb.dim}\n")
        for w, row in zip(emb.words, emb.matrix):
            fh.write(w + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path: str | Path, language: str = "") -> WordEmbeddings:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise ValidationError("first line must be 'V dim'")
        v, dim = int(head[0]), int(head[1])
        words, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValidationError(f"line {lineno}: expected {dim} values")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(words) != v:
        raise ValidationError(f"header announces {v} words, file has {len(words)}")
    return WordEmbeddings(language, words, np.array(rows, dtype=np.float64).reshape(v, dim))
