"""Frozen-model probes: WiC-style linear probe, SCWS similarity, minimal-pair agreement.

Probes only need a model exposing ``vocab`` plus ``hidden_states`` (WiC, SCWS) or
``masked_log_probs`` (syntax); any object with those members works.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_expit

from ..errors import ConfigError, ValidationError
from ..tokenization import CLS, MASK, SEP
from .metrics import spearman
from .types import MinimalPair, ScwsExample, WicExample

REPRESENTATIONS = ("cls", "target")


@dataclass
class ProbeResult:
    value: float
    n: int
    skipped: int
    skipped_ids: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------- linear probe


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-4, max_iter: int = 500) -> tuple[np.ndarray, float]:
    """Binary logistic regression with bias, L-BFGS on the mean log loss plus a small ridge."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = 2 * y - 1
    n, d = x.shape

    def obj(theta):
        w, b = theta[:d], theta[d]
        z = s * (x @ w + b)
        loss = -log_expit(z).mean() + 0.5 * l2 * w @ w
        g = -s * np.exp(log_expit(-z)) / n
        return loss, np.concatenate([x.T @ g + l2 * w, [g.sum()]])

    res = minimize(obj, np.zeros(d + 1), jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
    return res.x[:d], float(res.x[d])


def linear_probe_accuracy(x_train, y_train, x_eval, y_eval, l2: float = 1e-4) -> float:
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0) + 1e-8
    w, b = fit_logistic((x_train - mu) / sd, y_train, l2)
    pred = ((x_eval - mu) / sd) @ w + b > 0
    return float((pred == np.asarray(y_eval, dtype=bool)).mean())


# ---------------------------------------------------------------------- representations


def _find_word(words: Sequence[str], target: str) -> int | None:
    for i, w in enumerate(words):
        if w == target or w.lower() == target.lower():
            return i
    return None


def _pack(model, s1: str, s2: str | None, seq_len: int):
    vocab = model.vocab
    a = vocab.encode(s1)
    b = vocab.encode(s2) if s2 is not None else None
    ids = [CLS] + a + [SEP] + (b + [SEP] if b is not None else [])
    seg = [0] * (len(a) + 2) + ([1] * (len(b) + 1) if b is not None else [])
    if len(ids) > seq_len:
        return None, None
    return np.array(ids), np.array(seg)


def _target_span(model, sentence: str, target: str) -> tuple[list[int], list[int]] | None:
    """Token ids of the sentence with [CLS] prepended and the positions of the target's pieces."""
    words = sentence.split()
    k = _find_word(words, target)
    if k is None:
        return None
    per_word = model.vocab.encode_words(words)
    ids = [CLS]
    pos: list[int] = []
    for i, w in enumerate(per_word):
        if i == k:
            pos = list(range(len(ids), len(ids) + len(w)))
        ids += list(w)
    return ids + [SEP], pos


def _seq_len(model) -> int:
    cfg = getattr(model, "config", None)
    return getattr(cfg, "max_seq_len", 10 ** 9)


def target_vector(model, sentence: str, target: str) -> np.ndarray | None:
    """Mean of the final-layer vectors of the target word's pieces."""
    got = _target_span(model, sentence, target)
    if got is None:
        return None
    ids, pos = got
    if len(ids) > _seq_len(model) or not pos:
        return None
    h = model.hidden_states(np.array(ids))[0]
    return h[pos].mean(axis=0)


def pair_vector(model, s1: str, s2: str) -> np.ndarray | None:
    ids, seg = _pack(model, s1, s2, _seq_len(model))
    if ids is None:
        return None
    return model.hidden_states(ids, seg)[0, 0]


# ---------------------------------------------------------------------- probes


def wic_features(model, examples: Sequence[WicExample], representation: str = "cls"):
    if representation not in REPRESENTATIONS:
        raise ConfigError(f"representation must be one of {REPRESENTATIONS}")
    feats, labels, skipped = [], [], []
    for i, ex in enumerate(examples):
        if _find_word(ex.sentence1.split(), ex.target) is None or _find_word(ex.sentence2.split(), ex.target) is None:
            skipped.append(i)
            continue
        if representation == "cls":
            v = pair_vector(model, ex.sentence1, ex.sentence2)
        else:
            a = target_vector(model, ex.sentence1, ex.target)
            b = target_vector(model, ex.sentence2, ex.target)
            v = None if a is None or b is None else np.concatenate([a, b])
        if v is None:
            skipped.append(i)
            continue
        feats.append(np.asarray(v, dtype=np.float64))
        labels.append(ex.label)
    return np.array(feats), np.array(labels, dtype=np.int64), skipped


def probe_wic(model, train: Sequence[WicExample], evaluation: Sequence[WicExample],
              representation: str = "cls", l2: float = 1e-4) -> ProbeResult:
    """Accuracy of a linear classifier over frozen pair representations."""
    xt, yt, sk_t = wic_features(model, train, representation)
    xe, ye, sk_e = wic_features(model, evaluation, representation)
    if len(yt) == 0 or len(ye) == 0:
        raise ValidationError("no usable WiC examples after skipping")
    if len(set(yt.tolist())) < 2:
        acc = float((ye == yt[0]).mean())
    else:
        acc = linear_probe_accuracy(xt, yt, xe, ye, l2)
    return ProbeResult(acc, len(ye), len(sk_t) + len(sk_e), sk_e)


def probe_scws(model, examples: Sequence[ScwsExample]) -> ProbeResult:
    """Spearman correlation between gold scores and cosine of contextual target vectors."""
    sims, gold, skipped = [], [], []
    for i, ex in enumerate(examples):
        a = target_vector(model, ex.sentence1, ex.target1)
        b = target_vector(model, ex.sentence2, ex.target2)
        if a is None or b is None:
            skipped.append(i)
            continue
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        sims.append(float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0)
        gold.append(ex.score)
    if len(sims) < 2:
        raise ValidationError("fewer than two usable SCWS examples")
    return ProbeResult(spearman(sims, gold), len(sims), len(skipped), skipped)


@dataclass
class SyntaxResult:
    per_category: dict[str, float]
    macro: float
    coverage: dict[str, int]
    counts: dict[str, int]

    @property
    def coverage_fraction(self) -> float:
        return self.coverage["retained"] / self.coverage["total"] if self.coverage["total"] else 0.0


def probe_syntax(model, pairs: Sequence[MinimalPair]) -> SyntaxResult:
    """Score each pair by the MLM probability of the differing piece at a masked slot.

    Pairs must differ in exactly one whitespace word and that word must be a single
    piece in both sentences; anything else is discarded and counted.
    """
    coverage = {"total": len(pairs), "retained": 0, "multi_word": 0, "multi_piece": 0}
    correct: dict[str, int] = defaultdict(int)
    seen: dict[str, int] = defaultdict(int)
    vocab = model.vocab
    for pair in pairs:
        diff = pair.differing_words()
        if len(diff) != 1:
            coverage["multi_word"] += 1
            continue
        k = diff[0]
        good = vocab.encode_words(pair.grammatical.split())
        bad = vocab.encode_words(pair.ungrammatical.split())
        if len(good[k]) != 1 or len(bad[k]) != 1:
            coverage["multi_piece"] += 1
            continue
        coverage["retained"] += 1
        ids = [CLS] + [i for w in good for i in w] + [SEP]
        pos = 1 + sum(len(w) for w in good[:k])
        ids[pos] = MASK
        lp = model.masked_log_probs(np.array(ids), pos)
        seen[pair.category] += 1
        if lp[good[k][0]] > lp[bad[k][0]]:
            correct[pair.category] += 1
    per_cat = {c: correct[c] / seen[c] for c in sorted(seen)}
    macro = float(np.mean(list(per_cat.values()))) if per_cat else float("nan")
    return SyntaxResult(per_cat, macro, coverage, dict(seen))


# ---------------------------------------------------------------------- TSV readers


def _rows(path: str | Path, width: int) -> list[list[str]]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for n, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), start=1):
            if not row or not any(row):
                continue
            if len(row) != width:
                raise ValidationError(f"{path}:{n}: expected {width} tab-separated fields, got {len(row)}")
            out.append(row)
    return out


def read_wic_tsv(path: str | Path) -> list[WicExample]:
    """Columns: sentence1, sentence2, target, label."""
    try:
        return [WicExample(a, b, t, int(y)) for a, b, t, y in _rows(path, 4)]
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e


def read_scws_tsv(path: str | Path) -> list[ScwsExample]:
    """Columns: sentence1, target1, sentence2, target2, score."""
    try:
        return [ScwsExample(a, t1, b, t2, float(s)) for a, t1, b, t2, s in _rows(path, 5)]
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e


def read_minimal_pairs_tsv(path: str | Path) -> list[MinimalPair]:
    """Columns: grammatical, ungrammatical, category."""
    return [MinimalPair(g, u, c) for g, u, c in _rows(path, 3)]


def write_minimal_pairs_tsv(pairs: Sequence[MinimalPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.grammatical}\t{p.ungrammatical}\t{p.category}\n")
