from __future__ import annotations

import re
import string
import unicodedata
from collections import Counter
from typing import Sequence

import numpy as np
from scipy.stats import pearsonr, rankdata

from ..errors import ConfigError, ContractError

PROFILES = ("en", "whitespace", "char")
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def classification_accuracy(preds: Sequence[int], golds: Sequence[int]) -> float:
    if len(preds) != len(golds):
        raise ContractError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if not golds:
        raise ContractError("accuracy of an empty set is undefined")
    return sum(int(p) == int(g) for p, g in zip(preds, golds)) / len(golds)


def _strip_punct(s: str) -> str:
    return "".join(ch for ch in s if not unicodedata.category(ch).startswith("P") and ch not in string.punctuation)


def normalize_answer(s: str, profile: str = "en") -> str:
    if profile not in PROFILES:
        raise ConfigError(f"unknown language profile {profile!r}; have {PROFILES}")
    s = _strip_punct(s.lower())
    if profile == "en":
        s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def answer_tokens(s: str, profile: str = "en") -> list[str]:
    norm = normalize_answer(s, profile)
    if profile == "char":
        return [ch for ch in norm if not ch.isspace()]
    return norm.split()


def _f1(pred: list[str], gold: list[str]) -> float:
    if not pred or not gold:
        return float(pred == gold)
    same = sum((Counter(pred) & Counter(gold)).values())
    if same == 0:
        return 0.0
    p = same / len(pred)
    r = same / len(gold)
    return 2 * p * r / (p + r)


def squad_f1_em(prediction: str, golds: Sequence[str], profile: str = "en") -> tuple[float, float]:
    """Token-bag F1 and exact match, each maximised over the gold answers."""
    if not golds:
        raise ContractError("at least one gold answer is required")
    pt = answer_tokens(prediction, profile)
    pn = normalize_answer(prediction, profile)
    f1 = max(_f1(pt, answer_tokens(g, profile)) for g in golds)
    em = max(float(pn == normalize_answer(g, profile)) for g in golds)
    return f1, em


def squad_evaluate(predictions: dict[str, str], examples, profile: str = "en") -> dict:
    """Mean F1/EM (as fractions) over examples; unanswered questions score zero."""
    f1s, ems = [], []
    missing = 0
    for ex in examples:
        pred = predictions.get(ex.id)
        if pred is None:
            missing += 1
            f1s.append(0.0)
            ems.append(0.0)
            continue
        f, e = squad_f1_em(pred, [a for a, _ in ex.answers], profile)
        f1s.append(f)
        ems.append(e)
    n = len(f1s)
    return {"f1": float(np.mean(f1s)) if n else 0.0, "em": float(np.mean(ems)) if n else 0.0, "n": n,
            "missing": missing, "profile": profile}


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    if len(x) != len(y):
        raise ContractError("spearman needs equal-length inputs")
    if len(x) < 2:
        raise ContractError("spearman needs at least two points")
    rx, ry = rankdata(x), rankdata(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        return float("nan")
    return float(pearsonr(rx, ry)[0])
