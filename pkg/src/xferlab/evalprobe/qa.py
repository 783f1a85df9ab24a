"""SQuAD v1.1 JSON ingestion and per-field token statistics."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from ..errors import ConfigError, ValidationError
from .types import QADataset, QAExample

STAT_PROFILES = ("whitespace", "char")


def read_squad_dataset(path: str | Path) -> QADataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not JSON: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise ValidationError(f"{path}: missing top-level 'data' list")
    paragraphs, titles, examples, bad = [], [], [], []
    for art in doc["data"]:
        title = art.get("title", "")
        for para in art.get("paragraphs", []):
            if "context" not in para:
                raise ValidationError(f"{path}: paragraph without 'context'")
            pid = len(paragraphs)
            paragraphs.append(para["context"])
            titles.append(title)
            for qa in para.get("qas", []):
                try:
                    answers = [(a["text"], int(a["answer_start"])) for a in qa.get("answers", [])]
                    ex = QAExample(str(qa["id"]), para["context"], qa["question"], answers, title, pid)
                except (KeyError, TypeError, ValueError) as e:
                    raise ValidationError(f"{path}: malformed question entry {qa.get('id', '?')}: {e}") from e
                if ex.offset_errors():
                    bad.append(ex.id)
                examples.append(ex)
    if bad:
        raise ValidationError(f"answer offsets do not match context text for ids: {', '.join(bad)}")
    return QADataset(paragraphs, examples, titles)


def read_squad_json(path: str | Path) -> list[QAExample]:
    return read_squad_dataset(path).examples


def write_squad_json(examples: Sequence[QAExample], path: str | Path, version: str = "1.1") -> None:
    """Group examples back into articles and paragraphs, preserving first-seen order."""
    articles: dict[str, dict[str, list]] = {}
    for ex in examples:
        paras = articles.setdefault(ex.title, {})
        paras.setdefault(ex.context, []).append({
            "id": ex.id,
            "question": ex.question,
            "answers": [{"text": t, "answer_start": s} for t, s in ex.answers],
        })
    data = [{"title": title, "paragraphs": [{"context": c, "qas": qas} for c, qas in paras.items()]}
            for title, paras in articles.items()]
    Path(path).write_text(json.dumps({"version": version, "data": data}, ensure_ascii=False, indent=1),
                          encoding="utf-8")


def read_predictions(path: str | Path) -> dict[str, str]:
    try:
        preds = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not JSON: {e}") from e
    if not isinstance(preds, dict) or not all(isinstance(v, str) for v in preds.values()):
        raise ValidationError(f"{path}: predictions must map question ids to answer strings")
    return preds


def _count(text: str, profile: str) -> int:
    if profile == "char":
        return sum(1 for ch in text if not ch.isspace())
    return len(text.split())


def _mean(xs: list[int]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def corpus_token_stats(data: QADataset | Sequence[QAExample], profile: str = "whitespace") -> dict:
    """Average token counts for paragraphs, questions and answers; absent fields are ``None``."""
    if profile not in STAT_PROFILES:
        raise ConfigError(f"token statistics profile must be one of {STAT_PROFILES}")
    if isinstance(data, QADataset):
        paragraphs, examples = data.paragraphs, data.examples
    else:
        examples = list(data)
        paragraphs = list(dict.fromkeys(ex.context for ex in examples))
    answers = [a for ex in examples for a, _ in ex.answers]
    return {
        "paragraph": _mean([_count(p, profile) for p in paragraphs]),
        "question": _mean([_count(ex.question, profile) for ex in examples]),
        "answer": _mean([_count(a, profile) for a in answers]),
        "n_paragraphs": len(paragraphs),
        "n_questions": len(examples),
        "n_answers": len(answers),
        "tokenizer": profile,
    }
