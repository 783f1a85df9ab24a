"""Checker for ``*k* ... #k#`` answer-span markers in translated paragraphs."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from ..errors import ValidationError

MARKER_RE = re.compile(r"\*(\d+)\*|#(\d+)#")


@dataclass(frozen=True)
class Marker:
    kind: str  # "open" or "close"
    key: int
    start: int
    end: int


@dataclass(frozen=True)
class Violation:
    kind: str
    key: int
    position: int

    def __str__(self) -> str:
        return f"{self.kind} {self.key} at {self.position}"


@dataclass
class PlaceholderReport:
    ok: bool
    violations: list[Violation] = field(default_factory=list)
    spans: dict[int, str] = field(default_factory=dict)


def find_markers(text: str) -> list[Marker]:
    out = []
    for m in MARKER_RE.finditer(text):
        if m.group(1) is not None:
            out.append(Marker("open", int(m.group(1)), m.start(), m.end()))
        else:
            out.append(Marker("close", int(m.group(2)), m.start(), m.end()))
    return out


def check_document(text: str) -> PlaceholderReport:
    """Balanced, non-nested, non-overlapping spans with each key used exactly once."""
    violations: list[Violation] = []
    spans: dict[int, str] = {}
    seen_open: set[int] = set()
    seen_close: set[int] = set()
    current: Marker | None = None
    for mk in find_markers(text):
        if mk.kind == "open":
            if mk.key in seen_open:
                violations.append(Violation("duplicate opener", mk.key, mk.start))
                continue
            seen_open.add(mk.key)
            if current is not None:
                violations.append(Violation("nested opener", mk.key, mk.start))
                continue
            current = mk
        else:
            if mk.key in seen_close:
                violations.append(Violation("duplicate closer", mk.key, mk.start))
                continue
            seen_close.add(mk.key)
            if current is None:
                kind = "closer before opener" if mk.key not in seen_open else "crossing closer"
                violations.append(Violation(kind, mk.key, mk.start))
                continue
            if current.key != mk.key:
                violations.append(Violation("crossing closer", mk.key, mk.start))
                continue
            spans[mk.key] = text[current.end:mk.start].strip()
            current = None
    if current is not None:
        violations.append(Violation("unclosed", current.key, current.start))
    return PlaceholderReport(not violations, violations, spans)


def validate_placeholders(source: str, translation: str) -> PlaceholderReport:
    """The translation must carry the source's markers, balanced; span order may differ."""
    src = check_document(source)
    if not src.ok:
        raise ValidationError("source document is malformed: " + "; ".join(map(str, src.violations)))
    report = check_document(translation)
    src_keys = Counter((m.kind, m.key) for m in find_markers(source))
    tgt_keys = Counter((m.kind, m.key) for m in find_markers(translation))
    for (kind, key), n in sorted((src_keys - tgt_keys).items(), key=lambda x: (x[0][1], x[0][0])):
        if kind == "close" and any(v.kind == "unclosed" and v.key == key for v in report.violations):
            continue
        if kind == "open" and any(v.kind == "closer before opener" and v.key == key for v in report.violations):
            continue
        report.violations.append(Violation(f"missing {'opener' if kind == 'open' else 'closer'}", key, -1))
    for (kind, key), n in sorted((tgt_keys - src_keys).items(), key=lambda x: (x[0][1], x[0][0])):
        if not any(v.key == key and v.kind.startswith("duplicate") for v in report.violations):
            pos = next(m.start for m in find_markers(translation) if (m.kind, m.key) == (kind, key))
            report.violations.append(Violation("unexpected marker", key, pos))
    report.ok = not report.violations
    return report
