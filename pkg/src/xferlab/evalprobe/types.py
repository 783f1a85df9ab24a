from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ValidationError


@dataclass
class QAExample:
    id: str
    context: str
    question: str
    answers: list[tuple[str, int]] = field(default_factory=list)
    title: str = ""
    paragraph: int = -1

    def offset_errors(self) -> list[int]:
        """Indices of answers whose text does not sit at its stated offset."""
        return [i for i, (text, start) in enumerate(self.answers)
                if start < 0 or self.context[start:start + len(text)] != text]


@dataclass
class MinimalPair:
    grammatical: str
    ungrammatical: str
    category: str

    def differing_words(self) -> list[int]:
        a, b = self.grammatical.split(), self.ungrammatical.split()
        if len(a) != len(b):
            return list(range(max(len(a), len(b))))
        return [i for i, (x, y) in enumerate(zip(a, b)) if x != y]


@dataclass
class QADataset:
    paragraphs: list[str]
    examples: list[QAExample]
    titles: list[str] = field(default_factory=list)


@dataclass
class WicExample:
    sentence1: str
    sentence2: str
    target: str
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValidationError(f"WiC label must be 0 or 1, got {self.label}")


@dataclass
class ScwsExample:
    sentence1: str
    target1: str
    sentence2: str
    target2: str
    score: float
