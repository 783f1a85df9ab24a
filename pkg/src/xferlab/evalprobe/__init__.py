"""Task metrics, QA ingestion, the placeholder validator and probing protocols."""
from .metrics import classification_accuracy, normalize_answer, spearman, squad_evaluate, squad_f1_em
from .placeholders import PlaceholderReport, Violation, check_document, validate_placeholders
from .probes import (
    ProbeResult,
    SyntaxResult,
    probe_scws,
    probe_syntax,
    probe_wic,
    read_minimal_pairs_tsv,
    read_scws_tsv,
    read_wic_tsv,
)
from .qa import corpus_token_stats, read_squad_dataset, read_squad_json, write_squad_json
from .types import MinimalPair, QADataset, QAExample, ScwsExample, WicExample

__all__ = [
    "MinimalPair",
    "PlaceholderReport",
    "ProbeResult",
    "QADataset",
    "QAExample",
    "ScwsExample",
    "SyntaxResult",
    "Violation",
    "WicExample",
    "check_document",
    "classification_accuracy",
    "corpus_token_stats",
    "normalize_answer",
    "probe_scws",
    "probe_syntax",
    "probe_wic",
    "read_minimal_pairs_tsv",
    "read_scws_tsv",
    "read_squad_dataset",
    "read_squad_json",
    "read_wic_tsv",
    "spearman",
    "squad_evaluate",
    "squad_f1_em",
    "validate_placeholders",
    "write_squad_json",
]
