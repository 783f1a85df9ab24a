"""Single-file checkpoints, freeze audits and JSON-lines metrics.

Layout::

    b"XFERCKPT" | version u32 LE | header length u64 LE | header (UTF-8 JSON, sorted keys) | tensors

Tensors are stored little-endian in name order; the header indexes them by
offset, dtype and shape and records a SHA-256 of the tensor section.
"""
from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import ConfigError, IntegrityError
from .model import EmbeddingSet, ModelConfig, TransformerModel
from .numerics import Tensor
from .tokenization import Vocabulary

MAGIC = b"XFERCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def tensor_digest(items: Iterable[tuple[str, np.ndarray]]) -> str:
    h = hashlib.sha256()
    for name, a in items:
        a = _le(np.asarray(a))
        h.update(name.encode())
        h.update(str(a.dtype.str).encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def group_hashes(model: TransformerModel) -> dict[str, str]:
    return {tag: tensor_digest((n, t.data) for n, t in members) for tag, members in model.param_groups().items()}


def model_hash(model: TransformerModel) -> str:
    return tensor_digest((n, t.data) for n, t in model.named_parameters())


def record_phase(model: TransformerModel, phase: str, before: Mapping[str, str], steps: int, **info) -> dict:
    """Append a freeze-audit entry comparing group hashes before and after a phase."""
    after = group_hashes(model)
    entry = {
        "phase": phase,
        "steps": steps,
        "trainable": model.trainable_tags(),
        "hash_before": dict(sorted(before.items())),
        "hash_after": after,
        **info,
    }
    model.audit_log.append(entry)
    return entry


@dataclass
class AuditReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)


def audit_log(entries: Iterable[Mapping]) -> AuditReport:
    """Every group outside a phase's trainable set must hash identically before and after it."""
    report = AuditReport(True)
    for e in entries:
        report.phases.append(e["phase"])
        trainable = set(e["trainable"])
        for tag, h in e["hash_before"].items():
            if tag in trainable:
                continue
            after = e["hash_after"].get(tag)
            if after is not None and after != h:
                report.ok = False
                report.violations.append(f"{e['phase']}: frozen group {tag} changed")
    return report


def audit_pair(earlier: "Checkpoint", later: "Checkpoint") -> AuditReport:
    """Groups that changed between two checkpoints must be covered by the later log's new phases."""
    report = audit_log(later.audit)
    new = later.audit[len(earlier.audit):]
    allowed = set().union(*(set(e["trainable"]) for e in new)) if new else set()
    ha, hb = group_hashes(earlier.model), group_hashes(later.model)
    for tag in sorted(set(ha) & set(hb)):
        if ha[tag] != hb[tag] and tag not in allowed:
            report.ok = False
            report.violations.append(f"group {tag} changed but no logged phase trained it")
    return report


@dataclass
class Checkpoint:
    model: TransformerModel
    optimizer_state: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def audit(self) -> list[dict]:
        return self.model.audit_log


def _model_header(model: TransformerModel) -> dict:
    sets = {}
    for lang, es in sorted(model.embedding_sets.items()):
        sets[lang] = {
            "vocab": es.vocab.to_dict(),
            "vocab_hash": es.vocab.content_hash(),
            "pos_emb": es.pos_emb is not None,
            "adapters": sorted(es.adapters) if es.adapters else [],
        }
    return {
        "config": model.config.to_dict(),
        "active": model.active,
        "n_classes": model.n_classes,
        "history": list(model.history),
        "embedding_sets": sets,
        "groups": {tag: [n for n, _ in members] for tag, members in model.param_groups().items()},
        "trainable": [n for n, t in model.named_parameters() if t.requires_grad],
        "audit": model.audit_log,
    }


def save_checkpoint(model: TransformerModel, path: str | Path, optimizer_state: Mapping | None = None,
                    extra: Mapping | None = None) -> str:
    """Write a checkpoint; returns the SHA-256 of the file."""
    tensors: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in model.named_parameters()]
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {"t": optimizer_state["t"], "total_steps": optimizer_state["total_steps"]}
        for k in ("m", "v"):
            tensors += [(f"optimizer/{k}/{n}", a) for n, a in optimizer_state[k].items()]
    tensors.sort(key=lambda x: x[0])
    names = [n for n, _ in tensors]
    if len(set(names)) != len(names):
        raise IntegrityError("duplicate tensor names in model")
    index, blobs, offset = [], [], 0
    for name, a in tensors:
        b = _le(np.asarray(a)).tobytes()
        index.append({"name": name, "dtype": _le(np.asarray(a)).dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    payload = b"".join(blobs)
    header = {
        "format_version": VERSION,
        "model": _model_header(model),
        "optimizer": opt_meta,
        "extra": dict(extra or {}),
        "tensors": index,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    data = _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def read_header(path: str | Path) -> dict:
    raw = Path(path).read_bytes()
    header, _ = _split(raw)
    return header


def _split(raw: bytes) -> tuple[dict, bytes]:
    if len(raw) < _PREFIX.size:
        raise IntegrityError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise IntegrityError("bad magic bytes")
    if version != VERSION:
        raise IntegrityError(f"checkpoint format version {version}, reader supports {VERSION}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise IntegrityError("truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"unreadable header: {e}") from e
    return header, raw[start + hlen:]


def load_checkpoint(path: str | Path, expected_config: ModelConfig | None = None) -> Checkpoint:
    header, payload = _split(Path(path).read_bytes())
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name, dt, shape = entry["name"], np.dtype(entry["dtype"]), tuple(entry["shape"])
        want = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if entry["nbytes"] != want:
            raise IntegrityError(f"tensor {name}: stored length {entry['nbytes']} != shape product {want}")
        lo = entry["offset"]
        if lo + want > len(payload):
            raise IntegrityError(f"tensor {name}: truncated blob")
        arrays[name] = np.frombuffer(payload, dtype=dt, count=want // dt.itemsize, offset=lo).reshape(shape).astype(
            dt.newbyteorder("="))
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError("tensor section checksum mismatch")

    mh = header["model"]
    config = ModelConfig.from_dict(mh["config"])
    if expected_config is not None and expected_config != config:
        raise ConfigError(f"checkpoint config {config} differs from expected {expected_config}")
    vocabs = {lang: Vocabulary.from_dict(s["vocab"]) for lang, s in mh["embedding_sets"].items()}
    for lang, s in mh["embedding_sets"].items():
        if vocabs[lang].content_hash() != s["vocab_hash"]:
            raise IntegrityError(f"embedded vocabulary for {lang!r} fails its content hash")
    model = TransformerModel(config, vocabs[mh["active"]], seed=0, language=mh["active"])
    trainable = set(mh["trainable"])

    def tensor(name: str) -> Tensor:
        if name not in arrays:
            raise IntegrityError(f"tensor {name} missing")
        return Tensor(arrays[name], requires_grad=name in trainable, name=name)

    model.params = {n: tensor(n) for n in arrays if not n.startswith(("emb/", "adapters/", "optimizer/"))}
    model.embedding_sets = {}
    for lang, s in mh["embedding_sets"].items():
        pos = tensor(f"emb/{lang}/pos") if s["pos_emb"] else None
        adapters = {k: tensor(f"adapters/{lang}/{k}") for k in s["adapters"]} or None
        model.embedding_sets[lang] = EmbeddingSet(lang, vocabs[lang], tensor(f"emb/{lang}/tok"), pos, adapters)
    model.active = mh["active"]
    model.n_classes = mh["n_classes"]
    model.history = list(mh["history"])
    model.audit_log = list(mh["audit"])

    opt = None
    if header["optimizer"] is not None:
        opt = dict(header["optimizer"])
        for k in ("m", "v"):
            pre = f"optimizer/{k}/"
            opt[k] = {n[len(pre):]: a for n, a in arrays.items() if n.startswith(pre)}
    return Checkpoint(model, opt, header["extra"])


_LOCKS: dict[str, threading.Lock] = {}
_LOCKS_GUARD = threading.Lock()


def emit_metrics(record: Mapping[str, Any], path: str | Path) -> None:
    """Append one JSON line and flush; writers to the same path are serialised."""
    line = json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"
    key = str(Path(path).resolve())
    with _LOCKS_GUARD:
        lock = _LOCKS.setdefault(key, threading.Lock())
    with lock, open(path, "a", encoding="utf-8") as fh:
        fh.write(line)
        fh.flush()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def config_hash(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def metric_record(task: str, metric: str, value: float, n: int, config: Any) -> dict:
    return {"task": task, "metric": metric, "value": value, "n": n, "config_hash": config_hash(config)}
