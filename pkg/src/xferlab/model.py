"""Transformer encoder with swappable per-language embedding sets.

Parameters are grouped by role so training phases can freeze whole groups:

    tok_emb:<lang>   token embeddings of one language (rows 0-4 unused; see special_emb)
    pos_emb:<lang>   language-specific positions (only with lang_specific_positions)
    pos_emb:shared   positions shared by every language
    seg_emb          two segment embeddings
    special_emb      the five special-symbol rows shared by every language
    body             embedding layer norm, encoder layers, pooler
    adapters:<lang>  bottleneck adapters attached to one language's embedding set
    head:mlm / head:mlm_out / head:nsp / head:cls / head:span
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import numerics as nx
from .data import MlmBatch, SpanBatch
from .errors import ConfigError, InputError
from .numerics import Tensor
from .tokenization import CLS, N_SPECIALS, Vocabulary

DTYPES = {"float32": np.float32, "float64": np.float64}
NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_seq_len: int = 32
    adapter_size: int = 0
    tie_mlm_output: bool = True
    lang_specific_positions: bool = False
    dtype: str = "float32"
    init_std: float = 0.02

    def __post_init__(self) -> None:
        if min(self.n_layers, self.n_heads, self.d_model, self.d_ff, self.max_seq_len) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0 <= self.adapter_size < self.d_model:
            raise ConfigError(f"adapter_size must lie in [0, d_model), got {self.adapter_size}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


BERT_BASE = ModelConfig(n_layers=12, n_heads=12, d_model=768, d_ff=3072, max_seq_len=512)


@dataclass
class EmbeddingSet:
    """The swappable lexical unit of one language."""

    language: str
    vocab: Vocabulary
    token_emb: Tensor
    pos_emb: Tensor | None = None
    adapters: dict[str, Tensor] | None = None

    def __post_init__(self) -> None:
        if self.token_emb.shape[0] != len(self.vocab):
            raise ConfigError(
                f"embedding rows {self.token_emb.shape[0]} != vocabulary size {len(self.vocab)} for {self.language!r}"
            )

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [(f"emb/{self.language}/tok", self.token_emb)]
        if self.pos_emb is not None:
            out.append((f"emb/{self.language}/pos", self.pos_emb))
        for k in sorted(self.adapters or {}):
            out.append((f"adapters/{self.language}/{k}", self.adapters[k]))
        return out

    def copy(self, language: str | None = None) -> "EmbeddingSet":
        lang = language or self.language

        def dup(t: Tensor | None) -> Tensor | None:
            return None if t is None else Tensor(t.data.copy(), requires_grad=t.requires_grad)

        adapters = None if self.adapters is None else {k: dup(v) for k, v in self.adapters.items()}
        vocab = self.vocab if language is None else _relabel(self.vocab, lang)
        return EmbeddingSet(lang, vocab, dup(self.token_emb), dup(self.pos_emb), adapters)


def _relabel(vocab: Vocabulary, language: str) -> Vocabulary:
    return Vocabulary(vocab.model, language)


@dataclass
class ForwardOutput:
    loss: Tensor
    logits: dict[str, Tensor]
    parts: dict[str, float] = field(default_factory=dict)


class TransformerModel:
    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0, language: str | None = None):
        self.config = config
        self.dtype = config.np_dtype
        self.rng = np.random.default_rng(seed)
        d = config.d_model
        self.params: dict[str, Tensor] = {}
        self.embedding_sets: dict[str, EmbeddingSet] = {}
        self.audit_log: list[dict] = []
        self.history: list[str] = []
        self.n_classes = 0

        self._p("special_emb", self._normal((N_SPECIALS, d)))
        self._p("seg_emb", self._normal((2, d)))
        if not config.lang_specific_positions:
            self._p("pos_emb", self._normal((config.max_seq_len, d)))
        self._p("body/emb_ln/g", np.ones(d))
        self._p("body/emb_ln/b", np.zeros(d))
        for i in range(config.n_layers):
            pre = f"body/layer{i}"
            for name in ("wq", "wk", "wv", "wo"):
                self._p(f"{pre}/attn/{name}", self._normal((d, d)))
            for name in ("bq", "bk", "bv", "bo"):
                self._p(f"{pre}/attn/{name}", np.zeros(d))
            self._p(f"{pre}/ln1/g", np.ones(d))
            self._p(f"{pre}/ln1/b", np.zeros(d))
            self._p(f"{pre}/ffn/w1", self._normal((d, config.d_ff)))
            self._p(f"{pre}/ffn/b1", np.zeros(config.d_ff))
            self._p(f"{pre}/ffn/w2", self._normal((config.d_ff, d)))
            self._p(f"{pre}/ffn/b2", np.zeros(d))
            self._p(f"{pre}/ln2/g", np.ones(d))
            self._p(f"{pre}/ln2/b", np.zeros(d))
        self._p("body/pooler/w", self._normal((d, d)))
        self._p("body/pooler/b", np.zeros(d))
        self._p("head/mlm/w", self._normal((d, d)))
        self._p("head/mlm/b", np.zeros(d))
        self._p("head/mlm/ln_g", np.ones(d))
        self._p("head/mlm/ln_b", np.zeros(d))
        if not config.tie_mlm_output:
            self._p("head/mlm_out/w", self._normal((d, len(vocab))))
        self._p("head/nsp/w", self._normal((d, 2)))
        self._p("head/nsp/b", np.zeros(2))

        self.active = language or vocab.language
        self.embedding_sets[self.active] = self.new_embedding_set(vocab, self.active)
        self.embedding_sets[self.active].token_emb.data[:N_SPECIALS] = self.params["special_emb"].data
        if config.adapter_size:
            insert_adapters(self, config.adapter_size)

    # ------------------------------------------------------------------ setup

    def _normal(self, shape) -> np.ndarray:
        return self.rng.normal(0.0, self.config.init_std, size=shape)

    def _p(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def new_embedding_set(self, vocab: Vocabulary, language: str | None = None, rng=None) -> EmbeddingSet:
        """Freshly initialised embedding set for ``vocab``."""
        rng = rng if rng is not None else self.rng
        lang = language or vocab.language
        d = self.config.d_model
        tok = Tensor(rng.normal(0.0, self.config.init_std, (len(vocab), d)).astype(self.dtype), requires_grad=True)
        pos = None
        if self.config.lang_specific_positions:
            pos = Tensor(rng.normal(0.0, self.config.init_std, (self.config.max_seq_len, d)).astype(self.dtype),
                         requires_grad=True)
        return EmbeddingSet(lang, vocab, tok, pos)

    @property
    def active_set(self) -> EmbeddingSet:
        return self.embedding_sets[self.active]

    @property
    def vocab(self) -> Vocabulary:
        return self.active_set.vocab

    # ------------------------------------------------------------------ groups

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = sorted(self.params.items())
        for lang in sorted(self.embedding_sets):
            out += self.embedding_sets[lang].named_tensors()
        return out

    def param_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        groups: dict[str, list[tuple[str, Tensor]]] = {}
        for name, t in sorted(self.params.items()):
            if name == "pos_emb":
                tag = "pos_emb:shared"
            elif name in ("special_emb", "seg_emb"):
                tag = name
            elif name.startswith("body/"):
                tag = "body"
            else:
                tag = "head:" + name.split("/")[1]
            groups.setdefault(tag, []).append((name, t))
        for lang in sorted(self.embedding_sets):
            es = self.embedding_sets[lang]
            groups[f"tok_emb:{lang}"] = [(f"emb/{lang}/tok", es.token_emb)]
            if es.pos_emb is not None:
                groups[f"pos_emb:{lang}"] = [(f"emb/{lang}/pos", es.pos_emb)]
            if es.adapters:
                groups[f"adapters:{lang}"] = [(f"adapters/{lang}/{k}", es.adapters[k]) for k in sorted(es.adapters)]
        return groups

    def trainable_tags(self) -> list[str]:
        return sorted(tag for tag, members in self.param_groups().items() if all(t.requires_grad for _, t in members))

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_parameters() if t.requires_grad]

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.grad = None

    def add_classifier(self, n_classes: int, zero_init: bool = False) -> None:
        if n_classes < 2:
            raise ConfigError("a classifier needs at least two classes")
        d = self.config.d_model
        w = np.zeros((d, n_classes)) if zero_init else self._normal((d, n_classes))
        self._p("head/cls/w", w)
        self._p("head/cls/b", np.zeros(n_classes))
        self.n_classes = n_classes

    def add_span_head(self, zero_init: bool = False) -> None:
        d = self.config.d_model
        for end in ("start", "end"):
            self._p(f"head/span/w_{end}", np.zeros((d, 1)) if zero_init else self._normal((d, 1)))
            self._p(f"head/span/b_{end}", np.zeros(1))

    # ------------------------------------------------------------------ forward

    def _check_ids(self, ids: np.ndarray, vsize: int) -> None:
        bad = np.argwhere((ids < 0) | (ids >= vsize))
        if bad.size:
            pos = tuple(int(x) for x in bad[0])
            raise InputError(f"token id {int(ids[pos])} at position {pos} outside vocabulary of size {vsize}")

    def lexical_table(self, language: str | None = None) -> Tensor:
        es = self.embedding_sets[language or self.active]
        return nx.concat([self.params["special_emb"], nx.slice_rows(es.token_emb, N_SPECIALS)], axis=0)

    def embed(self, ids, positions, segments, language=None, noise_sigma: float = 0.0, rng=None):
        lang = language or self.active
        es = self.embedding_sets[lang]
        ids = np.asarray(ids)
        self._check_ids(ids, es.token_emb.shape[0])
        if positions.max(initial=0) >= self.config.max_seq_len:
            raise InputError(f"position {int(positions.max())} exceeds max_seq_len {self.config.max_seq_len}")
        table = self.lexical_table(lang)
        word = nx.embedding(table, ids)
        pos_table = es.pos_emb if self.config.lang_specific_positions else self.params["pos_emb"]
        if pos_table is None:
            raise ConfigError(f"embedding set {lang!r} lacks language-specific positions")
        pos = nx.embedding(pos_table, positions)
        seg = nx.embedding(self.params["seg_emb"], segments)
        if noise_sigma > 0.0:
            if rng is None:
                raise ConfigError("noised forward needs an rng")
            word = nx.add(word, rng.normal(0.0, noise_sigma, word.shape).astype(self.dtype))
            pos = nx.add(pos, rng.normal(0.0, noise_sigma, pos.shape).astype(self.dtype))
            seg = nx.add(seg, rng.normal(0.0, noise_sigma, seg.shape).astype(self.dtype))
        not_cls = (ids != CLS)[..., None].astype(self.dtype)
        x = nx.add(word, nx.mul(nx.add(pos, seg), not_cls))
        return x, table

    def _adapter(self, y: Tensor, adapters: dict[str, Tensor], key: str) -> Tensor:
        h = nx.gelu(nx.linear(y, adapters[f"{key}/down_w"], adapters[f"{key}/down_b"]))
        return nx.add(y, nx.linear(h, adapters[f"{key}/up_w"], adapters[f"{key}/up_b"]))

    def encode(self, ids, positions, segments, attention, language=None, noise_sigma=0.0, rng=None):
        """Final-layer hidden states [B, T, d] and the lexical table used."""
        cfg = self.config
        p = self.params
        lang = language or self.active
        adapters = self.embedding_sets[lang].adapters
        x, table = self.embed(ids, positions, segments, lang, noise_sigma, rng)
        x = nx.layer_norm(x, p["body/emb_ln/g"], p["body/emb_ln/b"])
        b, t = np.asarray(ids).shape
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        mask = np.where(np.asarray(attention, dtype=bool), 0.0, NEG_INF).astype(self.dtype).reshape(b, 1, 1, t)
        inv = 1.0 / math.sqrt(dh)
        for i in range(cfg.n_layers):
            pre = f"body/layer{i}"
            q = nx.transpose(nx.reshape(nx.linear(x, p[f"{pre}/attn/wq"], p[f"{pre}/attn/bq"]), (b, t, h, dh)), (0, 2, 1, 3))
            k = nx.transpose(nx.reshape(nx.linear(x, p[f"{pre}/attn/wk"], p[f"{pre}/attn/bk"]), (b, t, h, dh)), (0, 2, 3, 1))
            v = nx.transpose(nx.reshape(nx.linear(x, p[f"{pre}/attn/wv"], p[f"{pre}/attn/bv"]), (b, t, h, dh)), (0, 2, 1, 3))
            att = nx.softmax(nx.add(nx.scale(nx.matmul(q, k), inv), mask))
            ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (b, t, cfg.d_model))
            a = nx.linear(ctx, p[f"{pre}/attn/wo"], p[f"{pre}/attn/bo"])
            if adapters:
                a = self._adapter(a, adapters, f"layer{i}/attn")
            x = nx.layer_norm(nx.add(x, a), p[f"{pre}/ln1/g"], p[f"{pre}/ln1/b"])
            f = nx.linear(nx.gelu(nx.linear(x, p[f"{pre}/ffn/w1"], p[f"{pre}/ffn/b1"])), p[f"{pre}/ffn/w2"], p[f"{pre}/ffn/b2"])
            if adapters:
                f = self._adapter(f, adapters, f"layer{i}/ffn")
            x = nx.layer_norm(nx.add(x, f), p[f"{pre}/ln2/g"], p[f"{pre}/ln2/b"])
        return x, table

    def pooled(self, hidden: Tensor) -> Tensor:
        b, t, d = hidden.shape
        cls_rows = nx.take_rows(nx.reshape(hidden, (b * t, d)), np.arange(b) * t)
        return nx.tanh(nx.linear(cls_rows, self.params["body/pooler/w"], self.params["body/pooler/b"]))

    def mlm_logits(self, hidden: Tensor, table: Tensor, flat_positions) -> Tensor:
        b, t, d = hidden.shape
        p = self.params
        hm = nx.take_rows(nx.reshape(hidden, (b * t, d)), flat_positions)
        hm = nx.layer_norm(nx.gelu(nx.linear(hm, p["head/mlm/w"], p["head/mlm/b"])), p["head/mlm/ln_g"], p["head/mlm/ln_b"])
        if self.config.tie_mlm_output:
            return nx.matmul(hm, nx.transpose(table, (1, 0)))
        return nx.matmul(hm, p["head/mlm_out/w"])

    def forward(self, batch, head: str = "pretrain", language: str | None = None,
                noise_sigma: float = 0.0, rng=None) -> ForwardOutput:
        hidden, table = self.encode(batch.ids, batch.positions, batch.segments, batch.attention,
                                    language, noise_sigma, rng)
        p = self.params
        if head in ("pretrain", "mlm", "nsp"):
            if not isinstance(batch, MlmBatch):
                raise ConfigError(f"head {head!r} needs an MlmBatch")
            logits: dict[str, Tensor] = {}
            parts: dict[str, float] = {}
            loss = None
            if head in ("pretrain", "mlm"):
                ml = self.mlm_logits(hidden, table, batch.mlm_positions)
                mlm_loss = nx.cross_entropy(ml, batch.mlm_labels)
                logits["mlm"] = ml
                parts["mlm"] = float(mlm_loss.data)
                loss = mlm_loss
            if head in ("pretrain", "nsp"):
                nl = nx.linear(self.pooled(hidden), p["head/nsp/w"], p["head/nsp/b"])
                nsp_loss = nx.cross_entropy(nl, batch.nsp_labels)
                logits["nsp"] = nl
                parts["nsp"] = float(nsp_loss.data)
                loss = nsp_loss if loss is None else nx.add(loss, nsp_loss)
            return ForwardOutput(loss, logits, parts)
        if head == "cls":
            if "head/cls/w" not in p:
                raise ConfigError("model has no classification head")
            cl = nx.linear(self.pooled(hidden), p["head/cls/w"], p["head/cls/b"])
            labels = getattr(batch, "labels", None)
            if labels is None or labels.size == 0:
                return ForwardOutput(Tensor(np.zeros((), self.dtype)), {"cls": cl})
            if labels.max() >= self.n_classes or labels.min() < 0:
                raise ConfigError(f"label outside classifier arity {self.n_classes}")
            loss = nx.cross_entropy(cl, labels)
            return ForwardOutput(loss, {"cls": cl}, {"cls": float(loss.data)})
        if head == "span":
            if not isinstance(batch, SpanBatch):
                raise ConfigError("span head needs a SpanBatch")
            if "head/span/w_start" not in p:
                raise ConfigError("model has no span head")
            b, t, _ = hidden.shape
            mask = np.where(batch.context_mask, 0.0, NEG_INF).astype(self.dtype)
            out = {}
            loss = None
            for end, gold in (("start", batch.starts), ("end", batch.ends)):
                lg = nx.add(nx.reshape(nx.linear(hidden, p[f"head/span/w_{end}"], p[f"head/span/b_{end}"]), (b, t)), mask)
                out[end] = lg
                ce = nx.cross_entropy(lg, gold)
                loss = ce if loss is None else nx.add(loss, ce)
            return ForwardOutput(loss, out, {"span": float(loss.data)})
        raise ConfigError(f"unknown head {head!r}")

    # ------------------------------------------------------------------ inference helpers

    def hidden_states(self, ids, segments=None, attention=None, language=None) -> np.ndarray:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        b, t = ids.shape
        segments = np.zeros_like(ids) if segments is None else np.atleast_2d(segments)
        attention = np.ones_like(ids, dtype=bool) if attention is None else np.atleast_2d(attention)
        positions = np.tile(np.arange(t), (b, 1))
        with nx.no_tape():
            h, _ = self.encode(ids, positions, segments, attention, language)
        return h.data

    def masked_log_probs(self, ids, position: int, language=None) -> np.ndarray:
        """Log-probabilities over the vocabulary at ``position`` of a single sequence."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        t = ids.shape[1]
        with nx.no_tape():
            h, table = self.encode(ids, np.arange(t)[None], np.zeros_like(ids), np.ones_like(ids, dtype=bool), language)
            logits = self.mlm_logits(h, table, np.array([position]))
        return nx.log_softmax_np(logits.data.astype(np.float64))[0]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_parameters()}

    def fork(self) -> "TransformerModel":
        """Shallow copy sharing every tensor except the embedding-set mapping itself."""
        other = copy.copy(self)
        other.embedding_sets = dict(self.embedding_sets)
        other.params = dict(self.params)
        other.audit_log = list(self.audit_log)
        other.history = list(self.history)
        return other


def forward(model: TransformerModel, batch, head: str = "pretrain", **kw) -> ForwardOutput:
    return model.forward(batch, head, **kw)


def set_trainable(model: TransformerModel, tags: Iterable[str]) -> None:
    """Exactly the named groups become trainable; everything else is frozen."""
    tags = set(tags)
    groups = model.param_groups()
    unknown = tags - set(groups)
    if unknown:
        raise ConfigError(f"unknown parameter groups {sorted(unknown)}; have {sorted(groups)}")
    for _, t in model.named_parameters():
        t.requires_grad = False
        t.grad = None
    for tag in tags:
        for _, t in groups[tag]:
            t.requires_grad = True


def swap_embedding_set(model: TransformerModel, new: EmbeddingSet) -> None:
    cfg = model.config
    if new.token_emb.ndim != 2 or new.token_emb.shape[1] != cfg.d_model:
        raise ConfigError(f"token embeddings have shape {new.token_emb.shape}, model needs width {cfg.d_model}")
    if cfg.lang_specific_positions:
        if new.pos_emb is None or new.pos_emb.shape != (cfg.max_seq_len, cfg.d_model):
            raise ConfigError("language-specific positions enabled but embedding set has none of the right shape")
    elif new.pos_emb is not None:
        raise ConfigError("embedding set carries position embeddings but the model shares positions")
    if not cfg.tie_mlm_output and new.token_emb.shape[0] != model.params["head/mlm_out/w"].shape[1]:
        raise ConfigError("untied MLM output cannot follow a vocabulary-size change")
    if new.adapters:
        width = new.adapters["layer0/attn/down_w"].shape
        if width[0] != cfg.d_model or len(new.adapters) != 8 * cfg.n_layers:
            raise ConfigError("adapter tensors do not match the model")
    new.token_emb.data[:N_SPECIALS] = model.params["special_emb"].data
    model.embedding_sets[new.language] = new
    model.active = new.language


def adapter_param_count(d_model: int, adapter_size: int) -> int:
    """Parameters of one bottleneck module (down + bias, up + bias)."""
    return d_model * adapter_size + adapter_size + adapter_size * d_model + d_model


def new_adapters(model: TransformerModel, adapter_size: int, rng=None) -> dict[str, Tensor]:
    d = model.config.d_model
    if not 0 < adapter_size < d:
        raise ConfigError(f"adapter_size must lie in (0, {d})")
    rng = rng if rng is not None else model.rng
    out = {}
    for i in range(model.config.n_layers):
        for where in ("attn", "ffn"):
            key = f"layer{i}/{where}"
            out[f"{key}/down_w"] = Tensor(rng.normal(0.0, model.config.init_std, (d, adapter_size)).astype(model.dtype), requires_grad=True)
            out[f"{key}/down_b"] = Tensor(np.zeros(adapter_size, model.dtype), requires_grad=True)
            out[f"{key}/up_w"] = Tensor(np.zeros((adapter_size, d), model.dtype), requires_grad=True)
            out[f"{key}/up_b"] = Tensor(np.zeros(d, model.dtype), requires_grad=True)
    return out


def insert_adapters(model: TransformerModel, adapter_size: int, rng=None) -> None:
    """Attach zero-initialised-output adapters to the active language (output-preserving)."""
    es = model.active_set
    if es.adapters:
        raise ConfigError(f"embedding set {es.language!r} already has adapters")
    es.adapters = new_adapters(model, adapter_size, rng)


def add_embedding_noise(model: TransformerModel, batch, sigma: float, rng, head: str = "cls") -> ForwardOutput:
    """Training-time forward with Gaussian noise on word, position and segment contributions."""
    if sigma < 0:
        raise ConfigError("noise sigma must be non-negative")
    return model.forward(batch, head, noise_sigma=sigma, rng=rng)
