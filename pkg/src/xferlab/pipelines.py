"""Training recipes: monolingual transfer in four steps, joint baselines, CLWE body.

Every phase records a freeze-audit entry on the model (see ``persist.record_phase``)
and appends its name to ``model.history`` so later steps can check ordering.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .clwe import WordEmbeddings, read_embeddings
from .data import (
    ClassificationBatch,
    Corpus,
    MlmBatch,
    MlmBatcher,
    SamplerConfig,
    make_classification_batch,
    read_corpus,
    read_task,
)
from .errors import ConfigError, ContractError, DivergenceError
from .model import EmbeddingSet, ModelConfig, TransformerModel, new_adapters, set_trainable, swap_embedding_set
from .numerics import Tensor
from .optim import FINETUNE_DEFAULTS, Optimizer, OptimizerConfig
from .persist import (
    emit_metrics,
    group_hashes,
    load_checkpoint,
    metric_record,
    record_phase,
    save_checkpoint,
)
from .tokenization import MARKER, N_SPECIALS, UNIGRAM, SubwordModel, Vocabulary, build_disjoint_vocabs, build_joint_vocab, build_vocab

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PIPELINES = ("monotrans", "jointpair", "jointmulti", "clwe-body")
NOISE_SIGMA = 0.075
DEFAULT_RESTARTS = 3
DEFAULT_ADAPTER_SIZE = 16
STEP3_TAGS = ("body", "seg_emb", "special_emb")


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("XFERLAB_THREADS", "1")))
    except ValueError:
        raise ConfigError("XFERLAB_THREADS must be an integer") from None


# ---------------------------------------------------------------------- batch sources


class ExampleBatcher:
    """Epoch-wise shuffled classification batches."""

    def __init__(self, examples: Sequence[tuple], vocab: Vocabulary, seq_len: int, seed: int = 0):
        if not examples:
            raise ConfigError("no training examples")
        self.examples = list(examples)
        self.vocab = vocab
        self.seq_len = seq_len
        self.rng = np.random.default_rng(seed)
        self.order = self.rng.permutation(len(self.examples)).tolist()
        self.cursor = 0

    def next_batch(self, batch_size: int) -> ClassificationBatch:
        idx = []
        while len(idx) < batch_size:
            if self.cursor >= len(self.order):
                self.order = self.rng.permutation(len(self.examples)).tolist()
                self.cursor = 0
            take = self.order[self.cursor:self.cursor + batch_size - len(idx)]
            idx += take
            self.cursor += len(take)
        return make_classification_batch([self.examples[i] for i in idx], self.vocab, self.seq_len)

    def get_state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "order": list(self.order), "cursor": self.cursor}

    def set_state(self, state: Mapping) -> None:
        self.rng.bit_generator.state = state["rng"]
        self.order = list(state["order"])
        self.cursor = int(state["cursor"])


def steps_for_epochs(n_examples: int, batch_size: int, epochs: int) -> int:
    return max(1, epochs * math.ceil(n_examples / batch_size))


# ---------------------------------------------------------------------- trainer


@dataclass
class TrainResult:
    losses: list[float]
    dev_losses: list[tuple[int, float]]
    steps: int


class Trainer:
    """One optimisation phase over the model's currently trainable groups.

    ``emb_of`` maps a batch row's language to an embedding-set name; when given,
    multilingual batches are split and each part runs through its own set.
    """

    def __init__(
        self,
        model: TransformerModel,
        opt: OptimizerConfig,
        source,
        head: str,
        steps: int,
        *,
        language: str | None = None,
        emb_of: Mapping[str, str] | None = None,
        noise_sigma: float = 0.0,
        noise_seed: int = 0,
        phase: str = "train",
        dev_fn: Callable[[TransformerModel], float] | None = None,
        dev_every: int = 0,
        on_log: Callable[[dict], None] | None = None,
        log_every: int = 50,
    ):
        if noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        self.model = model
        self.opt_cfg = opt
        self.source = source
        self.head = head
        self.steps = steps
        self.language = language
        self.emb_of = dict(emb_of) if emb_of else None
        self.noise_sigma = noise_sigma
        self.noise_rng = np.random.default_rng(noise_seed)
        self.phase = phase
        self.dev_fn = dev_fn
        self.dev_every = dev_every
        self.on_log = on_log
        self.log_every = log_every
        self.optimizer = Optimizer(opt, steps)
        self.step = 0
        self.losses: list[float] = []
        self.dev_losses: list[tuple[int, float]] = []
        self._last_finite: dict[str, np.ndarray] | None = None

    def _loss(self, batch) -> Tensor:
        kw = {"noise_sigma": self.noise_sigma, "rng": self.noise_rng if self.noise_sigma > 0 else None}
        if self.emb_of and isinstance(batch, MlmBatch) and batch.languages is not None:
            parts = batch.split_by_language()
            total = None
            b = len(batch.nsp_labels)
            for lang, sub in parts.items():
                out = self.model.forward(sub, self.head, language=self.emb_of[lang], **kw)
                term = nx.scale(out.loss, len(sub.nsp_labels) / b)
                total = term if total is None else nx.add(total, term)
            return total
        return self.model.forward(batch, self.head, language=self.language, **kw).loss

    def train_step(self) -> float:
        model = self.model
        batch = self.source.next_batch(self.opt_cfg.batch_size)
        model.zero_grad()
        with nx.Tape() as tape:
            loss = self._loss(batch)
        value = float(loss.data)
        trainable = model.trainable_parameters()
        if not math.isfinite(value):
            raise DivergenceError(f"{self.phase}: non-finite loss at step {self.step}",
                                  self._last_finite, list(self.losses))
        # parameters at which the latest finite loss was measured
        self._last_finite = {n: t.data.copy() for n, t in trainable}
        if trainable:
            nx.backward(tape, loss)
            for n, t in trainable:
                if t.grad is not None and not np.all(np.isfinite(t.grad)):
                    raise DivergenceError(f"{self.phase}: non-finite gradient for {n} at step {self.step}",
                                          self._last_finite, list(self.losses) + [value])
            self.optimizer.step(trainable)
        else:
            self.optimizer.t += 1
        self.losses.append(value)
        self.step += 1
        if self.dev_fn is not None and self.dev_every and self.step % self.dev_every == 0:
            self.dev_losses.append((self.step, self.dev_fn(model)))
        if self.on_log is not None and (self.step % self.log_every == 0 or self.step == self.steps):
            self.on_log({"phase": self.phase, "step": self.step, "loss": value})
        return value

    def run(self, until: int | None = None, checkpoint_path: str | Path | None = None) -> TrainResult:
        until = self.steps if until is None else min(until, self.steps)
        while self.step < until:
            self.train_step()
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return TrainResult(list(self.losses), list(self.dev_losses), self.step)

    def state(self) -> dict:
        return {
            "phase": self.phase,
            "head": self.head,
            "step": self.step,
            "steps": self.steps,
            "language": self.language,
            "losses": list(self.losses),
            "dev_losses": [list(x) for x in self.dev_losses],
            "source": self.source.get_state(),
            "noise_rng": self.noise_rng.bit_generator.state,
        }

    def save(self, path: str | Path) -> str:
        return save_checkpoint(self.model, path, self.optimizer.state_dict(), {"trainer": self.state()})

    @classmethod
    def resume(cls, path: str | Path, source, opt: OptimizerConfig, **kw) -> "Trainer":
        """Rebuild a trainer from a checkpoint written by :meth:`save`; ``source`` must be freshly constructed."""
        ckpt = load_checkpoint(path)
        st = ckpt.extra.get("trainer")
        if st is None or ckpt.optimizer_state is None:
            raise ConfigError(f"{path} is not a resumable training checkpoint")
        kw.setdefault("language", st["language"])
        tr = cls(ckpt.model, opt, source, st["head"], st["steps"], phase=st["phase"], **kw)
        tr.optimizer.load_state_dict(ckpt.optimizer_state)
        tr.step = st["step"]
        tr.losses = list(st["losses"])
        tr.dev_losses = [tuple(x) for x in st["dev_losses"]]
        source.set_state(st["source"])
        tr.noise_rng.bit_generator.state = st["noise_rng"]
        return tr


def fixed_mlm_batches(corpus: Corpus | Mapping[str, Corpus], vocab, n: int, batch_size: int, seq_len: int,
                      seed: int = 12345) -> list[MlmBatch]:
    batcher = MlmBatcher(corpus, vocab, seq_len=seq_len, seed=seed)
    return [batcher.next_batch(batch_size) for _ in range(n)]


def mlm_dev_loss(model: TransformerModel, batches: Sequence[MlmBatch], language: str | None = None,
                 head: str = "pretrain") -> float:
    with nx.no_tape():
        vals = [float(model.forward(b, head, language=language).loss.data) for b in batches]
    return float(np.mean(vals))


# ---------------------------------------------------------------------- step 1


@dataclass
class PretrainResult:
    model: TransformerModel
    losses: list[float]
    dev_losses: list[tuple[int, float]]
    initial_dev: float | None = None
    final_dev: float | None = None


def step1_pretrain(
    corpus: Corpus,
    vocab: Vocabulary,
    config: ModelConfig,
    opt: OptimizerConfig,
    *,
    seed: int = 0,
    dev_corpus: Corpus | None = None,
    dev_batches: int = 8,
    dev_every: int = 0,
    on_log=None,
    checkpoint_path: str | Path | None = None,
) -> PretrainResult:
    """Pretrain an encoder with MLM+NSP on one language; every group is trainable."""
    lang = corpus.language
    model = TransformerModel(config, vocab, seed=seed, language=lang)
    set_trainable(model, model.param_groups())
    dev = fixed_mlm_batches(dev_corpus, vocab, dev_batches, opt.batch_size, config.max_seq_len) if dev_corpus else None
    dev_fn = (lambda m: mlm_dev_loss(m, dev, lang)) if dev else None
    initial = dev_fn(model) if dev_fn else None
    before = group_hashes(model)
    batcher = MlmBatcher(corpus, vocab, seq_len=config.max_seq_len, seed=seed + 1)
    trainer = Trainer(model, opt, batcher, "pretrain", opt.steps, language=lang, phase="step1",
                      dev_fn=dev_fn, dev_every=dev_every, on_log=on_log)
    res = trainer.run()
    record_phase(model, "step1", before, res.steps, final_loss=res.losses[-1])
    model.history.append("step1")
    final = dev_fn(model) if dev_fn else None
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return PretrainResult(model, res.losses, res.dev_losses, initial, final)


# ---------------------------------------------------------------------- step 2


@dataclass(frozen=True)
class TransferOptions:
    lang_pos_emb: bool = False
    adapters: int = 0
    noise_sigma: float = NOISE_SIGMA
    restarts: int = DEFAULT_RESTARTS
    pos_init: str = "copy"

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.adapters < 0:
            raise ConfigError("adapter size must be non-negative")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")
        if self.pos_init not in ("copy", "random"):
            raise ConfigError("pos_init must be 'copy' or 'random'")


@dataclass
class RestartOutcome:
    seed: int
    dev_loss: float | None
    losses: list[float]
    error: str | None = None


@dataclass
class TransferResult:
    embedding_set: EmbeddingSet
    best: int
    restarts: list[RestartOutcome]
    dev_loss: float


def _transfer_once(model, corpus, vocab, lang, options, opt, seed, dev, on_log):
    fork = model.fork()
    rng = np.random.default_rng(seed)
    es = fork.new_embedding_set(vocab, lang, rng=rng)
    src = model.embedding_sets[model.active]
    if es.pos_emb is not None and options.pos_init == "copy":
        es.pos_emb.data[...] = src.pos_emb.data
    es.token_emb.data[:N_SPECIALS] = fork.params["special_emb"].data
    fork.embedding_sets[lang] = es
    fork.active = lang
    if options.adapters:
        es.adapters = new_adapters(fork, options.adapters, rng)
    tags = {f"tok_emb:{lang}"}
    if options.lang_pos_emb:
        tags.add(f"pos_emb:{lang}")
    if options.adapters:
        tags.add(f"adapters:{lang}")
    set_trainable(fork, tags)
    batcher = MlmBatcher(corpus, vocab, seq_len=fork.config.max_seq_len, seed=seed + 1)
    trainer = Trainer(fork, opt, batcher, "pretrain", opt.steps, language=lang, phase="step2", on_log=on_log)
    res = trainer.run()
    dev_loss = mlm_dev_loss(fork, dev, lang) if dev else float(np.mean(res.losses[-max(1, len(res.losses) // 10):]))
    return es, dev_loss, res.losses


def step2_transfer(
    model: TransformerModel,
    corpus: Corpus,
    vocab: Vocabulary,
    options: TransferOptions = TransferOptions(),
    opt: OptimizerConfig = OptimizerConfig(),
    *,
    language: str | None = None,
    seed: int = 0,
    dev_corpus: Corpus | None = None,
    dev_batches: int = 8,
    parallel: bool = False,
    on_log=None,
) -> TransferResult:
    """Learn an L2 embedding set (plus optional positions/adapters) under a frozen body.

    Runs ``options.restarts`` independent seeds and keeps the one with the lowest
    held-out MLM+NSP loss. The model's groups are verified unchanged afterwards and the
    winning set is registered on the model without becoming active.
    """
    if "step1" not in model.history and "clwe-body" not in model.history:
        raise ContractError("step 2 needs a pretrained model")
    lang = language or corpus.language
    if lang == model.active:
        raise ConfigError(f"L2 language name {lang!r} equals the active L1 set")
    if options.lang_pos_emb and not model.config.lang_specific_positions:
        raise ConfigError("language-specific positions need a model built with lang_specific_positions")
    dev = fixed_mlm_batches(dev_corpus, vocab, dev_batches, opt.batch_size, model.config.max_seq_len) if dev_corpus else None
    before = group_hashes(model)
    seeds = [seed + 1000 * r for r in range(options.restarts)]

    def attempt(s):
        try:
            return _transfer_once(model, corpus, vocab, lang, options, opt, s, dev, on_log), None
        except DivergenceError as e:
            return None, e

    if parallel and thread_cap() > 1:
        with ThreadPoolExecutor(max_workers=thread_cap()) as ex:
            results = list(ex.map(attempt, seeds))
    else:
        results = [attempt(s) for s in seeds]

    outcomes = []
    for s, (ok, err) in zip(seeds, results):
        if ok is None:
            outcomes.append(RestartOutcome(s, None, list(err.trace), str(err)))
        else:
            outcomes.append(RestartOutcome(s, ok[1], ok[2]))
    good = [i for i, o in enumerate(outcomes) if o.dev_loss is not None and math.isfinite(o.dev_loss)]
    if not good:
        raise DivergenceError("every step-2 restart diverged", None, [o.losses for o in outcomes])
    best = min(good, key=lambda i: outcomes[i].dev_loss)
    es = results[best][0][0]

    after = group_hashes(model)
    changed = sorted(tag for tag in before if after.get(tag) != before[tag])
    if changed:
        raise ContractError(f"step 2 modified frozen groups {changed}")
    for _, t in es.named_tensors():
        t.requires_grad = False
    model.embedding_sets[lang] = es
    trainable = [f"tok_emb:{lang}"] + ([f"pos_emb:{lang}"] if options.lang_pos_emb else []) + (
        [f"adapters:{lang}"] if options.adapters else [])
    model.audit_log.append({
        "phase": "step2",
        "steps": opt.steps,
        "trainable": trainable,
        "hash_before": before,
        "hash_after": {k: v for k, v in group_hashes(model).items() if k in before},
        "language": lang,
        "restart_dev_losses": [o.dev_loss for o in outcomes],
        "best": best,
    })
    model.history.append(f"step2:{lang}")
    return TransferResult(es, best, outcomes, outcomes[best].dev_loss)


# ---------------------------------------------------------------------- step 3


@dataclass
class FinetuneResult:
    model: TransformerModel
    losses: list[float]
    steps: int


def step3_tags(model: TransformerModel, head: str = "cls") -> set[str]:
    return set(STEP3_TAGS) | {f"head:{head}"}


def step3_finetune(
    model: TransformerModel,
    examples: Sequence[tuple],
    opt: OptimizerConfig = FINETUNE_DEFAULTS,
    *,
    n_classes: int | None = None,
    noise_sigma: float = NOISE_SIGMA,
    seed: int = 0,
    language: str | None = None,
    zero_init_head: bool = False,
    on_log=None,
    checkpoint_path: str | Path | None = None,
) -> FinetuneResult:
    """Fine-tune body, segment and special embeddings and the classifier on L1 data.

    Token embeddings and position embeddings stay frozen. Noise, when positive, is drawn
    fresh on every step and only touches activations.
    """
    labels = [int(ex[-1]) for ex in examples]
    if not labels:
        raise ConfigError("no fine-tuning examples")
    k = n_classes or max(labels) + 1
    if model.n_classes == 0:
        model.add_classifier(max(k, 2), zero_init=zero_init_head)
    if min(labels) < 0 or max(labels) >= model.n_classes:
        raise ConfigError(f"labels span [{min(labels)}, {max(labels)}] but the head has {model.n_classes} classes")
    lang = language or model.active
    if lang not in model.embedding_sets:
        raise ConfigError(f"no embedding set for {lang!r}")
    set_trainable(model, step3_tags(model))
    steps = steps_for_epochs(len(examples), opt.batch_size, opt.epochs) if opt.epochs else opt.steps
    source = ExampleBatcher(examples, model.embedding_sets[lang].vocab, model.config.max_seq_len, seed)
    before = group_hashes(model)
    trainer = Trainer(model, opt, source, "cls", steps, language=lang, noise_sigma=noise_sigma,
                      noise_seed=seed + 7, phase="step3", on_log=on_log)
    res = trainer.run()
    record_phase(model, "step3", before, res.steps, noise_sigma=noise_sigma, language=lang)
    model.history.append("step3:cls")
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return FinetuneResult(model, res.losses, res.steps)


# ---------------------------------------------------------------------- step 4 / evaluation


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray
    logits: np.ndarray
    n: int


def evaluate_classification(model: TransformerModel, examples: Sequence[tuple], language: str | None = None,
                            batch_size: int = 64) -> EvalResult:
    lang = language or model.active
    vocab = model.embedding_sets[lang].vocab
    outs = []
    with nx.no_tape():
        for lo in range(0, len(examples), batch_size):
            batch = make_classification_batch(examples[lo:lo + batch_size], vocab, model.config.max_seq_len)
            outs.append(model.forward(batch, "cls", language=lang).logits["cls"].data)
    logits = np.concatenate(outs) if outs else np.zeros((0, model.n_classes))
    preds = logits.argmax(axis=1)
    gold = np.array([int(ex[-1]) for ex in examples])
    acc = float((preds == gold).mean()) if len(gold) else float("nan")
    return EvalResult(acc, preds, logits, len(gold))


def step4_zero_shot(model: TransformerModel, embedding_set: EmbeddingSet, examples: Sequence[tuple],
                    batch_size: int = 64) -> EvalResult:
    """Swap a copy of ``embedding_set`` into a fork of the model and evaluate; neither input is modified."""
    if "step3:cls" not in model.history:
        raise ContractError("zero-shot evaluation needs a model fine-tuned with a classification head (step 3)")
    fork = model.fork()
    swap_embedding_set(fork, embedding_set.copy())
    return evaluate_classification(fork, examples, embedding_set.language, batch_size)


def shuffled_embedding_set(es: EmbeddingSet, seed: int = 0, language: str | None = None) -> EmbeddingSet:
    """Negative control: the same vectors randomly re-assigned to vocabulary rows."""
    out = es.copy(language)
    rng = np.random.default_rng(seed)
    rows = np.arange(N_SPECIALS, out.token_emb.shape[0])
    out.token_emb.data[rows] = out.token_emb.data[rng.permutation(rows)]
    return out


def random_embedding_set(model: TransformerModel, vocab: Vocabulary, language: str, seed: int = 0) -> EmbeddingSet:
    """Negative control: freshly initialised vectors of the same scale as the active set."""
    es = model.new_embedding_set(vocab, language, rng=np.random.default_rng(seed))
    scale = float(model.active_set.token_emb.data[N_SPECIALS:].std())
    es.token_emb.data[...] = np.random.default_rng(seed).normal(0.0, scale, es.token_emb.shape).astype(model.dtype)
    src = model.active_set
    if es.pos_emb is not None:
        es.pos_emb.data[...] = src.pos_emb.data
    if src.adapters:
        es.adapters = {k: Tensor(v.data.copy()) for k, v in src.adapters.items()}
    return es


# ---------------------------------------------------------------------- joint baselines


@dataclass
class JointResult:
    model: TransformerModel
    vocabs: dict[str, Vocabulary]
    emb_of: dict[str, str]
    losses: list[float]


def train_joint(
    corpora: Mapping[str, Corpus],
    config: ModelConfig,
    opt: OptimizerConfig,
    *,
    vocab_mode: str = "joint",
    vocab_size: int = 200,
    algorithm: str = UNIGRAM,
    alpha: float = 0.5,
    seed: int = 0,
    vocabs: Mapping[str, Vocabulary] | None = None,
    on_log=None,
) -> JointResult:
    """Pretrain one body on several languages with upsampled language sampling.

    ``joint`` shares one vocabulary and embedding set; ``disjoint`` keeps one full-size
    vocabulary and embedding set per language.
    """
    if len(corpora) < 2:
        raise ConfigError("joint training needs at least two corpora")
    langs = list(corpora)
    if vocab_mode == "joint":
        shared = (vocabs or {}).get("joint") or build_joint_vocab(corpora, vocab_size, alpha, algorithm)
        per_lang = {l: shared for l in langs}
        emb_of = {l: shared.language for l in langs}
        model = TransformerModel(config, shared, seed=seed, language=shared.language)
    elif vocab_mode == "disjoint":
        per_lang = dict(vocabs) if vocabs else build_disjoint_vocabs(corpora, vocab_size, algorithm)
        emb_of = {l: l for l in langs}
        model = TransformerModel(config, per_lang[langs[0]], seed=seed, language=langs[0])
        for l in langs[1:]:
            es = model.new_embedding_set(per_lang[l], l)
            es.token_emb.data[:N_SPECIALS] = model.params["special_emb"].data
            model.embedding_sets[l] = es
    else:
        raise ConfigError(f"vocab mode must be 'joint' or 'disjoint', got {vocab_mode!r}")
    set_trainable(model, model.param_groups())
    before = group_hashes(model)
    batcher = MlmBatcher(corpora, per_lang, seq_len=config.max_seq_len, sampler=SamplerConfig(alpha, seed + 1))
    trainer = Trainer(model, opt, batcher, "pretrain", opt.steps, emb_of=emb_of, phase="joint", on_log=on_log)
    res = trainer.run()
    record_phase(model, "joint", before, res.steps, languages=langs, vocab_mode=vocab_mode)
    model.history.append("step1")
    model.active = emb_of[langs[0]]
    return JointResult(model, per_lang, emb_of, res.losses)


# ---------------------------------------------------------------------- CLWE body


def word_vocabulary(words: Sequence[str], language: str) -> Vocabulary:
    """Whole-word vocabulary covering both the bare and the space-marked form of each word."""
    pieces = []
    for w in words:
        pieces += [(w, -1.0), (MARKER + w, -1.0)]
    return Vocabulary(SubwordModel(UNIGRAM, pieces, max_piece_symbols=max(len(w) for w in words) + 1), language)


def clwe_embedding_set(model: TransformerModel, emb: WordEmbeddings, language: str) -> EmbeddingSet:
    """Frozen embedding set whose rows are the mapped word vectors (both surface forms share a vector)."""
    if emb.dim != model.config.d_model:
        raise ConfigError(f"mapped vectors have dimension {emb.dim}, model needs {model.config.d_model}")
    vocab = word_vocabulary(emb.words, language)
    tok = np.zeros((len(vocab), emb.dim), dtype=model.dtype)
    tok[:N_SPECIALS] = model.params["special_emb"].data
    rows = np.repeat(np.asarray(emb.matrix, dtype=model.dtype), 2, axis=0)
    tok[N_SPECIALS:] = rows
    pos = None
    if model.config.lang_specific_positions:
        pos = Tensor(model.active_set.pos_emb.data.copy())
    return EmbeddingSet(language, vocab, Tensor(tok), pos)


def train_clwe_body(
    mapped: Mapping[str, WordEmbeddings],
    corpus: Corpus,
    config: ModelConfig,
    opt: OptimizerConfig,
    *,
    seed: int = 0,
    on_log=None,
) -> tuple[TransformerModel, dict[str, EmbeddingSet]]:
    """Train body and heads on L1 over frozen, pre-aligned word vectors.

    Returns the model and one embedding set per language for later zero-shot swaps.
    """
    l1 = corpus.language
    if l1 not in mapped:
        raise ConfigError(f"no mapped embeddings for {l1!r}")
    for lang, emb in mapped.items():
        if emb.dim != config.d_model:
            raise ConfigError(f"mapped vectors for {lang!r} have dimension {emb.dim}, model needs {config.d_model}")
    vocab = word_vocabulary(mapped[l1].words, l1)
    model = TransformerModel(config, vocab, seed=seed, language=l1)
    sets = {lang: clwe_embedding_set(model, emb, lang) for lang, emb in mapped.items()}
    model.embedding_sets[l1] = sets[l1]
    tags = {t for t in model.param_groups() if not t.startswith(("tok_emb:", "pos_emb:"))}
    set_trainable(model, tags)
    before = group_hashes(model)
    batcher = MlmBatcher(corpus, sets[l1].vocab, seq_len=config.max_seq_len, seed=seed + 1)
    trainer = Trainer(model, opt, batcher, "pretrain", opt.steps, language=l1, phase="clwe-body", on_log=on_log)
    res = trainer.run()
    record_phase(model, "clwe-body", before, res.steps)
    model.history.append("clwe-body")
    return model, sets


# ---------------------------------------------------------------------- experiment spec


@dataclass
class ExperimentSpec:
    pipeline: str
    corpora: dict[str, str]
    l1: str
    l2: list[str]
    vocab_mode: str = "disjoint"
    vocab_size: int = 200
    vocab_algorithm: str = UNIGRAM
    model: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=lambda: {"learning_rate": 1e-3, "batch_size": 32, "steps": 2000})
    transfer: dict = field(default_factory=lambda: {"learning_rate": 1e-3, "batch_size": 32, "steps": 1000})
    finetune: dict = field(default_factory=lambda: asdict(FINETUNE_DEFAULTS))
    task: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=lambda: {"pretrain": 0, "transfer": 0, "finetune": 0})
    alpha: float = 0.5
    dev_corpora: dict[str, str] = field(default_factory=dict)
    mapped_embeddings: dict[str, str] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"spec schema version {self.schema_version}, expected {SCHEMA_VERSION}")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}")
        if not self.l2:
            raise ConfigError("at least one L2 is required")
        if self.l1 in self.l2:
            raise ConfigError("L1 also listed as L2")
        missing = [l for l in [self.l1, *self.l2] if l not in self.corpora and self.pipeline != "clwe-body"]
        if missing:
            raise ConfigError(f"no corpus for {missing}")
        if self.pipeline == "jointpair" and len(self.l2) != 1:
            raise ConfigError("jointpair takes exactly one L2")
        if self.pipeline == "clwe-body":
            need = [l for l in [self.l1, *self.l2] if l not in self.mapped_embeddings]
            if need:
                raise ConfigError(f"clwe-body needs mapped embeddings for {need}")
        if self.vocab_mode not in ("joint", "disjoint"):
            raise ConfigError("vocab_mode must be 'joint' or 'disjoint'")
        self.model_config()
        self.transfer_options()
        for k in ("pretrain", "transfer", "finetune"):
            OptimizerConfig.from_dict(getattr(self, k))

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model)

    def transfer_options(self) -> TransferOptions:
        return TransferOptions(**self.options)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown spec fields {sorted(unknown)}")
        try:
            return cls(**dict(d))
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(d)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def run_experiment(spec: ExperimentSpec, out_dir: str | Path, base_dir: str | Path = ".") -> dict:
    """Execute a spec end to end; writes checkpoints, loss CSVs and ``metrics.jsonl`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = Path(base_dir)
    cfg = spec.model_config()
    options = spec.transfer_options()
    pre_opt = OptimizerConfig.from_dict(spec.pretrain)
    tr_opt = OptimizerConfig.from_dict(spec.transfer)
    ft_opt = OptimizerConfig.from_dict(spec.finetune)
    seeds = {"pretrain": 0, "transfer": 0, "finetune": 0, **spec.seeds}
    corpora = {l: read_corpus(_resolve(base, p), l) for l, p in spec.corpora.items()}
    devs = {l: read_corpus(_resolve(base, p), l) for l, p in spec.dev_corpora.items()}
    metrics_path = out / "metrics.jsonl"
    cfg_blob = json.loads(spec.to_json())
    curves: dict[str, list[float]] = {}
    summary: dict = {"pipeline": spec.pipeline, "metrics": {}}
    train_ex = [tuple(x) for x in read_task(_resolve(base, spec.task["train"]))] if spec.task.get("train") else None
    evals = {l: read_task(_resolve(base, p)) for l, p in spec.task.get("eval", {}).items()}
    n_classes = spec.task.get("n_classes")

    sets: dict[str, EmbeddingSet] = {}
    if spec.pipeline == "monotrans":
        v1 = build_vocab(corpora[spec.l1], spec.vocab_size, spec.l1, spec.vocab_algorithm)
        pre = step1_pretrain(corpora[spec.l1], v1, cfg, pre_opt, seed=seeds["pretrain"], dev_corpus=devs.get(spec.l1),
                             checkpoint_path=out / "step1.ckpt")
        model = pre.model
        curves["step1"] = pre.losses
        for l2 in spec.l2:
            v2 = build_vocab(corpora[l2], spec.vocab_size, l2, spec.vocab_algorithm)
            tr = step2_transfer(model, corpora[l2], v2, options, tr_opt, seed=seeds["transfer"],
                                dev_corpus=devs.get(l2), parallel=thread_cap() > 1)
            sets[l2] = tr.embedding_set
            for i, o in enumerate(tr.restarts):
                curves[f"step2_{l2}_restart{i}"] = o.losses
            summary.setdefault("restart_dev_losses", {})[l2] = [o.dev_loss for o in tr.restarts]
        save_checkpoint(model, out / "step2.ckpt")
    elif spec.pipeline in ("jointpair", "jointmulti"):
        langs = [spec.l1, *spec.l2]
        jr = train_joint({l: corpora[l] for l in langs}, cfg, pre_opt, vocab_mode=spec.vocab_mode,
                         vocab_size=spec.vocab_size, algorithm=spec.vocab_algorithm, alpha=spec.alpha,
                         seed=seeds["pretrain"])
        model = jr.model
        curves["joint"] = jr.losses
        sets = {l: model.embedding_sets[jr.emb_of[l]] for l in spec.l2}
        save_checkpoint(model, out / "joint.ckpt")
    else:
        mapped = {l: read_embeddings(_resolve(base, p), l) for l, p in spec.mapped_embeddings.items()}
        model, all_sets = train_clwe_body(mapped, corpora[spec.l1], cfg, pre_opt, seed=seeds["pretrain"])
        sets = {l: all_sets[l] for l in spec.l2}
        save_checkpoint(model, out / "clwe_body.ckpt")

    if train_ex is not None:
        l1_set = model.active
        ft = step3_finetune(model, train_ex, ft_opt, n_classes=n_classes, noise_sigma=options.noise_sigma,
                            seed=seeds["finetune"], checkpoint_path=out / "step3.ckpt")
        curves["step3"] = ft.losses
        for lang, ex in evals.items():
            if lang == spec.l1:
                res = evaluate_classification(model, ex, l1_set)
            elif lang in sets:
                res = step4_zero_shot(model, sets[lang], ex)
            else:
                raise ConfigError(f"no embedding set for evaluation language {lang!r}")
            rec = metric_record(f"cls:{lang}", "accuracy", res.accuracy, res.n, cfg_blob)
            emit_metrics(rec, metrics_path)
            summary["metrics"][lang] = res.accuracy
    write_curves(curves, out)
    return summary


def write_curves(curves: Mapping[str, Sequence[float]], out_dir: str | Path) -> list[Path]:
    """One CSV and one SVG line plot per curve."""
    from .plots import line_svg

    paths = []
    for name, ys in curves.items():
        csv = Path(out_dir) / f"loss_{name}.csv"
        csv.write_text("step,loss\n" + "".join(f"{i + 1},{y!r}\n" for i, y in enumerate(ys)), encoding="utf-8")
        svg = csv.with_suffix(".svg")
        svg.write_text(line_svg(list(ys), title=name), encoding="utf-8")
        paths += [csv, svg]
    return paths
