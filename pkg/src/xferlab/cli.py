"""Command-line entry point: ``xferlab <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import ConfigError, ContractError, DivergenceError, InputError, IntegrityError, ValidationError

log = logging.getLogger("xferlab")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    spec_hash: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    version: str = __version__

    def add_input(self, path) -> None:
        if path is not None and Path(path).is_file():
            self.inputs[str(path)] = file_hash(path)

    def add_output(self, path) -> None:
        p = Path(path)
        if p.is_file():
            self.outputs[str(p)] = file_hash(p)
        elif p.is_dir():
            for q in sorted(p.rglob("*")):
                if q.is_file() and q.name != "manifest.json":
                    self.outputs[str(q)] = file_hash(q)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def _lang_paths(items: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"expected LANG=PATH, got {item!r}")
        lang, path = item.split("=", 1)
        out[lang] = path
    return out


def _model_config(cfg: dict):
    from .model import ModelConfig

    return ModelConfig.from_dict(cfg.get("model", {}))


def _opt(args, cfg: dict, key: str, defaults: dict):
    from .optim import OptimizerConfig

    d = {**defaults, **cfg.get(key, {})}
    for name, attr in (("learning_rate", "lr"), ("steps", "steps"), ("batch_size", "batch_size"), ("epochs", "epochs")):
        v = getattr(args, attr, None)
        if v is not None:
            d[name] = v
    return OptimizerConfig.from_dict(d)


def _echo(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, default=str))


# ---------------------------------------------------------------------- subcommands


def cmd_vocab(args, cfg, man: RunManifest) -> int:
    from .data import read_corpus
    from .tokenization import build_disjoint_vocabs, build_joint_vocab, build_vocab, save_vocab

    corpora = _lang_paths(args.corpus)
    for p in corpora.values():
        man.add_input(p)
    loaded = {l: read_corpus(p, l) for l, p in corpora.items()}
    size = args.size or cfg.get("size", 200)
    algo = args.algorithm or cfg.get("algorithm", "unigram")
    out = Path(args.out)
    if args.mode == "joint":
        v = build_joint_vocab(loaded, size, args.alpha, algo)
        save_vocab(v, out)
        man.add_output(out)
    elif len(loaded) == 1:
        (lang, corpus), = loaded.items()
        save_vocab(build_vocab(corpus, size, lang, algo), out)
        man.add_output(out)
    else:
        out.mkdir(parents=True, exist_ok=True)
        for lang, v in build_disjoint_vocabs(loaded, size, algo).items():
            save_vocab(v, out / f"{lang}.vocab")
        man.add_output(out)
    return EXIT_OK


def _load_vocab_arg(path: str, lang: str, algorithm: str):
    from .tokenization import load_vocab

    return load_vocab(path, algorithm, lang)


def cmd_pretrain(args, cfg, man) -> int:
    from .data import read_corpus
    from .pipelines import step1_pretrain

    corpus = read_corpus(args.corpus, args.language)
    vocab = _load_vocab_arg(args.vocab, args.language, args.algorithm)
    man.add_input(args.corpus)
    man.add_input(args.vocab)
    dev = read_corpus(args.dev, args.language) if args.dev else None
    res = step1_pretrain(corpus, vocab, _model_config(cfg), _opt(args, cfg, "pretrain", {"learning_rate": 1e-3}),
                         seed=args.seed, dev_corpus=dev, checkpoint_path=args.out)
    man.add_output(args.out)
    _echo({"final_loss": res.losses[-1], "initial_dev": res.initial_dev, "final_dev": res.final_dev})
    return EXIT_OK


def cmd_transfer(args, cfg, man) -> int:
    from .data import read_corpus
    from .persist import load_checkpoint, save_checkpoint
    from .pipelines import DEFAULT_ADAPTER_SIZE, TransferOptions, step2_transfer

    ckpt = load_checkpoint(args.checkpoint)
    man.add_input(args.checkpoint)
    corpus = read_corpus(args.corpus, args.language)
    vocab = _load_vocab_arg(args.vocab, args.language, args.algorithm)
    opts = {**cfg.get("options", {})}
    if args.restarts is not None:
        opts["restarts"] = args.restarts
    if args.lang_pos:
        opts["lang_pos_emb"] = True
    if args.adapters is not None:
        opts["adapters"] = args.adapters or DEFAULT_ADAPTER_SIZE
    dev = read_corpus(args.dev, args.language) if args.dev else None
    res = step2_transfer(ckpt.model, corpus, vocab, TransferOptions(**opts),
                         _opt(args, cfg, "transfer", {"learning_rate": 1e-3}), seed=args.seed, dev_corpus=dev,
                         parallel=args.parallel)
    save_checkpoint(ckpt.model, args.out)
    man.add_output(args.out)
    _echo({"best": res.best, "restart_dev_losses": [o.dev_loss for o in res.restarts]})
    return EXIT_OK


def cmd_finetune(args, cfg, man) -> int:
    from .data import read_task
    from .optim import FINETUNE_DEFAULTS
    from .persist import load_checkpoint
    from .pipelines import NOISE_SIGMA, step3_finetune

    ckpt = load_checkpoint(args.checkpoint)
    man.add_input(args.checkpoint)
    man.add_input(args.task)
    sigma = args.noise_sigma if args.noise_sigma is not None else cfg.get("noise_sigma", NOISE_SIGMA)
    res = step3_finetune(ckpt.model, read_task(args.task), _opt(args, cfg, "finetune", asdict(FINETUNE_DEFAULTS)),
                         noise_sigma=sigma, seed=args.seed, checkpoint_path=args.out)
    man.add_output(args.out)
    _echo({"steps": res.steps, "final_loss": res.losses[-1]})
    return EXIT_OK


def cmd_eval(args, cfg, man) -> int:
    from .persist import config_hash, emit_metrics

    records = []
    if args.task == "qa":
        from .evalprobe.metrics import squad_evaluate
        from .evalprobe.qa import read_predictions, read_squad_json

        if not (args.pred and args.gold):
            raise ConfigError("--task qa needs --pred and --gold")
        man.add_input(args.pred)
        man.add_input(args.gold)
        res = squad_evaluate(read_predictions(args.pred), read_squad_json(args.gold), args.profile)
        h = config_hash({"task": "qa", "profile": args.profile})
        records = [{"task": "qa", "metric": m, "value": res[m], "n": res["n"], "config_hash": h} for m in ("f1", "em")]
        out = {"f1": res["f1"], "em": res["em"], "n": res["n"], "missing": res["missing"], "profile": args.profile}
    else:
        from .data import read_task
        from .persist import load_checkpoint
        from .pipelines import evaluate_classification, step4_zero_shot

        if not (args.checkpoint and args.data):
            raise ConfigError("--task cls needs --checkpoint and --data")
        ckpt = load_checkpoint(args.checkpoint)
        man.add_input(args.checkpoint)
        man.add_input(args.data)
        model = ckpt.model
        examples = read_task(args.data)
        lang = args.language or model.active
        if lang not in model.embedding_sets:
            raise ConfigError(f"checkpoint has no embedding set for {lang!r}")
        if lang == model.active:
            res = evaluate_classification(model, examples)
        else:
            res = step4_zero_shot(model, model.embedding_sets[lang], examples)
        h = config_hash({"task": "cls", "checkpoint": file_hash(args.checkpoint), "language": lang})
        records = [{"task": f"cls:{lang}", "metric": "accuracy", "value": res.accuracy, "n": res.n, "config_hash": h}]
        out = {"accuracy": res.accuracy, "n": res.n, "language": lang}
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        man.add_output(args.out)
    if args.metrics:
        for r in records:
            emit_metrics(r, args.metrics)
    _echo(out)
    return EXIT_OK


def cmd_joint(args, cfg, man) -> int:
    from .data import read_corpus
    from .persist import save_checkpoint
    from .pipelines import train_joint

    corpora = {l: read_corpus(p, l) for l, p in _lang_paths(args.corpus).items()}
    for p in _lang_paths(args.corpus).values():
        man.add_input(p)
    res = train_joint(corpora, _model_config(cfg), _opt(args, cfg, "pretrain", {"learning_rate": 1e-3}),
                      vocab_mode=args.mode, vocab_size=args.size or cfg.get("size", 200), alpha=args.alpha,
                      seed=args.seed)
    save_checkpoint(res.model, args.out)
    man.add_output(args.out)
    _echo({"final_loss": res.losses[-1], "sets": sorted(res.model.embedding_sets)})
    return EXIT_OK


def cmd_clwe(args, cfg, man) -> int:
    from . import clwe

    if args.action == "train":
        from .data import read_corpus

        if not args.corpus:
            raise ConfigError("clwe train needs --corpus")
        man.add_input(args.corpus)
        corpus = read_corpus(args.corpus, args.language or "")
        emb = clwe.train_skipgram(corpus, dim=args.dim, window=args.window, negatives=args.negatives,
                                  epochs=args.epochs, seed=args.seed, language=args.language or "")
        clwe.write_embeddings(emb, args.out)
        man.add_output(args.out)
        _echo({"words": len(emb.words), "dim": emb.dim, "loss_trace": emb.loss_trace})
        return EXIT_OK
    if not (args.source and args.target):
        raise ConfigError("clwe map needs --source and --target")
    man.add_input(args.source)
    man.add_input(args.target)
    a = clwe.read_embeddings(args.source)
    b = clwe.read_embeddings(args.target)
    seed = clwe.seed_dictionary_identical(a, b)
    if not seed:
        raise ValidationError("no identically spelled words to seed the mapping")
    res = clwe.map_orthogonal(a, b, seed, self_learning=args.self_learning, iterations=args.iterations)
    clwe.write_embeddings(res.apply(a), args.out)
    man.add_output(args.out)
    _echo({"seed_pairs": len(seed), "iterations": res.iterations, "objective": res.objective})
    return EXIT_OK


def cmd_probe(args, cfg, man) -> int:
    from .evalprobe import probes
    from .persist import config_hash, emit_metrics, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    man.add_input(args.checkpoint)
    man.add_input(args.data)
    model = ckpt.model
    if args.kind == "syntax":
        res = probes.probe_syntax(model, probes.read_minimal_pairs_tsv(args.data))
        out = {"per_category": res.per_category, "macro": res.macro, "coverage": res.coverage}
        value, n, metric = res.macro, res.coverage["retained"], "macro_accuracy"
    elif args.kind == "scws":
        res = probes.probe_scws(model, probes.read_scws_tsv(args.data))
        out = {"spearman": res.value, "n": res.n, "skipped": res.skipped}
        value, n, metric = res.value, res.n, "spearman"
    else:
        if not args.eval_data:
            raise ConfigError("wic probe needs --eval-data")
        man.add_input(args.eval_data)
        res = probes.probe_wic(model, probes.read_wic_tsv(args.data), probes.read_wic_tsv(args.eval_data),
                               representation=args.representation)
        out = {"accuracy": res.value, "n": res.n, "skipped": res.skipped}
        value, n, metric = res.value, res.n, "accuracy"
    rec = {"task": f"probe:{args.kind}", "metric": metric, "value": value, "n": n,
           "config_hash": config_hash({"checkpoint": file_hash(args.checkpoint), "kind": args.kind})}
    if args.metrics:
        emit_metrics(rec, args.metrics)
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        man.add_output(args.out)
    _echo(out)
    return EXIT_OK


def cmd_synth(args, cfg, man) -> int:
    from .data import SynthSpec, generate_minimal_pairs, generate_synthetic, generate_task, write_cipher_map, write_corpus, write_task
    from .evalprobe.probes import write_minimal_pairs_tsv

    d = dict(cfg)
    if args.spec:
        man.add_input(args.spec)
        d.update(_load_config(args.spec))
    if args.transform:
        d["transform"] = args.transform
    if args.seed is not None:
        d["seed"] = args.seed
    spec = SynthSpec.from_dict(d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = generate_synthetic(spec, args.n, args.l1_name, args.l2_name)
    write_corpus(res.l1, out / f"{args.l1_name}.txt")
    write_corpus(res.l2, out / f"{args.l2_name}.txt")
    if res.cipher is not None:
        write_cipher_map(res.cipher, out / "cipher.tsv")
    if args.task:
        l1, l2 = generate_task(spec, args.task, spec.seed + 1)
        write_task(l1, out / f"task_{args.l1_name}.tsv")
        write_task(l2, out / f"task_{args.l2_name}.tsv")
    if args.pairs:
        write_minimal_pairs_tsv(generate_minimal_pairs(spec, args.pairs, spec.seed + 2), out / "minimal_pairs.tsv")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    man.add_output(out)
    _echo({"documents": len(res.l1.documents), "sentences": len(res.l1), "out": str(out)})
    return EXIT_OK


def cmd_validate_xlation(args, cfg, man) -> int:
    from .evalprobe.placeholders import validate_placeholders

    man.add_input(args.src)
    man.add_input(args.tgt)
    src_lines = Path(args.src).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(args.tgt).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        print(f"line count mismatch: {len(src_lines)} source vs {len(tgt_lines)} translation", file=sys.stderr)
        return EXIT_INVALID
    bad = 0
    report = []
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        r = validate_placeholders(s, t)
        report.append({"line": i, "ok": r.ok, "violations": [str(v) for v in r.violations],
                       "spans": {str(k): v for k, v in sorted(r.spans.items())}})
        if not r.ok:
            bad += 1
            for v in r.violations:
                print(f"line {i}: {v}", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        man.add_output(args.out)
    _echo({"lines": len(report), "invalid": bad})
    return EXIT_INVALID if bad else EXIT_OK


def cmd_audit(args, cfg, man) -> int:
    from .persist import audit_log, audit_pair, load_checkpoint

    ckpts = [load_checkpoint(p) for p in args.checkpoints]
    for p in args.checkpoints:
        man.add_input(p)
    reports = [audit_log(c.audit) for c in ckpts]
    reports += [audit_pair(a, b) for a, b in zip(ckpts, ckpts[1:])]
    violations = [v for r in reports for v in r.violations]
    _echo({"phases": [e["phase"] for e in ckpts[-1].audit], "ok": not violations, "violations": violations})
    return EXIT_INVALID if violations else EXIT_OK


def cmd_stats(args, cfg, man) -> int:
    from .evalprobe.qa import corpus_token_stats, read_squad_dataset

    man.add_input(args.gold)
    stats = corpus_token_stats(read_squad_dataset(args.gold), args.profile)
    if args.out:
        Path(args.out).write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
        man.add_output(args.out)
    _echo(stats)
    return EXIT_OK


def cmd_run(args, cfg, man) -> int:
    from .pipelines import ExperimentSpec, run_experiment

    man.add_input(args.spec)
    spec = ExperimentSpec.load(args.spec)
    summary = run_experiment(spec, args.out, base_dir=Path(args.spec).parent)
    man.add_output(args.out)
    _echo(summary)
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON file with defaults for this subcommand")
    p.add_argument("--out", required=out_required)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xferlab", description="Monolingual-to-new-language transfer laboratory.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("vocab", help="learn subword vocabularies")
    _common(p)
    p.add_argument("--corpus", action="append", required=True, metavar="LANG=PATH")
    p.add_argument("--size", type=int)
    p.add_argument("--algorithm", choices=("unigram", "bpe"))
    p.add_argument("--mode", choices=("joint", "disjoint"), default="disjoint")
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("pretrain", help="step 1: MLM+NSP pretraining on L1")
    _common(p)
    _train_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--language", default="L1")
    p.add_argument("--algorithm", default="unigram", choices=("unigram", "bpe"))
    p.add_argument("--dev")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("transfer", help="step 2: learn L2 embeddings under a frozen body")
    _common(p)
    _train_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--language", default="L2")
    p.add_argument("--algorithm", default="unigram", choices=("unigram", "bpe"))
    p.add_argument("--dev")
    p.add_argument("--restarts", type=int)
    p.add_argument("--lang-pos", action="store_true", dest="lang_pos")
    p.add_argument("--adapters", type=int, nargs="?", const=0, default=None, metavar="SIZE")
    p.add_argument("--parallel", action="store_true")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("finetune", help="step 3: fine-tune on L1 task data")
    _common(p)
    _train_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True, help="TSV: label<TAB>text[<TAB>text_b]")
    p.add_argument("--epochs", type=int)
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="classification accuracy or QA F1/EM")
    _common(p, out_required=False)
    p.add_argument("--task", choices=("cls", "qa"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--language")
    p.add_argument("--pred")
    p.add_argument("--gold")
    p.add_argument("--profile", choices=("en", "whitespace", "char"), default="en")
    p.add_argument("--metrics", help="append JSON-lines metric records here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("joint", help="joint multilingual pretraining baseline")
    _common(p)
    _train_flags(p)
    p.add_argument("--corpus", action="append", required=True, metavar="LANG=PATH")
    p.add_argument("--mode", choices=("joint", "disjoint"), default="joint")
    p.add_argument("--size", type=int)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("clwe", help="skip-gram training and orthogonal mapping")
    _common(p)
    p.add_argument("action", choices=("train", "map"))
    p.add_argument("--corpus")
    p.add_argument("--language")
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--self-learning", action="store_true", dest="self_learning")
    p.add_argument("--iterations", type=int, default=20)
    p.set_defaults(func=cmd_clwe)

    p = sub.add_parser("probe", help="WiC, SCWS or minimal-pair probes on a frozen model")
    _common(p, out_required=False)
    p.add_argument("--kind", choices=("wic", "scws", "syntax"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--representation", choices=("cls", "target"), default="cls")
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("synth", help="generate synthetic L1/L2 corpora")
    _common(p)
    p.add_argument("--spec", help="JSON synthetic-language spec")
    p.add_argument("--transform", choices=("identity", "cipher", "cipher_reverse"))
    p.add_argument("--n", type=int, default=1000, help="number of sentences")
    p.add_argument("--task", type=int, default=0, help="also write N classification examples")
    p.add_argument("--pairs", type=int, default=0, help="also write N minimal pairs")
    p.add_argument("--l1-name", default="L1", dest="l1_name")
    p.add_argument("--l2-name", default="L2", dest="l2_name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-xlation", help="check placeholder markers in translated lines")
    _common(p, out_required=False)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.set_defaults(func=cmd_validate_xlation)

    p = sub.add_parser("audit", help="re-verify freeze discipline from checkpoints")
    _common(p, out_required=False)
    p.add_argument("checkpoints", nargs="+")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("stats", help="token statistics of a SQuAD-format file")
    _common(p, out_required=False)
    p.add_argument("--gold", required=True)
    p.add_argument("--profile", choices=("whitespace", "char"), default="whitespace")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("run", help="execute an experiment spec end to end")
    _common(p)
    p.add_argument("spec")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is None and args.command != "synth":
        args.seed = 0
    man = RunManifest(args.command, hashlib.sha256(json.dumps(argv).encode()).hexdigest())
    t0 = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        man.add_input(args.config)
        code = args.func(args, cfg, man)
    except (ConfigError, ContractError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, IntegrityError, InputError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as e:
        print(f"missing file: {e.filename}", file=sys.stderr)
        return EXIT_CONFIG
    man.timings["wall_seconds"] = round(time.perf_counter() - t0, 3)
    out = getattr(args, "out", None)
    if out and Path(out).exists():
        man.write(_manifest_path(Path(out)))
    return code


if __name__ == "__main__":
    sys.exit(main())
