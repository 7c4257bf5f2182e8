"""Command-line entry point (``fpreg``).

Exit codes: 0 success, 2 config error, 3 upstream-artifact error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import compare_models, run_impact_analysis, write_comparison, write_report
from .corpus import CorpusError, generate_corpus, load_corpus
from .experiment import ArtifactError, ConfigError, ExperimentConfig, resolve_config, run_experiment
from .numerics import atomic_write_text
from .predictor import FPPredictor, TrainingError, build_pseudo_bank
from .synthesis import MODES, synthesize
from .training import (
    CacheMismatchError,
    DivergenceError,
    RegularizationConfig,
    TrainConfig,
    load_model,
    prepare_bank,
    prepare_items,
    pretrain_teacher,
    speaker_index,
    train_student,
    write_history_csv,
)
from .validation import MODULES

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_DIVERGENCE = 0, 2, 3, 4
PSEUDO_ALIASES = {"prob": "probabilistic", "probabilistic": "probabilistic", "random": "random", "off": "off"}


def _weights(items: list[str] | None) -> dict[str, float] | None:
    """``["energy=1.0", "pitch=0.5"]`` -> dict; ``None`` when not given."""
    if not items:
        return None
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"module weight {item!r} must look like name=value")
        try:
            out[name] = float(value)
        except ValueError as e:
            raise ConfigError(f"module weight {item!r}: {e}") from e
    return out


def _modules(text: str) -> list[str]:
    mods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in mods if m not in MODULES]
    if bad or not mods:
        raise ConfigError(f"unknown modules {bad or text!r}; choose from {','.join(MODULES)}")
    return mods


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ArtifactError(f"missing {what}: {p}")
    return p


def _read_json(path: str | Path) -> dict:
    with open(_require(path, "config file"), encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e


# commands


def cmd_gen_corpus(args) -> int:
    overrides = {"n_train": args.n_train, "n_dev": args.n_dev, "n_test": args.n_test, "corpus.seed": args.seed}
    cfg = resolve_config(_read_json(args.config) if args.config else None, overrides)
    manifest = generate_corpus(cfg.corpus, args.out)
    print(f"wrote corpus to {args.out}: " + ", ".join(f"{k}={len(v)}" for k, v in manifest.splits.items()))
    return EXIT_OK


def cmd_train_fp_predictor(args) -> int:
    corpus = load_corpus(_require(args.corpus, "corpus"))
    sentences = [u.sentence for u in corpus.iter_split("train")]
    model = FPPredictor(n_iter=args.n_iter, random_state=args.seed, lexicon=corpus.lexicon).fit(sentences)
    model.save(args.out)
    if corpus.manifest.splits.get("dev"):
        print(f"dev slot accuracy {model.score([u.sentence for u in corpus.iter_split('dev')]):.4f}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    cfg = resolve_config(_read_json(args.config) if args.config else None)
    corpus = load_corpus(_require(args.corpus, "corpus"))
    items = prepare_items(corpus.load_split("train"), corpus.manifest)
    train = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    res = pretrain_teacher(items, cfg.model, train, log_every=args.log_every)
    res.save(args.out)
    write_history_csv(args.history or Path(args.out).with_suffix(".history.csv"), res.history)
    return EXIT_OK


def cmd_train_student(args) -> int:
    try:
        reg = RegularizationConfig(alpha=args.alpha, beta=args.beta,
                                   k=_weights(args.k) or {"energy": 1.0}, l=_weights(args.l) or {"energy": 1.0},
                                   pseudo_mode=PSEUDO_ALIASES[args.pseudo], variance_source=args.variance_source,
                                   decoder_output=args.decoder_output)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    corpus = load_corpus(_require(args.corpus, "corpus"))
    teacher = load_model(_require(args.teacher, "teacher checkpoint"))
    train_utts = corpus.load_split("train")
    items = prepare_items(train_utts, corpus.manifest)
    bank = ()
    if reg.uses_pseudo:
        predictor = None
        if reg.pseudo_mode == "probabilistic":
            if not args.predictor:
                raise ArtifactError("--pseudo prob needs --predictor <fp predictor checkpoint>")
            predictor = FPPredictor.load(_require(args.predictor, "FP predictor"))
        raw = build_pseudo_bank(predictor, [(u.uid, u.sentence.tokens) for u in train_utts], args.bank_size,
                                np.random.default_rng([args.seed, 2]), reg.pseudo_mode, corpus.lexicon)
        bank = prepare_bank(raw, items, corpus.lexicon, corpus.pron_table)
    train = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    res = train_student(teacher.params, teacher.config, items, reg, train, bank, log_every=args.log_every)
    res.save(args.out)
    write_history_csv(args.history or Path(args.out).with_suffix(".history.csv"), res.history)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    corpus = load_corpus(_require(args.corpus, "corpus"))
    model = load_model(_require(args.model, "model checkpoint"))
    predictor = FPPredictor.load(_require(args.predictor, "FP predictor")) if args.predictor else None
    if args.mode == "PredFP" and predictor is None:
        raise ArtifactError("--mode PredFP needs --predictor")
    spk = speaker_index(corpus.manifest)
    lines = []
    for i, u in enumerate(corpus.iter_split(args.split)):
        if args.limit is not None and i >= args.limit:
            break
        mel, bundle, text = synthesize(model.params, model.config, u.sentence, args.mode, corpus.lexicon,
                                       corpus.pron_table, predictor, spk[u.speaker])
        lines.append(json.dumps({
            "uid": u.uid, "mode": args.mode, "tokens": list(text.tokens),
            "insertions": {str(k): v for k, v in sorted(text.insertions.items())},
            "durations": bundle.durations_used.tolist(), "mel": np.round(mel, 6).tolist(),
        }, sort_keys=True))
    atomic_write_text(args.out, "".join(line + "\n" for line in lines))
    print(f"synthesized {len(lines)} utterances ({args.mode}) to {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    corpus = load_corpus(_require(args.corpus, "corpus"))
    model = load_model(_require(args.model, "model checkpoint"))
    modules = _modules(args.modules)
    result = run_impact_analysis(model.params, model.config, corpus.load_split(args.split), corpus.manifest, modules,
                                 args.speaker, args.decoder_output)
    write_report(args.out, result, modules)
    print(f"{len(result.records)} records written to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    corpus = load_corpus(_require(args.corpus, "corpus"))
    conv = load_model(_require(args.conventional, "conventional checkpoint"))
    prop = load_model(_require(args.proposed, "proposed checkpoint"))
    if conv.config != prop.config:
        raise ArtifactError("the two checkpoints were trained with different model configs")
    modules = _modules(args.modules)
    rows = compare_models((conv.params, conv.config), (prop.params, prop.config), corpus.load_split(args.split),
                          corpus.manifest, modules, args.speaker)
    write_comparison(args.out, rows)
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    overrides = {
        "alpha": args.alpha, "beta": args.beta, "k": _weights(args.k), "l": _weights(args.l),
        "pseudo": PSEUDO_ALIASES[args.pseudo] if args.pseudo else None,
        "teacher_steps": args.teacher_steps, "student_steps": args.student_steps, "bank_size": args.bank_size,
        "n_train": args.n_train, "n_dev": args.n_dev, "n_test": args.n_test,
    }
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r} must look like key=value")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    cfg = resolve_config(_read_json(args.config) if args.config else None, overrides, args.seed_bundle)
    pipe = run_experiment(cfg, args.outdir, log=lambda m: print(m, flush=True))
    print(f"outputs in {pipe.root}")
    return EXIT_OK


# parser


def _add_train_args(p, steps: int, seed: int) -> None:
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--history", help="loss history CSV (default: next to --out)")
    p.add_argument("--log-every", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    defaults = ExperimentConfig()
    ap = argparse.ArgumentParser(prog="fpreg", description="FP-aware TTS regularization experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-dev", type=int)
    p.add_argument("--n-test", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-fp-predictor", help="fit the FP word predictor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-iter", type=int, default=400)
    p.set_defaults(func=cmd_train_fp_predictor)

    p = sub.add_parser("train-teacher", help="pre-train the teacher on FP-included data")
    _add_train_args(p, defaults.teacher_steps, 0)
    p.add_argument("--config", help="experiment config (model section is used)")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="train a regularized student from a teacher")
    _add_train_args(p, defaults.student_steps, 1)
    p.add_argument("--teacher", required=True)
    p.add_argument("--predictor")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--k", action="append", metavar="MODULE=W")
    p.add_argument("--l", action="append", metavar="MODULE=W")
    p.add_argument("--pseudo", choices=sorted(PSEUDO_ALIASES), default="prob")
    p.add_argument("--bank-size", type=int, default=128)
    p.add_argument("--variance-source", choices=("predicted", "forced"), default="predicted")
    p.add_argument("--decoder-output", choices=("hidden", "mel"), default="hidden")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("synthesize", help="inference under NoFP / TrueFP / PredFP")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--predictor")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("analyze", help="isolated FP impact analysis")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--modules", default=",".join(MODULES))
    p.add_argument("--speaker", default="A")
    p.add_argument("--decoder-output", choices=("hidden", "mel"), default="hidden")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="side-by-side analysis of two students")
    p.add_argument("--conventional", required=True)
    p.add_argument("--proposed", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--modules", default=",".join(MODULES))
    p.add_argument("--speaker", default="A")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("run-experiment", help="full staged pipeline")
    p.add_argument("--config")
    p.add_argument("--seed-bundle", type=int)
    p.add_argument("--outdir", default="runs")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--k", action="append", metavar="MODULE=W")
    p.add_argument("--l", action="append", metavar="MODULE=W")
    p.add_argument("--pseudo", choices=sorted(PSEUDO_ALIASES))
    p.add_argument("--teacher-steps", type=int)
    p.add_argument("--student-steps", type=int)
    p.add_argument("--bank-size", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-dev", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--set", action="append", metavar="DOTTED.KEY=JSON", help="any other config field")
    p.set_defaults(func=cmd_run_experiment)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TrainingError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactError, CorpusError, CacheMismatchError, FileNotFoundError) as e:
        print(f"artifact error: {e}", file=sys.stderr)
        return EXIT_ARTIFACT
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
