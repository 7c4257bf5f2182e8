"""Experiment configuration and the staged end-to-end pipeline.

Every stage writes ``<artifact>.stage.json`` next to its output holding a
stage hash (its own config slice plus the hashes of its upstream stages). A
stage is skipped when its output exists with a matching hash and nothing
upstream ran in the same invocation; a marker whose hash differs is fatal.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .acoustic import ModelConfig
from .analysis import compare_models, read_records_csv, run_impact_analysis, write_comparison, write_report
from .corpus import CorpusConfig, generate_corpus, load_corpus
from .numerics import atomic_write_text
from .predictor import FPPredictor, bank_from_json, bank_to_json, build_pseudo_bank
from .training import (
    RegularizationConfig,
    TrainConfig,
    evaluate,
    load_model,
    prepare_bank,
    prepare_items,
    pretrain_teacher,
    train_student,
    write_history_csv,
)
from .validation import MODULES


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (exit code 2)."""


class ArtifactError(RuntimeError):
    """Missing upstream artifact or stage-hash mismatch (exit code 3)."""


def canonical_hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


@dataclass
class SeedBundle:
    corpus: int = 0
    predictor: int = 0
    bank: int = 0
    teacher: int = 0
    student: int = 1
    analysis: int = 0

    @classmethod
    def from_base(cls, base: int) -> "SeedBundle":
        return cls(corpus=base, predictor=base + 1, bank=base + 2, teacher=base + 3, student=base + 4, analysis=base + 5)


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    proposed: RegularizationConfig = field(default_factory=RegularizationConfig)
    seeds: SeedBundle = field(default_factory=SeedBundle)
    teacher_steps: int = 20000
    student_steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-3
    bank_size: int = 128
    predictor_iter: int = 400
    analysis_modules: tuple[str, ...] = MODULES
    analysis_speaker: str = "A"
    analysis_split: str = "test"
    beta0_student: bool = True
    eval_conditions: tuple[str, ...] = ("NoFP", "TrueFP", "PredFP")

    def __post_init__(self):
        if self.teacher_steps < 0 or self.student_steps < 0 or self.batch_size < 1 or self.bank_size < 1:
            raise ConfigError("steps must be >= 0, batch_size and bank_size >= 1")
        bad = [m for m in self.analysis_modules if m not in MODULES]
        if bad:
            raise ConfigError(f"unknown analysis modules {bad}")
        self.analysis_modules = tuple(self.analysis_modules)
        self.eval_conditions = tuple(self.eval_conditions)

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus.to_dict(),
            "model": self.model.to_dict(),
            "proposed": self.proposed.to_dict(),
            "seeds": asdict(self.seeds),
            "teacher_steps": self.teacher_steps,
            "student_steps": self.student_steps,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "bank_size": self.bank_size,
            "predictor_iter": self.predictor_iter,
            "analysis_modules": list(self.analysis_modules),
            "analysis_speaker": self.analysis_speaker,
            "analysis_split": self.analysis_split,
            "beta0_student": self.beta0_student,
            "eval_conditions": list(self.eval_conditions),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            kw = {k: v for k, v in d.items() if k not in ("corpus", "model", "proposed", "seeds")}
            if "corpus" in d:
                kw["corpus"] = CorpusConfig.from_dict(_merge(CorpusConfig().to_dict(), d["corpus"]))
            if "model" in d:
                kw["model"] = ModelConfig.from_dict(_merge(ModelConfig().to_dict(), d["model"]))
            if "proposed" in d:
                kw["proposed"] = RegularizationConfig.from_dict(_merge(RegularizationConfig().to_dict(), d["proposed"]))
            if "seeds" in d:
                kw["seeds"] = SeedBundle(**_merge(asdict(SeedBundle()), d["seeds"]))
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def digest(self) -> str:
        return canonical_hash(self.to_dict())

    def train_config(self, steps: int, seed: int) -> TrainConfig:
        return TrainConfig(steps=steps, batch_size=self.batch_size, lr=self.lr, seed=seed)


def _merge(base: Mapping, override: Mapping) -> dict:
    if not isinstance(override, Mapping):
        raise ConfigError(f"expected an object, got {override!r}")
    unknown = set(override) - set(base)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    return dict(base) | dict(override)


def resolve_config(file_config: Mapping | None = None, overrides: Mapping | None = None,
                   seed_bundle: int | None = None) -> ExperimentConfig:
    """Defaults < file < seed bundle < flat CLI overrides.

    Override keys are dotted paths (``proposed.alpha``) or the short aliases
    in :data:`OVERRIDE_ALIASES`.
    """
    doc = ExperimentConfig().to_dict()
    if file_config:
        base = ExperimentConfig.from_dict(file_config).to_dict()
        doc = base
    if seed_bundle is not None:
        doc["seeds"] = asdict(SeedBundle.from_base(seed_bundle))
        doc["corpus"]["seed"] = seed_bundle
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        path = OVERRIDE_ALIASES.get(key, key).split(".")
        node = doc
        for p in path[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown override {key!r}")
            node = node[p]
        if path[-1] not in node:
            raise ConfigError(f"unknown override {key!r}")
        node[path[-1]] = value
    return ExperimentConfig.from_dict(doc)


OVERRIDE_ALIASES = {
    "alpha": "proposed.alpha",
    "beta": "proposed.beta",
    "k": "proposed.k",
    "l": "proposed.l",
    "pseudo": "proposed.pseudo_mode",
    "n_train": "corpus.n_train",
    "n_test": "corpus.n_test",
    "n_dev": "corpus.n_dev",
}


# stages


@dataclass
class StageLog:
    ran: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def _marker(path: Path) -> Path:
    return path.with_name(path.name + ".stage.json")


def _read_marker(path: Path) -> str | None:
    m = _marker(path)
    if not m.exists():
        return None
    with open(m, encoding="utf-8") as fh:
        return json.load(fh)["stage_hash"]


def _write_marker(path: Path, stage: str, stage_hash: str, config_hash: str) -> None:
    atomic_write_text(_marker(path), json.dumps({"stage": stage, "stage_hash": stage_hash, "config_hash": config_hash},
                                                sort_keys=True, indent=1))


class Pipeline:
    """Staged run of the full experiment under ``<outdir>/<config-hash>``."""

    def __init__(self, config: ExperimentConfig, outdir: str | os.PathLike, log: Callable[[str], None] | None = None):
        self.config = config
        self.config_hash = config.digest()
        self.root = Path(outdir) / self.config_hash
        self.corpus_dir = self.root / "corpus"
        self.models_dir = self.root / "models"
        self.reports_dir = self.root / "reports"
        self.log = log or (lambda msg: None)
        self.stages = StageLog()
        self._hashes: dict[str, str] = {}
        self._dirty: set[str] = set()

    def _stage(self, name: str, output: Path, payload, upstream: tuple[str, ...], build: Callable[[], None]) -> None:
        stage_hash = canonical_hash({"stage": name, "config": payload, "upstream": [self._hashes[u] for u in upstream]})
        self._hashes[name] = stage_hash
        existing = _read_marker(output)
        if existing is not None and existing != stage_hash:
            raise ArtifactError(
                f"stage {name!r}: {output} was produced with stage hash {existing}, current config gives {stage_hash}; "
                "remove the artifact or use a fresh output directory"
            )
        upstream_ran = any(u in self._dirty for u in upstream)
        if existing == stage_hash and output.exists() and not upstream_ran:
            self.stages.skipped.append(name)
            self.log(f"[skip] {name}")
            return
        self.log(f"[run] {name}")
        build()
        _write_marker(output, name, stage_hash, self.config_hash)
        self._dirty.add(name)
        self.stages.ran.append(name)

    def _load(self, path: Path):
        if not path.exists():
            raise ArtifactError(f"missing upstream artifact {path}")
        model = load_model(path)
        if model.extra.get("config_hash") != self.config_hash:
            raise ArtifactError(f"{path} belongs to config {model.extra.get('config_hash')}, expected {self.config_hash}")
        return model

    def run(self) -> StageLog:
        cfg = self.config
        self.root.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.root / "resolved_config.json",
                          json.dumps(cfg.to_dict() | {"config_hash": self.config_hash}, sort_keys=True, indent=1))
        manifest_path = self.corpus_dir / "manifest.json"
        self._stage("corpus", manifest_path, cfg.corpus.to_dict(), (),
                    lambda: generate_corpus(cfg.corpus, self.corpus_dir))

        corpus = load_corpus(self.corpus_dir)
        manifest = corpus.manifest
        train_utts = corpus.load_split("train")
        items = prepare_items(train_utts, manifest)

        pred_path = self.models_dir / "fp_predictor.json"

        def build_predictor():
            model = FPPredictor(n_iter=cfg.predictor_iter, random_state=cfg.seeds.predictor, lexicon=manifest.lexicon)
            model.fit([u.sentence for u in train_utts])
            model.save(pred_path)

        self.models_dir.mkdir(parents=True, exist_ok=True)
        self._stage("predictor", pred_path, {"seed": cfg.seeds.predictor, "n_iter": cfg.predictor_iter}, ("corpus",),
                    build_predictor)
        predictor = FPPredictor.load(pred_path)

        bank_path = self.models_dir / "pseudo_bank.json"

        def build_bank():
            base = [(u.uid, u.sentence.tokens) for u in train_utts]
            mode = cfg.proposed.pseudo_mode if cfg.proposed.pseudo_mode != "off" else "probabilistic"
            bank = build_pseudo_bank(predictor, base, cfg.bank_size, np.random.default_rng(cfg.seeds.bank), mode,
                                     manifest.lexicon)
            atomic_write_text(bank_path, json.dumps(bank_to_json(bank), indent=1))

        self._stage("bank", bank_path, {"seed": cfg.seeds.bank, "n": cfg.bank_size, "mode": cfg.proposed.pseudo_mode},
                    ("predictor",), build_bank)
        with open(bank_path, encoding="utf-8") as fh:
            prepared = prepare_bank(bank_from_json(json.load(fh)), items, manifest.lexicon, manifest.pron_table)

        teacher_path = self.models_dir / "teacher.json"
        teacher_train = cfg.train_config(cfg.teacher_steps, cfg.seeds.teacher)

        def build_teacher():
            res = pretrain_teacher(items, cfg.model, teacher_train)
            res.extra["config_hash"] = self.config_hash
            res.save(teacher_path)
            write_history_csv(self.models_dir / "teacher_history.csv", res.history)

        self._stage("teacher", teacher_path, {"model": cfg.model.to_dict(), "train": teacher_train.to_dict()},
                    ("corpus",), build_teacher)

        student_train = cfg.train_config(cfg.student_steps, cfg.seeds.student)
        variants = {"conventional": RegularizationConfig(alpha=0.0), "proposed": cfg.proposed}
        if cfg.beta0_student:
            variants["beta0"] = RegularizationConfig(**(asdict(cfg.proposed) | {"beta": 0.0}))
        for name, reg in variants.items():
            path = self.models_dir / f"student_{name}.json"

            def build_student(reg=reg, path=path, name=name):
                teacher = self._load(teacher_path)
                res = train_student(teacher.params, cfg.model, items, reg, student_train, prepared if reg.uses_pseudo else ())
                res.extra["config_hash"] = self.config_hash
                res.save(path)
                write_history_csv(self.models_dir / f"student_{name}_history.csv", res.history)

            self._stage(f"student_{name}", path, {"reg": reg.to_dict(), "train": student_train.to_dict()},
                        ("teacher", "bank"), build_student)

        test_utts = corpus.load_split(cfg.analysis_split)
        for name in ("conventional", "proposed"):
            out = self.reports_dir / name

            def build_analysis(name=name, out=out):
                model = self._load(self.models_dir / f"student_{name}.json")
                result = run_impact_analysis(model.params, model.config, test_utts, manifest, cfg.analysis_modules,
                                             cfg.analysis_speaker, cfg.proposed.decoder_output)
                write_report(out, result, cfg.analysis_modules)

            self._stage(f"analysis_{name}", out / "summary.json",
                        {"modules": list(cfg.analysis_modules), "speaker": cfg.analysis_speaker,
                         "split": cfg.analysis_split}, (f"student_{name}",), build_analysis)

        def build_comparison():
            conv = self._load(self.models_dir / "student_conventional.json")
            prop = self._load(self.models_dir / "student_proposed.json")
            rows = compare_models((conv.params, conv.config), (prop.params, prop.config), test_utts, manifest,
                                  cfg.analysis_modules, cfg.analysis_speaker,
                                  conv_records=read_records_csv(self.reports_dir / "conventional" / "records.csv"),
                                  prop_records=read_records_csv(self.reports_dir / "proposed" / "records.csv"))
            write_comparison(self.reports_dir, rows)

        self._stage("comparison", self.reports_dir / "comparison.json", {}, ("analysis_conventional", "analysis_proposed"),
                    build_comparison)

        metrics_path = self.reports_dir / "metrics.json"
        student_stages = tuple(f"student_{n}" for n in variants)

        def build_metrics():
            doc = {}
            for name in variants:
                model = self._load(self.models_dir / f"student_{name}.json")
                doc[name] = evaluate(model.params, model.config, test_utts, manifest, cfg.eval_conditions, predictor)
            atomic_write_text(metrics_path, json.dumps(doc, sort_keys=True, indent=1))

        self._stage("metrics", metrics_path, {"conditions": list(cfg.eval_conditions), "split": cfg.analysis_split},
                    student_stages + ("predictor",), build_metrics)
        return self.stages


def run_experiment(config: ExperimentConfig, outdir: str | os.PathLike,
                   log: Callable[[str], None] | None = None) -> Pipeline:
    pipe = Pipeline(config, outdir, log)
    pipe.run()
    return pipe
