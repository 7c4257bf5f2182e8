"""Teacher pretraining and student training with linguistic speech regularization.

Total student loss per step::

    L = L_tts + alpha * (R_gt + beta * R_pseudo)
    R = sum_i w_i * mean|h_student_i - h_teacher_i|   over linguistic elements

The teacher is frozen; its FP-removed representations are computed once per
training utterance and cached.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .acoustic import (
    Batch,
    IntermediateBundle,
    LinguisticIndex,
    ModelConfig,
    TTSLosses,
    UtteranceBundle,
    extract_batch,
    forward_batch,
    init_params,
    linguistic_index,
    make_batch,
    tts_loss,
    _pad,
)
from .corpus import CorpusManifest, Oracle, Utterance
from .numerics import Adam, ParameterStore, Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from .predictor import FPPredictor, PseudoEntry, argmax_insertion
from .text import NO_FP, AnnotatedSentence, FPLexicon, PhonemeSequence, distance_to_nearest_fp, to_phonemes
from .validation import MODULES, check_module_weights

NORM_CONVENTION = "mean-l1"
HISTORY_FIELDS = ("step", "mel_l1", "dur_mse", "pitch_mse", "energy_mse", "r_gt", "r_pseudo", "total")
PSEUDO_MODES = ("probabilistic", "random", "off")


class DivergenceError(RuntimeError):
    pass


class TeacherMutationError(AssertionError):
    pass


class CacheMismatchError(RuntimeError):
    pass


@dataclass
class RegularizationConfig:
    """Weights of the regularized objective.

    ``variance_source`` selects how pitch/energy enter the regularization
    passes: ``"predicted"`` uses each model's own predictions (durations stay
    forced so frames align), ``"forced"`` uses ground-truth values on
    linguistic phonemes.
    """

    alpha: float = 1.0
    beta: float = 4.0
    k: dict[str, float] = field(default_factory=lambda: {"energy": 1.0})
    l: dict[str, float] = field(default_factory=lambda: {"energy": 1.0})  # noqa: E741
    pseudo_mode: str = "probabilistic"
    variance_source: str = "predicted"
    decoder_output: str = "hidden"

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0 and math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("alpha and beta must be finite and >= 0")
        self.k = check_module_weights(self.k)
        self.l = check_module_weights(self.l)
        if self.pseudo_mode not in PSEUDO_MODES:
            raise ValueError(f"pseudo_mode must be one of {PSEUDO_MODES}")
        if self.variance_source not in ("predicted", "forced"):
            raise ValueError("variance_source must be 'predicted' or 'forced'")
        if self.decoder_output not in ("hidden", "mel"):
            raise ValueError("decoder_output must be 'hidden' or 'mel'")

    @property
    def uses_gt(self) -> bool:
        return self.alpha > 0 and any(v > 0 for v in self.k.values())

    @property
    def uses_pseudo(self) -> bool:
        return self.alpha > 0 and self.beta > 0 and self.pseudo_mode != "off" and any(v > 0 for v in self.l.values())

    def active_modules(self) -> list[str]:
        keys = set()
        if self.uses_gt:
            keys |= {m for m, v in self.k.items() if v > 0}
        if self.uses_pseudo:
            keys |= {m for m, v in self.l.items() if v > 0}
        return [m for m in MODULES if m in keys]

    def to_dict(self) -> dict:
        return asdict(self) | {"norm_convention": NORM_CONVENTION}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegularizationConfig":
        d = {k: v for k, v in d.items() if k != "norm_convention"}
        return cls(**d)


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# data preparation


@dataclass
class TrainingItem:
    uid: str
    speaker: int
    seq: PhonemeSequence
    nofp_seq: PhonemeSequence
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    mel: np.ndarray

    @property
    def linguistic(self) -> np.ndarray:
        return ~self.seq.fp_mask


def speaker_index(manifest: CorpusManifest) -> dict[str, int]:
    return {name: i for i, name in enumerate(sorted(manifest.speakers))}


def prepare_items(utterances: Iterable[Utterance], manifest: CorpusManifest) -> list[TrainingItem]:
    spk = speaker_index(manifest)
    items = []
    for u in utterances:
        nofp = to_phonemes(u.sentence.without_fp(), manifest.lexicon, manifest.pron_table)
        items.append(TrainingItem(u.uid, spk[u.speaker], u.phonemes, nofp, u.durations, u.pitch, u.energy, u.mel))
    if not items:
        raise ValueError("training split is empty")
    return items


def teacher_forced_batch(items: Sequence[TrainingItem]) -> Batch:
    return make_batch(
        [it.seq for it in items],
        [it.speaker for it in items],
        durations=[it.durations for it in items],
        pitch=[it.pitch for it in items],
        energy=[it.energy for it in items],
        mel=[it.mel for it in items],
    )


def _variance_override(values: np.ndarray, keep: np.ndarray, source: str) -> np.ndarray:
    if source == "forced":
        return np.where(keep, values, np.nan)
    return np.full(values.shape, np.nan)


def regularization_batch(seqs, speakers, ling_durations, ling_pitch, ling_energy, source: str) -> Batch:
    """Batch for a regularization pass.

    Linguistic phonemes get the supplied durations; FP phonemes use predicted
    durations. Pitch/energy are predicted everywhere, or forced on linguistic
    phonemes when ``source == "forced"``.
    """
    durs, pitch, energy = [], [], []
    for seq, d, p, e in zip(seqs, ling_durations, ling_pitch, ling_energy):
        ling = ~seq.fp_mask
        dd = np.zeros(len(seq), dtype=np.int64)
        dd[ling] = d
        pp = np.full(len(seq), np.nan)
        pp[ling] = p
        ee = np.full(len(seq), np.nan)
        ee[ling] = e
        durs.append(dd)
        pitch.append(_variance_override(pp, ling, source))
        energy.append(_variance_override(ee, ling, source))
    return make_batch(seqs, speakers, durations=durs, pitch=pitch, energy=energy)


# regularization


def _module_view(bundle, name: str, decoder_output: str):
    if isinstance(bundle, Mapping):
        return bundle[name]
    return bundle.module(name, decoder_output)


def regularization_term(student, teacher, weights: Mapping[str, float], masks: Mapping[str, np.ndarray] | None = None,
                        decoder_output: str = "hidden") -> Tensor:
    """``sum_i w_i * mean|student_i - teacher_i|`` over the weighted modules.

    Both sides must already be restricted to linguistic elements. ``student``
    and ``teacher`` are mappings from module name to array/Tensor, or bundles
    exposing ``module(name)``. Gradients flow into ``student`` only.
    """
    weights = check_module_weights(weights)
    total = Tensor(0.0)
    for name in MODULES:
        w = weights.get(name, 0.0)
        if w == 0.0:
            continue
        s = _module_view(student, name, decoder_output)
        t = _module_view(teacher, name, decoder_output)
        s = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=np.float64))
        t_val = t.value if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        if s.shape != t_val.shape:
            raise ops.DimensionError(f"regularization_term[{name}]: student {s.shape} vs teacher {t_val.shape}")
        mask = None if masks is None else masks.get(name)
        total = ops.add(total, ops.mul(ops.l1_loss(s, t_val, mask), w))
    return total


# teacher cache


@dataclass
class TeacherCache:
    """FP-removed teacher representations per utterance id (linguistic elements only)."""

    teacher_digest: str
    modules: tuple[str, ...]
    variance_source: str
    decoder_output: str
    entries: dict[str, dict[str, np.ndarray]]
    hits: int = 0
    misses: int = 0

    def get(self, uid: str, teacher_digest: str) -> dict[str, np.ndarray]:
        if teacher_digest != self.teacher_digest:
            raise CacheMismatchError("teacher parameters changed since the cache was built")
        try:
            out = self.entries[uid]
        except KeyError:
            self.misses += 1
            raise
        self.hits += 1
        return out

    def n_values(self) -> int:
        return int(sum(a.size for e in self.entries.values() for a in e.values()))


def teacher_nofp_bundle(teacher: ParameterStore, config: ModelConfig, items: Sequence[TrainingItem],
                        variance_source: str = "predicted") -> IntermediateBundle:
    ling = [it.linguistic for it in items]
    batch = regularization_batch(
        [it.nofp_seq for it in items],
        [it.speaker for it in items],
        [it.durations[m] for it, m in zip(items, ling)],
        [it.pitch[m] for it, m in zip(items, ling)],
        [it.energy[m] for it, m in zip(items, ling)],
        variance_source,
    )
    with no_grad():
        return forward_batch(teacher, config, batch)


def cache_teacher_bundles(teacher: ParameterStore, config: ModelConfig, items: Sequence[TrainingItem],
                          modules: Sequence[str], variance_source: str = "predicted",
                          decoder_output: str = "hidden", chunk: int = 16) -> TeacherCache:
    modules = tuple(m for m in MODULES if m in modules)
    entries: dict[str, dict[str, np.ndarray]] = {}
    for start in range(0, len(items), chunk):
        part = items[start : start + chunk]
        bundle = teacher_nofp_bundle(teacher, config, part, variance_source)
        for b, it in enumerate(part):
            n = len(it.nofp_seq)
            f = int(bundle.frame_mask[b].sum())
            e = {}
            for m in modules:
                rep = bundle.module(m, decoder_output).value
                e[m] = rep[b, :f].copy() if m == "decoder" else rep[b, :n].copy()
            entries[it.uid] = e
    return TeacherCache(teacher.digest(), modules, variance_source, decoder_output, entries)


def _padded_targets(cached: Sequence[dict[str, np.ndarray]], modules: Sequence[str]) -> dict[str, np.ndarray]:
    return {m: _pad([c[m] for c in cached], 0.0, np.float64) for m in modules}


def _module_masks(index: LinguisticIndex, modules: Sequence[str]) -> dict[str, np.ndarray]:
    return {m: (index.frame_mask if m == "decoder" else index.phone_mask) for m in modules}


# training loops


@dataclass
class TrainResult:
    params: ParameterStore
    optimizer: Adam
    history: list[dict[str, float]]
    extra: dict = field(default_factory=dict)

    def save(self, path: str | os.PathLike, rng_state: Mapping | None = None) -> None:
        save_checkpoint(path, self.params, optimizer=self.optimizer, rng_state=rng_state,
                        step=self.optimizer.step_count, extra=self.extra)


def _check_finite(step: int, values: Mapping[str, float]) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise DivergenceError(f"non-finite loss at step {step}: {bad}")


def pretrain_teacher(items: Sequence[TrainingItem], model_config: ModelConfig, train: TrainConfig,
                     log_every: int = 0) -> TrainResult:
    """Plain teacher-forced training on FP-included data (no regularization)."""
    if not items:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(train.seed)
    params = init_params(model_config, train.seed)
    opt = Adam(lr=train.lr)
    history = []
    for step in range(train.steps):
        idx = rng.integers(0, len(items), size=train.batch_size)
        batch = teacher_forced_batch([items[i] for i in idx])
        params.zero_grad()
        losses = tts_loss(forward_batch(params, model_config, batch), batch)
        vals = losses.values()
        _check_finite(step, vals)
        losses.total.backward()
        opt.step(params)
        history.append(_history_row(step, vals, 0.0, 0.0, vals["tts_total"]))
        if log_every and step % log_every == 0:
            print(f"teacher step {step} total {vals['tts_total']:.4f} mel {vals['mel_l1']:.4f}", flush=True)
    extra = {
        "kind": "teacher",
        "model_config": model_config.to_dict(),
        "model_config_hash": model_config.digest(),
        "train_config": train.to_dict(),
        "optimizer": {"name": "adam", "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
    }
    return TrainResult(params, opt, history, extra)


def _history_row(step, vals, r_gt, r_ps, total) -> dict[str, float]:
    return {
        "step": step,
        "mel_l1": vals["mel_l1"],
        "dur_mse": vals["dur_mse"],
        "pitch_mse": vals["pitch_mse"],
        "energy_mse": vals["energy_mse"],
        "r_gt": r_gt,
        "r_pseudo": r_ps,
        "total": total,
    }


@dataclass
class PreparedPseudo:
    source: int  # index into the training items
    seq: PhonemeSequence


def prepare_bank(bank: Sequence[PseudoEntry], items: Sequence[TrainingItem], lexicon: FPLexicon,
                 pron_table: Mapping[str, Sequence[str]]) -> list[PreparedPseudo]:
    by_uid = {it.uid: i for i, it in enumerate(items)}
    out = []
    for e in bank:
        if e.source_id not in by_uid:
            raise KeyError(f"pseudo entry source {e.source_id!r} is not a training utterance")
        seq = to_phonemes(e.sentence, lexicon, pron_table)
        src = items[by_uid[e.source_id]]
        if not np.array_equal(seq.phonemes[~seq.fp_mask], src.nofp_seq.phonemes):
            raise ValueError(f"pseudo entry text differs from source {e.source_id!r} after FP removal")
        out.append(PreparedPseudo(by_uid[e.source_id], seq))
    return out


@dataclass
class StudentObjective:
    losses: TTSLosses
    total: Tensor
    r_gt: float
    r_pseudo: float


def student_objective(params: ParameterStore, model_config: ModelConfig, chosen: Sequence[TrainingItem],
                      picks: Sequence[PreparedPseudo], items: Sequence[TrainingItem], reg: RegularizationConfig,
                      cache: TeacherCache | None, teacher_digest: str) -> StudentObjective:
    """One step's ``L_tts + alpha * (R_gt + beta * R_pseudo)`` for a drawn batch and pseudo picks."""
    batch = teacher_forced_batch(chosen)
    losses = tts_loss(forward_batch(params, model_config, batch), batch)
    total = losses.total
    r_gt_val = r_ps_val = 0.0

    if reg.uses_gt:
        k_modules = [m for m in MODULES if reg.k.get(m, 0) > 0]
        ling = [it.linguistic for it in chosen]
        rb = regularization_batch(
            [it.seq for it in chosen], [it.speaker for it in chosen],
            [it.durations[m] for it, m in zip(chosen, ling)],
            [it.pitch[m] for it, m in zip(chosen, ling)],
            [it.energy[m] for it, m in zip(chosen, ling)],
            reg.variance_source,
        )
        sb = forward_batch(params, model_config, rb, decode_frames="decoder" in k_modules)
        index = linguistic_index([it.seq.fp_mask for it in chosen], list(sb.durations_used))
        student_ling = extract_batch(sb, index, k_modules, reg.decoder_output)
        targets = _padded_targets([cache.get(it.uid, teacher_digest) for it in chosen], k_modules)
        r_gt = regularization_term(student_ling, targets, reg.k, _module_masks(index, k_modules))
        r_gt_val = float(r_gt.value)
        total = ops.add(total, ops.mul(r_gt, reg.alpha))

    if reg.uses_pseudo:
        l_modules = [m for m in MODULES if reg.l.get(m, 0) > 0]
        sources = [items[p.source] for p in picks]
        rb = regularization_batch(
            [p.seq for p in picks], [s.speaker for s in sources],
            [s.durations[s.linguistic] for s in sources],
            [s.pitch[s.linguistic] for s in sources],
            [s.energy[s.linguistic] for s in sources],
            reg.variance_source,
        )
        pb = forward_batch(params, model_config, rb, decode_frames="decoder" in l_modules)
        index = linguistic_index([p.seq.fp_mask for p in picks], list(pb.durations_used))
        student_ling = extract_batch(pb, index, l_modules, reg.decoder_output)
        targets = _padded_targets([cache.get(s.uid, teacher_digest) for s in sources], l_modules)
        r_ps = regularization_term(student_ling, targets, reg.l, _module_masks(index, l_modules))
        r_ps_val = float(r_ps.value)
        total = ops.add(total, ops.mul(r_ps, reg.alpha * reg.beta))
    return StudentObjective(losses, total, r_gt_val, r_ps_val)


def train_student(teacher: ParameterStore, model_config: ModelConfig, items: Sequence[TrainingItem],
                  reg: RegularizationConfig, train: TrainConfig, bank: Sequence[PreparedPseudo] = (),
                  cache: TeacherCache | None = None, log_every: int = 0) -> TrainResult:
    """Train a student initialised from ``teacher`` with the regularized objective."""
    if reg.uses_pseudo and not bank:
        raise ValueError("pseudo regularization enabled but the pseudo bank is empty")
    frozen = teacher.frozen()
    teacher_digest = frozen.digest()
    params = teacher.copy()
    opt = Adam(lr=train.lr)
    batch_rng = np.random.default_rng(train.seed)
    pseudo_rng = np.random.default_rng([train.seed, 1])
    modules = reg.active_modules()
    if modules and cache is None:
        cache = cache_teacher_bundles(frozen, model_config, items, modules, reg.variance_source, reg.decoder_output)
    if cache is not None and modules:
        missing = set(modules) - set(cache.modules)
        if missing or cache.variance_source != reg.variance_source or cache.decoder_output != reg.decoder_output:
            raise CacheMismatchError("teacher cache was built for a different regularization setup")

    history = []
    for step in range(train.steps):
        idx = batch_rng.integers(0, len(items), size=train.batch_size)
        chosen = [items[i] for i in idx]
        picks = []
        if reg.uses_pseudo:
            picks = [bank[int(j)] for j in pseudo_rng.integers(0, len(bank), size=train.batch_size)]
        params.zero_grad()
        obj = student_objective(params, model_config, chosen, picks, items, reg, cache, teacher_digest)
        losses, total, r_gt_val, r_ps_val = obj.losses, obj.total, obj.r_gt, obj.r_pseudo

        vals = losses.values()
        _check_finite(step, vals | {"r_gt": r_gt_val, "r_pseudo": r_ps_val, "total": float(total.value)})
        total.backward()
        opt.step(params)
        history.append(_history_row(step, vals, r_gt_val, r_ps_val, float(total.value)))
        if log_every and step % log_every == 0:
            print(f"student step {step} total {float(total.value):.4f} r_gt {r_gt_val:.4f} r_ps {r_ps_val:.4f}", flush=True)

    if frozen.digest() != teacher_digest or teacher.digest() != teacher_digest:
        raise TeacherMutationError("teacher parameters changed during student training")
    extra = {
        "kind": "student",
        "model_config": model_config.to_dict(),
        "model_config_hash": model_config.digest(),
        "train_config": train.to_dict(),
        "reg_config": reg.to_dict(),
        "teacher_digest": teacher_digest,
        "init": "copy-of-teacher",
        "optimizer": {"name": "adam", "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
    }
    return TrainResult(params, opt, history, extra)


def write_history_csv(path: str | os.PathLike, history: Sequence[Mapping[str, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in HISTORY_FIELDS})


@dataclass
class LoadedModel:
    params: ParameterStore
    config: ModelConfig
    extra: dict


def load_model(path: str | os.PathLike) -> LoadedModel:
    ckpt = load_checkpoint(path)
    config = ModelConfig.from_dict(ckpt.extra["model_config"])
    if ckpt.extra.get("model_config_hash") != config.digest():
        raise CacheMismatchError(f"{path}: model config hash does not match stored config")
    return LoadedModel(ckpt.params, config, ckpt.extra)


# evaluation


CONDITIONS = ("NoFP", "TrueFP", "PredFP")


def condition_sentence(utt: Utterance, condition: str, predictor: FPPredictor | None) -> AnnotatedSentence:
    if condition == "NoFP":
        return utt.sentence.without_fp()
    if condition == "TrueFP":
        return utt.sentence
    if condition == "PredFP":
        if predictor is None:
            raise ValueError("PredFP needs an FP predictor")
        return argmax_insertion(predictor, utt.sentence.tokens)
    raise ValueError(f"unknown condition {condition!r}")


@dataclass
class EvalCase:
    uid: str
    speaker: int
    seq: PhonemeSequence
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    mel: np.ndarray


def ground_truth_case(utt: Utterance, condition: str, manifest: CorpusManifest, oracle: Oracle,
                      predictor: FPPredictor | None = None) -> EvalCase:
    """Reference features for ``utt`` under a synthesis condition.

    TrueFP uses the stored recording; other conditions re-render the
    condition's sentence with the utterance's oracle seed.
    """
    spk = speaker_index(manifest)[utt.speaker]
    sent = condition_sentence(utt, condition, predictor)
    if condition == "TrueFP" or sent == utt.sentence or (not sent.has_fp and not utt.sentence.has_fp):
        return EvalCase(utt.uid, spk, utt.phonemes, utt.durations, utt.pitch, utt.energy, utt.mel)
    seq, d, p, e, mel = oracle.render_sentence(sent, manifest.pron_table, utt.speaker, manifest.utterance_seed(utt.uid))
    return EvalCase(utt.uid, spk, seq, d, p, e, mel)


def _eval_forward(params: ParameterStore, config: ModelConfig, cases: Sequence[EvalCase]) -> IntermediateBundle:
    batch = make_batch([c.seq for c in cases], [c.speaker for c in cases], durations=[c.durations for c in cases])
    with no_grad():
        return forward_batch(params, config, batch)


def evaluate(params: ParameterStore, config: ModelConfig, utterances: Sequence[Utterance], manifest: CorpusManifest,
             conditions: Sequence[str] = ("NoFP", "TrueFP"), predictor: FPPredictor | None = None,
             chunk: int = 16) -> dict:
    """Objective metrics on linguistic elements per synthesis condition.

    Durations are forced to the reference so frames align; pitch and energy
    come from the model. Errors are pooled means over all linguistic
    elements, also broken down by FP distance (near = 1..2, far = the rest).
    """
    if not utterances:
        raise ValueError("evaluation split is empty")
    oracle = manifest.oracle()
    report: dict = {}
    for cond in conditions:
        acc = {g: {"mel_abs": 0.0, "mel_n": 0, "dur_abs": 0.0, "pitch_abs": 0.0, "energy_abs": 0.0, "ph_n": 0}
               for g in ("all", "near", "far")}
        cases = [ground_truth_case(u, cond, manifest, oracle, predictor) for u in utterances]
        for start in range(0, len(cases), chunk):
            part = cases[start : start + chunk]
            bundle = _eval_forward(params, config, part)
            for b, c in enumerate(part):
                n = len(c.seq)
                ling = ~c.seq.fp_mask
                dist = distance_to_nearest_fp(c.seq)
                near = ling & (dist >= 1) & (dist <= 2)
                groups = {"all": ling, "near": near, "far": ling & ~near}
                frame_owner = np.repeat(np.arange(n), c.durations)
                mel_err = np.abs(bundle.mel.value[b, : frame_owner.size] - c.mel).sum(axis=1)
                dur_err = np.abs(bundle.h_duration.value[b, :n] - np.log(c.durations))
                p_err = np.abs(bundle.h_pitch.value[b, :n] - c.pitch)
                e_err = np.abs(bundle.h_energy.value[b, :n] - c.energy)
                for g, sel in groups.items():
                    fsel = sel[frame_owner]
                    a = acc[g]
                    a["mel_abs"] += float(mel_err[fsel].sum())
                    a["mel_n"] += int(fsel.sum()) * c.mel.shape[1]
                    a["dur_abs"] += float(dur_err[sel].sum())
                    a["pitch_abs"] += float(p_err[sel].sum())
                    a["energy_abs"] += float(e_err[sel].sum())
                    a["ph_n"] += int(sel.sum())
        report[cond] = {
            g: {
                "mel_l1": a["mel_abs"] / a["mel_n"] if a["mel_n"] else float("nan"),
                "log_duration_mae": a["dur_abs"] / a["ph_n"] if a["ph_n"] else float("nan"),
                "pitch_mae": a["pitch_abs"] / a["ph_n"] if a["ph_n"] else float("nan"),
                "energy_mae": a["energy_abs"] / a["ph_n"] if a["ph_n"] else float("nan"),
                "n_phonemes": a["ph_n"],
                "n_frames": a["mel_n"] // max(1, config.n_mels),
            }
            for g, a in acc.items()
        }
    return report


def eval_loss(params: ParameterStore, config: ModelConfig, items: Sequence[TrainingItem], chunk: int = 16) -> float:
    """Teacher-forced total TTS loss averaged over ``items`` (fixed chunking)."""
    vals = []
    for start in range(0, len(items), chunk):
        batch = teacher_forced_batch(items[start : start + chunk])
        with no_grad():
            vals.append(float(tts_loss(forward_batch(params, config, batch), batch).total.value))
    return float(np.mean(vals))


__all__ = [
    "CONDITIONS",
    "NO_FP",
    "CacheMismatchError",
    "DivergenceError",
    "RegularizationConfig",
    "TeacherCache",
    "TeacherMutationError",
    "TrainConfig",
    "TrainResult",
    "UtteranceBundle",
    "cache_teacher_bundles",
    "evaluate",
    "load_model",
    "pretrain_teacher",
    "prepare_bank",
    "prepare_items",
    "regularization_term",
    "student_objective",
    "train_student",
]
