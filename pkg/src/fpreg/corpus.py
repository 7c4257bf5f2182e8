"""Synthetic FP-annotated speech-feature corpus.

The oracle renders per-phoneme durations, pitch and energy plus a mel
matrix from fixed per-phoneme templates. Linguistic phonemes one or two
positions away from an FP get an FP-word-dependent pitch/energy offset, so
inserting an FP measurably perturbs neighbouring prosody.

Noise for linguistic phonemes is drawn from its own stream indexed by
linguistic position, so rendering a sentence with and without FPs under the
same seed differs only by the FP effect.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .text import (
    FP_PHONEMES,
    LINGUISTIC_PHONEMES,
    PHONEME_ID,
    PHONEMES,
    AnnotatedSentence,
    FPLexicon,
    PhonemeSequence,
    default_lexicon,
    distance_to_nearest_fp,
    to_phonemes,
)

SCHEMA_VERSION = 1
SPLITS = ("train", "dev", "test")
DECIMALS = 6

NORMALIZATION_NOTE = (
    "pitch and energy are per-phoneme values in standard units (zero-mean, unit-scale "
    "phoneme bases plus speaker shift); durations are frame counts; mel rows are "
    "phoneme spectral templates plus speaker bias plus gaussian noise; all stored "
    f"values rounded to {DECIMALS} decimals"
)


class CorpusError(Exception):
    pass


class SchemaVersionError(CorpusError):
    pass


class ChecksumError(CorpusError):
    pass


@dataclass(frozen=True)
class SpeakerParams:
    name: str
    duration_scale: float
    pitch_shift: float
    energy_shift: float
    mel_bias: tuple[float, ...]

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpeakerParams":
        return cls(d["name"], d["duration_scale"], d["pitch_shift"], d["energy_shift"], tuple(d["mel_bias"]))


@dataclass
class CorpusConfig:
    n_train: int = 500
    n_dev: int = 50
    n_test: int = 97
    seed: int = 0
    vocab_size: int = 60
    n_triggers: int = 6
    min_tokens: int = 4
    max_tokens: int = 10
    fp_fraction: float = 0.6
    trigger_prob: float = 0.9
    zipf_exponent: float = 1.0
    n_mels: int = 20
    n_speakers: int = 2
    pitch_offsets: tuple[float, float] = (0.5, 0.25)
    energy_offsets: tuple[float, float] = (0.5, 0.25)
    prosody_noise: float = 0.1
    duration_noise: float = 0.5
    mel_noise: float = 0.1

    def __post_init__(self):
        if min(self.n_train, self.n_dev, self.n_test) < 0 or self.n_train == 0:
            raise ValueError("split sizes must be non-negative and n_train positive")
        if not 0.0 <= self.fp_fraction <= 1.0:
            raise ValueError("fp_fraction must lie in [0, 1]")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        if not 0 < self.n_triggers < self.vocab_size:
            raise ValueError("need 0 < n_triggers < vocab_size")
        if not 1 <= self.n_speakers <= 26:
            raise ValueError("n_speakers must be between 1 and 26")
        self.pitch_offsets = tuple(self.pitch_offsets)
        self.energy_offsets = tuple(self.energy_offsets)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pitch_offsets"] = list(self.pitch_offsets)
        d["energy_offsets"] = list(self.energy_offsets)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusConfig":
        return cls(**d)


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


@dataclass
class Utterance:
    uid: str
    speaker: str
    sentence: AnnotatedSentence
    phonemes: PhonemeSequence
    durations: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    mel: np.ndarray

    def __post_init__(self):
        n = len(self.phonemes)
        if self.durations.shape != (n,) or self.pitch.shape != (n,) or self.energy.shape != (n,):
            raise CorpusError(f"{self.uid}: per-phoneme arrays do not match {n} phonemes")
        if n and self.durations.min() < 1:
            raise CorpusError(f"{self.uid}: durations must be >= 1")
        if self.mel.ndim != 2 or self.mel.shape[0] != int(self.durations.sum()):
            raise CorpusError(f"{self.uid}: mel frames {self.mel.shape} != sum of durations")

    @property
    def n_frames(self) -> int:
        return int(self.mel.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.uid == other.uid
            and self.speaker == other.speaker
            and self.sentence == other.sentence
            and self.phonemes == other.phonemes
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("durations", "pitch", "energy", "mel")
            )
        )

    __hash__ = None


class Oracle:
    """Deterministic feature renderer standing in for recorded speech."""

    def __init__(self, config: CorpusConfig, lexicon: FPLexicon, speakers: Mapping[str, SpeakerParams]):
        self.config = config
        self.lexicon = lexicon
        self.speakers = dict(speakers)
        rng = np.random.default_rng([config.seed, 101])
        n_ph = len(PHONEMES)
        self.base_duration = rng.integers(2, 9, size=n_ph)
        self.base_pitch = rng.normal(0.0, 0.8, size=n_ph)
        self.base_energy = rng.normal(0.0, 0.8, size=n_ph)
        self.templates = rng.normal(0.0, 1.0, size=(n_ph, config.n_mels))
        n_fp = len(lexicon.fp_words)
        self.pitch_sign = rng.choice([-1.0, 1.0], size=n_fp)
        self.energy_sign = rng.choice([-1.0, 1.0], size=n_fp)

    def fp_offsets(self, seq: PhonemeSequence, fp_words: Mapping[int, str]) -> tuple[np.ndarray, np.ndarray]:
        """Per-phoneme pitch and energy offsets induced by neighbouring FPs."""
        n = len(seq)
        dist = distance_to_nearest_fp(seq)
        dp = np.zeros(n)
        de = np.zeros(n)
        fp_pos = np.flatnonzero(seq.fp_mask)
        for i in range(n):
            d = int(dist[i])
            if d not in (1, 2):
                continue
            j = fp_pos[np.argmin(np.abs(fp_pos - i))]  # nearest, left wins ties
            w = self.lexicon.index(fp_words[int(seq.fp_group[j])])
            dp[i] = self.pitch_sign[w] * self.config.pitch_offsets[d - 1]
            de[i] = self.energy_sign[w] * self.config.energy_offsets[d - 1]
        return dp, de

    def render(
        self,
        seq: PhonemeSequence,
        speaker: str,
        seed,
        fp_words: Mapping[int, str] | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (durations, pitch, energy, mel) for ``seq``.

        ``seed`` is any value accepted by :func:`numpy.random.default_rng`;
        ``fp_words`` maps each FP group slot to its word.
        """
        if len(seq) == 0:
            raise CorpusError("cannot render an empty phoneme sequence")
        if seq.phonemes.min() < 0 or seq.phonemes.max() >= len(PHONEMES):
            raise CorpusError("unknown phoneme id")
        cfg = self.config
        spk = self.speakers[speaker]
        seed_list = list(np.atleast_1d(seed))
        ling_rng = np.random.default_rng(seed_list + [0])
        fp_rng = np.random.default_rng(seed_list + [1])
        ling = ~seq.fp_mask
        n_ling, n_fp = int(ling.sum()), int(seq.fp_mask.sum())
        n = len(seq)

        noise = np.empty((3, n))
        noise[:, ling] = ling_rng.normal(size=(3, n_ling))
        noise[:, ~ling] = fp_rng.normal(size=(3, n_fp))

        ph = seq.phonemes
        durations = np.maximum(1, np.rint(self.base_duration[ph] * spk.duration_scale + cfg.duration_noise * noise[0]))
        durations = durations.astype(np.int64)
        pitch = self.base_pitch[ph] + spk.pitch_shift + cfg.prosody_noise * noise[1]
        energy = self.base_energy[ph] + spk.energy_shift + cfg.prosody_noise * noise[2]
        if n_fp:
            dp, de = self.fp_offsets(seq, fp_words or {})
            pitch = pitch + dp
            energy = energy + de

        frame_owner = np.repeat(np.arange(n), durations)
        frame_ling = ling[frame_owner]
        mel_noise = np.empty((frame_owner.size, cfg.n_mels))
        mel_noise[frame_ling] = ling_rng.normal(size=(int(frame_ling.sum()), cfg.n_mels))
        mel_noise[~frame_ling] = fp_rng.normal(size=(int((~frame_ling).sum()), cfg.n_mels))
        mel = self.templates[ph[frame_owner]] + np.asarray(spk.mel_bias) + cfg.mel_noise * mel_noise
        return (
            durations,
            np.round(pitch, DECIMALS),
            np.round(energy, DECIMALS),
            np.round(mel, DECIMALS),
        )

    def render_sentence(self, sentence: AnnotatedSentence, pron_table: Mapping[str, Sequence[str]],
                        speaker: str, seed) -> tuple[PhonemeSequence, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        seq = to_phonemes(sentence, self.lexicon, pron_table)
        return (seq, *self.render(seq, speaker, seed, sentence.insertions))


def oracle_synthesize(seq: PhonemeSequence, speaker: str, seed, oracle: Oracle,
                      fp_words: Mapping[int, str] | None = None):
    """Functional alias of :meth:`Oracle.render`."""
    return oracle.render(seq, speaker, seed, fp_words)


@dataclass
class CorpusManifest:
    lexicon: FPLexicon
    pron_table: dict[str, tuple[str, ...]]
    speakers: dict[str, SpeakerParams]
    splits: dict[str, list[str]]
    seed: int
    config: CorpusConfig
    trigger_tokens: tuple[str, ...] = ()
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        seen: set[str] = set()
        for name, ids in self.splits.items():
            dup = seen.intersection(ids)
            if dup:
                raise CorpusError(f"split {name} overlaps another split: {sorted(dup)[:3]}")
            seen.update(ids)

    def oracle(self) -> Oracle:
        return Oracle(self.config, self.lexicon, self.speakers)

    def utterance_seed(self, uid: str) -> list[int]:
        return [self.seed, 7, int(uid.removeprefix("utt"))]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "feature_dims": {"n_mels": self.config.n_mels, "n_phonemes": len(PHONEMES)},
            "phonemes": {"linguistic": list(LINGUISTIC_PHONEMES), "fp": list(FP_PHONEMES)},
            "lexicon": self.lexicon.to_dict(),
            "pron_table": {k: list(v) for k, v in self.pron_table.items()},
            "trigger_tokens": list(self.trigger_tokens),
            "speakers": {k: asdict(v) | {"mel_bias": list(v.mel_bias)} for k, v in self.speakers.items()},
            "splits": self.splits,
            "normalization": NORMALIZATION_NOTE,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusManifest":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(f"manifest schema {d.get('schema_version')!r}, expected {SCHEMA_VERSION}")
        return cls(
            lexicon=FPLexicon.from_dict(d["lexicon"]),
            pron_table={k: tuple(v) for k, v in d["pron_table"].items()},
            speakers={k: SpeakerParams.from_dict(v) for k, v in d["speakers"].items()},
            splits={k: list(v) for k, v in d["splits"].items()},
            seed=d["seed"],
            config=CorpusConfig.from_dict(d["config"]),
            trigger_tokens=tuple(d.get("trigger_tokens", ())),
            extra=dict(d.get("extra", {})),
        )


def build_inventory(config: CorpusConfig) -> tuple[FPLexicon, dict[str, tuple[str, ...]], tuple[str, ...],
                                                  dict[str, SpeakerParams]]:
    """Lexicon, pronunciation table, trigger tokens and speaker blocks for a config."""
    rng = np.random.default_rng([config.seed, 11])
    lexicon = default_lexicon(config.seed)
    pron: dict[str, tuple[str, ...]] = {}
    for i in range(config.vocab_size):
        n = int(rng.integers(1, 4))
        pron[f"w{i:02d}"] = tuple(LINGUISTIC_PHONEMES[j] for j in rng.integers(0, len(LINGUISTIC_PHONEMES), size=n))
    triggers = tuple(f"w{i:02d}" for i in range(config.n_triggers))
    speakers: dict[str, SpeakerParams] = {}
    presets = [(1.0, -0.3, 0.0), (1.15, 0.3, 0.2)]
    for s in range(config.n_speakers):
        name = chr(ord("A") + s)
        dscale, pshift, eshift = presets[s] if s < len(presets) else (1.0 + 0.1 * s, 0.1 * s, 0.0)
        bias = tuple(np.round(rng.normal(0.0, 0.2, size=config.n_mels), DECIMALS).tolist())
        speakers[name] = SpeakerParams(name, dscale, pshift, eshift, bias)
    return lexicon, pron, triggers, speakers


def sample_annotations(config: CorpusConfig, n: int, rng: np.random.Generator,
                       lexicon: FPLexicon | None = None) -> list[AnnotatedSentence]:
    """Draw ``n`` ground-truth FP-annotated sentences.

    A fraction ``fp_fraction`` of sentences are disfluent: they contain at least
    one trigger token, each trigger is followed by an FP with probability
    ``trigger_prob`` and at least one FP is guaranteed. FP words follow a
    Zipf distribution independent of context.
    """
    lexicon = lexicon or default_lexicon(config.seed)
    vocab = [f"w{i:02d}" for i in range(config.vocab_size)]
    plain = vocab[config.n_triggers :]
    triggers = vocab[: config.n_triggers]
    weights = zipf_weights(len(lexicon.fp_words), config.zipf_exponent)
    out = []
    for _ in range(n):
        length = int(rng.integers(config.min_tokens, config.max_tokens + 1))
        disfluent = rng.random() < config.fp_fraction
        if not disfluent:
            tokens = [plain[j] for j in rng.integers(0, len(plain), size=length)]
            out.append(AnnotatedSentence(tuple(tokens), {}, "ground-truth"))
            continue
        tokens = [vocab[j] for j in rng.integers(0, len(vocab), size=length)]
        trig_pos = [i for i, t in enumerate(tokens) if t in triggers]
        if not trig_pos:
            i = int(rng.integers(0, length))
            tokens[i] = triggers[int(rng.integers(0, len(triggers)))]
            trig_pos = [i]
        slots = [i + 1 for i in trig_pos if rng.random() < config.trigger_prob]
        if not slots:
            slots = [trig_pos[0] + 1]
        ins = {s: lexicon.fp_words[int(rng.choice(len(weights), p=weights))] for s in slots}
        out.append(AnnotatedSentence(tuple(tokens), ins, "ground-truth"))
    return out


# serialization


def _canonical(payload: Mapping) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def utterance_to_dict(utt: Utterance) -> dict:
    return {
        "id": utt.uid,
        "speaker": utt.speaker,
        "tokens": list(utt.sentence.tokens),
        "insertions": {str(k): v for k, v in utt.sentence.insertions.items()},
        "origin": utt.sentence.origin,
        "phonemes": utt.phonemes.names(),
        "fp_mask": utt.phonemes.fp_mask.astype(int).tolist(),
        "fp_group": utt.phonemes.fp_group.tolist(),
        "durations": utt.durations.tolist(),
        "pitch": utt.pitch.tolist(),
        "energy": utt.energy.tolist(),
        "mel": utt.mel.tolist(),
    }


def save_utterance(fh, utt: Utterance) -> None:
    payload = utterance_to_dict(utt)
    body = _canonical(payload)
    payload["crc32"] = f"{zlib.crc32(body.encode()):08x}"
    fh.write(_canonical(payload) + "\n")


def read_utterance(line: str) -> Utterance:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"unparseable utterance record: {exc}") from exc
    crc = payload.pop("crc32", None)
    expected = f"{zlib.crc32(_canonical(payload).encode()):08x}"
    if crc != expected:
        raise ChecksumError(f"checksum mismatch for record {payload.get('id')!r}: {crc} != {expected}")
    seq = PhonemeSequence(
        np.asarray([PHONEME_ID[p] for p in payload["phonemes"]], dtype=np.int64),
        np.asarray(payload["fp_mask"], dtype=bool),
        np.asarray(payload["fp_group"], dtype=np.int64),
    )
    n_mels = len(payload["mel"][0]) if payload["mel"] else 0
    return Utterance(
        uid=payload["id"],
        speaker=payload["speaker"],
        sentence=AnnotatedSentence(
            tuple(payload["tokens"]), {int(k): v for k, v in payload["insertions"].items()}, payload["origin"]
        ),
        phonemes=seq,
        durations=np.asarray(payload["durations"], dtype=np.int64),
        pitch=np.asarray(payload["pitch"], dtype=np.float64),
        energy=np.asarray(payload["energy"], dtype=np.float64),
        mel=np.asarray(payload["mel"], dtype=np.float64).reshape(-1, n_mels),
    )


def generate_corpus(config: CorpusConfig, out_dir: str | os.PathLike) -> CorpusManifest:
    """Render a full corpus to ``out_dir`` (manifest.json plus one JSONL per split)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lexicon, pron, triggers, speakers = build_inventory(config)
    text_rng = np.random.default_rng([config.seed, 23])
    sizes = {"train": config.n_train, "dev": config.n_dev, "test": config.n_test}
    total = sum(sizes.values())
    sentences = sample_annotations(config, total, text_rng, lexicon)
    speaker_names = sorted(speakers)
    speaker_of = [speaker_names[int(j)] for j in text_rng.integers(0, len(speaker_names), size=total)]

    splits: dict[str, list[str]] = {}
    manifest = CorpusManifest(lexicon, pron, speakers, {}, config.seed, config, triggers)
    oracle = manifest.oracle()
    idx = 0
    for split in SPLITS:
        ids = []
        tmp = out_dir / f".{split}.jsonl.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for _ in range(sizes[split]):
                uid = f"utt{idx:05d}"
                sent = sentences[idx]
                seq, dur, pitch, energy, mel = oracle.render_sentence(
                    sent, pron, speaker_of[idx], manifest.utterance_seed(uid)
                )
                save_utterance(fh, Utterance(uid, speaker_of[idx], sent, seq, dur, pitch, energy, mel))
                ids.append(uid)
                idx += 1
        os.replace(tmp, out_dir / f"{split}.jsonl")
        splits[split] = ids
    manifest.splits = splits
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=1, sort_keys=True)
    return manifest


class Corpus:
    """A corpus on disk; split files are streamed line by line."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        manifest_path = self.path / "manifest.json"
        if not manifest_path.exists():
            raise CorpusError(f"no manifest at {manifest_path}")
        with open(manifest_path, encoding="utf-8") as fh:
            self.manifest = CorpusManifest.from_dict(json.load(fh))
        for split, ids in self.manifest.splits.items():
            if ids and not (self.path / f"{split}.jsonl").exists():
                raise CorpusError(f"split file for {split!r} missing")

    def iter_split(self, split: str) -> Iterator[Utterance]:
        expected = self.manifest.splits.get(split)
        if expected is None:
            raise CorpusError(f"unknown split {split!r}")
        seen = 0
        with open(self.path / f"{split}.jsonl", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                utt = read_utterance(line)
                if seen >= len(expected) or utt.uid != expected[seen]:
                    raise CorpusError(f"{split}: record {utt.uid!r} not listed in manifest order")
                seen += 1
                yield utt
        if seen != len(expected):
            raise CorpusError(f"{split}: {seen} records on disk, manifest lists {len(expected)}")

    def load_split(self, split: str) -> list[Utterance]:
        return list(self.iter_split(split))

    @property
    def lexicon(self) -> FPLexicon:
        return self.manifest.lexicon

    @property
    def pron_table(self) -> dict[str, tuple[str, ...]]:
        return self.manifest.pron_table


def load_corpus(path: str | os.PathLike) -> Corpus:
    return Corpus(path)
