"""Miniature FastSpeech-2-style acoustic model.

Encoder and decoder are stacks of residual conv blocks; the variance adaptor
runs duration, pitch and energy predictors at phoneme level in that order.
Pitch and energy enter the residual stream through bin embeddings that are
linearly interpolated between neighbouring bins, so the stream stays
differentiable in the predicted values.

All internals run on padded batches: arrays are (batch, time, ...) with a
boolean mask marking real positions. The single-utterance helpers at the
bottom wrap them for callers that work with one :class:`PhonemeSequence`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .numerics import ParameterStore, Tensor, no_grad, ops
from .text import PHONEMES, LinguisticIndexMap, PhonemeSequence, build_index_map
from .validation import MODULES, check_durations, check_phoneme_sequence


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    kernel_size: int = 3
    n_blocks: int = 2
    predictor_hidden: int = 32
    n_bins: int = 16
    pitch_range: tuple[float, float] = (-3.5, 3.5)
    energy_range: tuple[float, float] = (-3.5, 3.5)
    n_mels: int = 20
    n_phonemes: int = len(PHONEMES)
    n_speakers: int = 2
    bin_embed_std: float = 1.0

    def __post_init__(self):
        if min(self.dim, self.predictor_hidden, self.n_mels, self.n_phonemes, self.n_speakers, self.n_blocks) < 1:
            raise ValueError("model dimensions must be positive")
        if self.n_bins < 2:
            raise ValueError("need at least 2 bins")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        object.__setattr__(self, "pitch_range", tuple(self.pitch_range))
        object.__setattr__(self, "energy_range", tuple(self.energy_range))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pitch_range"] = list(self.pitch_range)
        d["energy_range"] = list(self.energy_range)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def init_params(config: ModelConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng(seed)
    d, h, k = config.dim, config.predictor_hidden, config.kernel_size
    p = ParameterStore()

    def conv(name, cin, cout):
        p.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(k * cin), size=(k, cin, cout)))
        p.add(f"{name}.b", np.zeros(cout))

    p.add("phone_emb", rng.normal(0.0, 1.0, size=(config.n_phonemes, d)))
    p.add("speaker_bias", np.zeros((config.n_speakers, d)))
    for stack in ("enc", "dec"):
        for i in range(config.n_blocks):
            conv(f"{stack}{i}.conv", d, d)
            p.add(f"{stack}{i}.ln.g", np.ones(d))
            p.add(f"{stack}{i}.ln.b", np.zeros(d))
    for name, bias in (("dur", np.log(5.0)), ("pitch", 0.0), ("energy", 0.0)):
        conv(f"{name}.conv1", d, h)
        conv(f"{name}.conv2", h, h)
        p.add(f"{name}.out.w", rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, 1)))
        p.add(f"{name}.out.b", np.array([bias]))
    p.add("pitch_emb", rng.normal(0.0, config.bin_embed_std, size=(config.n_bins, d)))
    p.add("energy_emb", rng.normal(0.0, config.bin_embed_std, size=(config.n_bins, d)))
    p.add("mel_out.w", rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, config.n_mels)))
    p.add("mel_out.b", np.zeros(config.n_mels))
    return p


# batching


@dataclass
class Batch:
    phonemes: np.ndarray  # (B, T) int
    mask: np.ndarray  # (B, T) bool
    fp_mask: np.ndarray  # (B, T) bool
    speakers: np.ndarray  # (B,) int
    durations: np.ndarray | None = None  # (B, T) int; <= 0 means "use prediction"
    pitch: np.ndarray | None = None  # (B, T); NaN means "use prediction"
    energy: np.ndarray | None = None
    mel: np.ndarray | None = None  # (B, F, n_mels)
    frame_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.phonemes.shape[0]


def _pad(arrays: Sequence[np.ndarray], fill, dtype) -> np.ndarray:
    t = max(a.shape[0] for a in arrays)
    tail = arrays[0].shape[1:]
    out = np.full((len(arrays), t) + tail, fill, dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out


def make_batch(seqs: Sequence[PhonemeSequence], speakers: Sequence[int], durations=None, pitch=None,
               energy=None, mel=None) -> Batch:
    """Pad a list of sequences (and optional per-utterance targets) into a :class:`Batch`."""
    lengths = [len(s) for s in seqs]
    mask = _pad([np.ones(n, dtype=bool) for n in lengths], False, bool)
    b = Batch(
        phonemes=_pad([s.phonemes for s in seqs], 0, np.int64),
        mask=mask,
        fp_mask=_pad([s.fp_mask for s in seqs], False, bool),
        speakers=np.asarray(speakers, dtype=np.int64),
    )
    if durations is not None:
        b.durations = _pad([np.asarray(d, dtype=np.int64) for d in durations], 1, np.int64)
    if pitch is not None:
        b.pitch = _pad([np.asarray(x, dtype=np.float64) for x in pitch], 0.0, np.float64)
    if energy is not None:
        b.energy = _pad([np.asarray(x, dtype=np.float64) for x in energy], 0.0, np.float64)
    if mel is not None:
        b.mel = _pad([np.asarray(m, dtype=np.float64) for m in mel], 0.0, np.float64)
        b.frame_mask = _pad([np.ones(m.shape[0], dtype=bool) for m in mel], False, bool)
    return b


# building blocks


def _masked(x: Tensor, mask: np.ndarray) -> Tensor:
    return ops.mul(x, mask[..., None].astype(np.float64))


def _block(params: ParameterStore, prefix: str, x: Tensor, mask: np.ndarray) -> Tensor:
    y = ops.relu(ops.conv1d(x, params[f"{prefix}.conv.w"], params[f"{prefix}.conv.b"]))
    y = ops.layer_norm(ops.add(x, y), params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    return _masked(y, mask)


def encode(params: ParameterStore, config: ModelConfig, batch: Batch) -> Tensor:
    x = ops.embedding(params["phone_emb"], batch.phonemes)
    spk = ops.embedding(params["speaker_bias"], batch.speakers)
    x = _masked(ops.add(x, ops.reshape(spk, (batch.size, 1, config.dim))), batch.mask)
    for i in range(config.n_blocks):
        x = _block(params, f"enc{i}", x, batch.mask)
    return x


def predict_scalar(params: ParameterStore, name: str, x: Tensor, mask: np.ndarray) -> Tensor:
    """Two conv+relu layers and a linear head: one real value per position."""
    h = _masked(ops.relu(ops.conv1d(x, params[f"{name}.conv1.w"], params[f"{name}.conv1.b"])), mask)
    h = _masked(ops.relu(ops.conv1d(h, params[f"{name}.conv2.w"], params[f"{name}.conv2.b"])), mask)
    out = ops.linear(h, params[f"{name}.out.w"], params[f"{name}.out.b"])
    return ops.mul(ops.reshape(out, mask.shape), mask.astype(np.float64))


def add_variance(params: ParameterStore, table: str, x: Tensor, values: Tensor, value_range, mask) -> Tensor:
    """Residual-added representation ``x + bin_embedding(values)``."""
    emb = ops.interp_embedding(params[table], values, *value_range)
    return _masked(ops.add(x, emb), mask)


def _select(prediction: Tensor, forced: np.ndarray | None) -> Tensor:
    if forced is None:
        return prediction
    use_forced = ~np.isnan(forced)
    if use_forced.all():
        return Tensor(forced)
    return ops.where_rows(use_forced, Tensor(np.nan_to_num(forced)), prediction)


def round_durations(log_durations: np.ndarray) -> np.ndarray:
    """exp, round half up, clamp to >= 1."""
    return np.maximum(1, np.floor(np.exp(log_durations) + 0.5)).astype(np.int64)


def resolve_durations(predicted_log: np.ndarray, forced: np.ndarray | None, mask: np.ndarray) -> np.ndarray:
    rounded = round_durations(predicted_log)
    if forced is None:
        d = rounded
    else:
        d = np.where(forced > 0, forced, rounded)
    return np.where(mask, d, 0).astype(np.int64)


def frame_layout(durations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame owning phoneme index and frame mask for padded (B, T) durations."""
    totals = durations.sum(axis=1)
    f = int(totals.max()) if totals.size else 0
    owner = np.zeros((durations.shape[0], f), dtype=np.int64)
    fmask = np.zeros((durations.shape[0], f), dtype=bool)
    for b in range(durations.shape[0]):
        o = np.repeat(np.arange(durations.shape[1]), durations[b])
        owner[b, : o.size] = o
        fmask[b, : o.size] = True
    return owner, fmask


def decode(params: ParameterStore, config: ModelConfig, frames: Tensor, frame_mask: np.ndarray) -> tuple[Tensor, Tensor]:
    h = frames
    for i in range(config.n_blocks):
        h = _block(params, f"dec{i}", h, frame_mask)
    mel = _masked(ops.linear(h, params["mel_out.w"], params["mel_out.b"]), frame_mask)
    return h, mel


@dataclass
class IntermediateBundle:
    """Per-module outputs. Arrays are padded (B, T, ...) unless produced by the single-utterance API."""

    h_encoder: Tensor
    h_duration: Tensor
    h_pitch: Tensor
    h_energy: Tensor
    h_pitch_resid: Tensor
    h_energy_resid: Tensor
    h_decoder: Tensor
    mel: Tensor
    durations_used: np.ndarray
    mask: np.ndarray
    frame_owner: np.ndarray
    frame_mask: np.ndarray

    def module(self, name: str, decoder_output: str = "hidden") -> Tensor:
        if name == "decoder":
            return self.mel if decoder_output == "mel" else self.h_decoder
        return {
            "encoder": self.h_encoder,
            "duration": self.h_duration,
            "pitch": self.h_pitch_resid,
            "energy": self.h_energy_resid,
        }[name]


def forward_batch(params: ParameterStore, config: ModelConfig, batch: Batch, *, decode_frames: bool = True) -> IntermediateBundle:
    """Run the full model on a padded batch.

    Where the batch carries durations/pitch/energy they are used in place of
    the predictions (teacher forcing); non-positive durations and NaN
    pitch/energy entries fall back to the prediction at that position.
    """
    h_enc = encode(params, config, batch)
    log_d = predict_scalar(params, "dur", h_enc, batch.mask)
    p_pred = predict_scalar(params, "pitch", h_enc, batch.mask)
    h_pitch = add_variance(params, "pitch_emb", h_enc, _select(p_pred, batch.pitch), config.pitch_range, batch.mask)
    e_pred = predict_scalar(params, "energy", h_pitch, batch.mask)
    h_energy = add_variance(params, "energy_emb", h_pitch, _select(e_pred, batch.energy), config.energy_range, batch.mask)

    durations = resolve_durations(log_d.value, batch.durations, batch.mask)
    owner, fmask = frame_layout(durations)
    if decode_frames:
        frames = _masked(ops.gather_rows(h_energy, owner), fmask)
        h_dec, mel = decode(params, config, frames, fmask)
    else:
        h_dec = mel = Tensor(np.zeros(owner.shape + (0,)))
    return IntermediateBundle(h_enc, log_d, p_pred, e_pred, h_pitch, h_energy, h_dec, mel, durations, batch.mask, owner, fmask)


@dataclass
class TTSLosses:
    mel_l1: Tensor
    duration_mse: Tensor
    pitch_mse: Tensor
    energy_mse: Tensor
    total: Tensor = field(init=False)

    def __post_init__(self):
        self.total = ops.add(ops.add(self.mel_l1, self.duration_mse), ops.add(self.pitch_mse, self.energy_mse))

    def values(self) -> dict[str, float]:
        return {
            "mel_l1": float(self.mel_l1.value),
            "dur_mse": float(self.duration_mse.value),
            "pitch_mse": float(self.pitch_mse.value),
            "energy_mse": float(self.energy_mse.value),
            "tts_total": float(self.total.value),
        }


def tts_loss(bundle: IntermediateBundle, batch: Batch) -> TTSLosses:
    """Mel L1, log-duration MSE, pitch MSE and energy MSE against teacher-forced targets."""
    if batch.mel is None or batch.durations is None or batch.pitch is None or batch.energy is None:
        raise ValueError("tts_loss needs mel, duration, pitch and energy targets")
    if bundle.mel.shape != batch.mel.shape:
        raise ops.DimensionError(f"tts_loss: predicted mel {bundle.mel.shape} vs target {batch.mel.shape}")
    log_target = np.log(np.maximum(batch.durations, 1)).astype(np.float64)
    return TTSLosses(
        ops.l1_loss(bundle.mel, batch.mel, batch.frame_mask),
        ops.mse_loss(bundle.h_duration, log_target, batch.mask),
        ops.mse_loss(bundle.h_pitch, batch.pitch, batch.mask),
        ops.mse_loss(bundle.h_energy, batch.energy, batch.mask),
    )


# linguistic extraction on batches


@dataclass
class LinguisticIndex:
    """Padded per-item linguistic positions at phoneme and frame level."""

    phone: np.ndarray
    phone_mask: np.ndarray
    frame: np.ndarray
    frame_mask: np.ndarray


def linguistic_index(fp_masks: Sequence[np.ndarray], durations: Sequence[np.ndarray]) -> LinguisticIndex:
    maps = [
        build_index_map(PhonemeSequence(np.zeros(len(m), np.int64), np.asarray(m, bool), np.full(len(m), -1))).with_frames(d)
        for m, d in zip(fp_masks, durations)
    ]
    phone = _pad([mp.phone_map for mp in maps] or [np.zeros(0, np.int64)], 0, np.int64)
    frame = _pad([mp.frame_map for mp in maps] or [np.zeros(0, np.int64)], 0, np.int64)
    return LinguisticIndex(
        phone,
        _pad([np.ones(len(mp.phone_map), bool) for mp in maps], False, bool),
        frame,
        _pad([np.ones(len(mp.frame_map), bool) for mp in maps], False, bool),
    )


def extract_batch(bundle: IntermediateBundle, index: LinguisticIndex, modules: Sequence[str],
                  decoder_output: str = "hidden") -> dict[str, Tensor]:
    out = {}
    for m in modules:
        rep = bundle.module(m, decoder_output)
        if m == "decoder":
            out[m] = ops.gather_rows(rep, index.frame)
        else:
            out[m] = ops.gather_rows(rep, index.phone)
    return out


# single-utterance API


@dataclass
class UtteranceBundle:
    """Numpy view of one utterance's module outputs."""

    h_encoder: np.ndarray
    h_duration: np.ndarray
    h_pitch: np.ndarray
    h_energy: np.ndarray
    h_pitch_resid: np.ndarray
    h_energy_resid: np.ndarray
    h_decoder: np.ndarray
    mel: np.ndarray
    durations_used: np.ndarray
    frame_ranges: np.ndarray

    PHONE_FIELDS = ("h_encoder", "h_duration", "h_pitch", "h_energy", "h_pitch_resid", "h_energy_resid", "durations_used")
    FRAME_FIELDS = ("h_decoder", "mel")

    def module(self, name: str, decoder_output: str = "hidden") -> np.ndarray:
        if name == "decoder":
            return self.mel if decoder_output == "mel" else self.h_decoder
        return {
            "encoder": self.h_encoder,
            "duration": self.h_duration,
            "pitch": self.h_pitch_resid,
            "energy": self.h_energy_resid,
        }[name]

    def equals(self, other: "UtteranceBundle") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self.PHONE_FIELDS + self.FRAME_FIELDS)


def unbatch(bundle: IntermediateBundle, b: int = 0) -> UtteranceBundle:
    n = int(bundle.mask[b].sum())
    f = int(bundle.frame_mask[b].sum())
    d = bundle.durations_used[b, :n]
    starts = np.concatenate([[0], np.cumsum(d)[:-1]]).astype(np.int64)
    return UtteranceBundle(
        h_encoder=bundle.h_encoder.value[b, :n].copy(),
        h_duration=bundle.h_duration.value[b, :n].copy(),
        h_pitch=bundle.h_pitch.value[b, :n].copy(),
        h_energy=bundle.h_energy.value[b, :n].copy(),
        h_pitch_resid=bundle.h_pitch_resid.value[b, :n].copy(),
        h_energy_resid=bundle.h_energy_resid.value[b, :n].copy(),
        h_decoder=bundle.h_decoder.value[b, :f].copy(),
        mel=bundle.mel.value[b, :f].copy(),
        durations_used=d.copy(),
        frame_ranges=np.stack([starts, starts + d], axis=1),
    )


def forward(params: ParameterStore, config: ModelConfig, seq: PhonemeSequence, teacher_forcing: Mapping | None = None,
            speaker: int = 0) -> tuple[np.ndarray, UtteranceBundle]:
    """Inference (or teacher-forced) pass on one utterance; returns (mel, bundle)."""
    check_phoneme_sequence(seq)
    tf = dict(teacher_forcing or {})
    n = len(seq)
    kwargs = {}
    if "durations" in tf and tf["durations"] is not None:
        kwargs["durations"] = [check_durations(tf["durations"], n, "forced durations")]
    for key in ("pitch", "energy"):
        if key in tf and tf[key] is not None:
            arr = np.asarray(tf[key], dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"forced {key} has shape {arr.shape}, expected ({n},)")
            kwargs[key] = [arr]
    batch = make_batch([seq], [speaker], **kwargs)
    with no_grad():
        bundle = unbatch(forward_batch(params, config, batch))
    return bundle.mel, bundle


def length_regulate(reps: np.ndarray, durations) -> tuple[np.ndarray, np.ndarray]:
    """Repeat row ``p`` of ``reps`` ``durations[p]`` times; also return [start, end) per phoneme."""
    reps = np.asarray(reps)
    d = check_durations(durations, reps.shape[0])
    ends = np.cumsum(d)
    starts = ends - d
    return np.repeat(reps, d, axis=0), np.stack([starts, ends], axis=1)


def extract_linguistic(bundle: UtteranceBundle, index_map: LinguisticIndexMap) -> UtteranceBundle:
    """Restrict a single-utterance bundle to linguistic phonemes and their frames."""
    n = bundle.h_encoder.shape[0]
    pm = np.asarray(index_map.phone_map, dtype=np.int64)
    if pm.size and (pm.max() >= n or pm.min() < 0 or np.any(np.diff(pm) <= 0)):
        raise ValueError(f"index map inconsistent with bundle of {n} phonemes")
    frames = np.concatenate([np.arange(*bundle.frame_ranges[p]) for p in pm]) if pm.size else np.zeros(0, np.int64)
    d = bundle.durations_used[pm]
    starts = np.concatenate([[0], np.cumsum(d)[:-1]]).astype(np.int64)
    return UtteranceBundle(
        h_encoder=bundle.h_encoder[pm],
        h_duration=bundle.h_duration[pm],
        h_pitch=bundle.h_pitch[pm],
        h_energy=bundle.h_energy[pm],
        h_pitch_resid=bundle.h_pitch_resid[pm],
        h_energy_resid=bundle.h_energy_resid[pm],
        h_decoder=bundle.h_decoder[frames],
        mel=bundle.mel[frames],
        durations_used=d,
        frame_ranges=np.stack([starts, starts + d], axis=1),
    )


def split_fp_linguistic_audio(mel: np.ndarray, durations, fp_mask) -> tuple[np.ndarray, np.ndarray]:
    """Partition mel frames into (FP frames, linguistic frames) using phoneme durations."""
    mel = np.asarray(mel)
    fp_mask = np.asarray(fp_mask, dtype=bool)
    d = check_durations(durations, fp_mask.shape[0])
    if int(d.sum()) != mel.shape[0]:
        raise ValueError(f"durations sum to {int(d.sum())} but mel has {mel.shape[0]} frames")
    frame_is_fp = np.repeat(fp_mask, d)
    return mel[frame_is_fp], mel[~frame_is_fp]


def module_names() -> tuple[str, ...]:
    return MODULES
