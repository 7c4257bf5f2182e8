"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .text import AnnotatedSentence, PhonemeSequence

MODULES = ("encoder", "duration", "pitch", "energy", "decoder")


class NotFittedError(AttributeError, ValueError):
    pass


def check_is_fitted(estimator, attributes: Iterable[str]) -> None:
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet (missing {', '.join(missing)}); call fit first"
        )


def check_sentence(x) -> AnnotatedSentence:
    if isinstance(x, AnnotatedSentence):
        return x
    if isinstance(x, str):
        raise TypeError("expected a token sequence, got a bare string")
    return AnnotatedSentence(tuple(x), {}, "none")


def check_sentences(X) -> list[AnnotatedSentence]:
    out = [check_sentence(x) for x in X]
    if not out:
        raise ValueError("expected at least one sentence")
    return out


def check_phoneme_sequence(seq: PhonemeSequence) -> PhonemeSequence:
    if not isinstance(seq, PhonemeSequence):
        raise TypeError(f"expected PhonemeSequence, got {type(seq).__name__}")
    if len(seq) == 0:
        raise ValueError("phoneme sequence is empty")
    if seq.fp_mask.shape != seq.phonemes.shape or seq.fp_group.shape != seq.phonemes.shape:
        raise ValueError("phoneme sequence arrays have inconsistent lengths")
    return seq


def check_durations(durations, n: int, name: str = "durations") -> np.ndarray:
    d = np.asarray(durations)
    if d.shape != (n,):
        raise ValueError(f"{name} has shape {d.shape}, expected ({n},)")
    if not np.issubdtype(d.dtype, np.integer):
        if not np.all(d == np.round(d)):
            raise ValueError(f"{name} must be integers")
        d = d.astype(np.int64)
    if n and d.min() < 1:
        raise ValueError(f"{name} must be >= 1, got minimum {d.min()}")
    return d.astype(np.int64)


def check_module_weights(weights: Mapping[str, float] | None) -> dict[str, float]:
    out = {}
    for k, v in (weights or {}).items():
        if k not in MODULES:
            raise ValueError(f"unknown module {k!r}; expected one of {MODULES}")
        v = float(v)
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"weight for {k!r} must be finite and >= 0, got {v}")
        out[k] = v
    return out
