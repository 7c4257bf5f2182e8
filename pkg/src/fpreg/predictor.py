"""FP word prediction: per-slot distribution over ``[None, fp01 .. fp13]``.

A multinomial logistic model over position-tagged context tokens. For slot
``s`` the window holds tokens ``s-w .. s+w-1``; offsets falling outside the
sentence fire boundary features instead.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .numerics import Adam, ParameterStore, atomic_write_text, ops
from .text import AnnotatedSentence, FPLexicon, default_lexicon
from .validation import check_is_fitted, check_sentence, check_sentences

UNK = "<unk>"
BOUNDARY = "<s>"


class TrainingError(RuntimeError):
    pass


class FPPredictor(BaseEstimator):
    """Per-slot FP word classifier.

    Parameters
    ----------
    window : int, default=2
        Context radius in tokens on each side of a slot.
    n_iter : int, default=400
        Full-batch Adam iterations.
    learning_rate : float, default=0.05
    l2 : float, default=1e-4
        Weight decay on the coefficient matrix (bias excluded).
    random_state : int, default=0
        Seeds the weight initialisation.
    lexicon : FPLexicon or None
        Defaults to :func:`fpreg.text.default_lexicon`.

    Attributes
    ----------
    classes_ : list of str
        ``[none_marker, fp01, ..., fp13]``.
    vocabulary_ : dict
        Token name to column index.
    coef_ : ndarray of shape (n_features, 14)
    intercept_ : ndarray of shape (14,)
    """

    def __init__(self, window=2, n_iter=400, learning_rate=0.05, l2=1e-4, random_state=0, lexicon=None):
        self.window = window
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.l2 = l2
        self.random_state = random_state
        self.lexicon = lexicon

    # features

    def _lexicon(self) -> FPLexicon:
        return self.lexicon if self.lexicon is not None else default_lexicon()

    def _slot_features(self, tokens: Sequence[str]) -> np.ndarray:
        """Active feature indices, shape (n_slots, 2 * window)."""
        w = self.window
        stride = len(self.vocabulary_)
        n = len(tokens)
        ids = [self.vocabulary_.get(t, self.vocabulary_[UNK]) for t in tokens]
        out = np.empty((n + 1, 2 * w), dtype=np.int64)
        for s in range(n + 1):
            for j, pos in enumerate(range(s - w, s + w)):
                tok = ids[pos] if 0 <= pos < n else self.vocabulary_[BOUNDARY]
                out[s, j] = j * stride + tok
        return out

    def _design(self, feats: np.ndarray) -> np.ndarray:
        x = np.zeros((feats.shape[0], self.n_features_))
        np.put_along_axis(x, feats, 1.0, axis=1)
        return x

    # fitting

    def fit(self, X, y=None):
        """Fit on ground-truth annotated sentences (labels come from their insertions)."""
        sentences = check_sentences(X)
        lexicon = self._lexicon()
        vocab = sorted({t for s in sentences for t in s.tokens})
        self.vocabulary_ = {t: i for i, t in enumerate([BOUNDARY, UNK] + vocab)}
        self.classes_ = [lexicon.none_marker] + list(lexicon.fp_words)
        self.n_features_ = 2 * self.window * len(self.vocabulary_)

        rows, labels = [], []
        for s in sentences:
            rows.append(self._slot_features(s.tokens))
            labels.extend(self._labels(s))
        if not labels:
            raise TrainingError("no slots to train on")
        feats = np.concatenate(rows)
        labels = np.asarray(labels, dtype=np.int64)
        if np.all(labels == 0):
            raise TrainingError("training data has no FP annotations")
        x = self._design(feats)

        rng = np.random.default_rng(self.random_state)
        params = ParameterStore(
            {"coef": rng.normal(0.0, 0.01, size=(self.n_features_, len(self.classes_))), "intercept": np.zeros(len(self.classes_))}
        )
        opt = Adam(lr=self.learning_rate)
        self.loss_curve_ = []
        for _ in range(self.n_iter):
            params.zero_grad()
            logits = ops.linear(x, params["coef"], params["intercept"])
            loss = ops.softmax_cross_entropy(logits, labels)
            if self.l2:
                loss = ops.add(loss, ops.mul(ops.sum(ops.mul(params["coef"], params["coef"])), self.l2))
            loss.backward()
            opt.step(params)
            self.loss_curve_.append(float(loss.value))
        self.coef_ = params["coef"].value.copy()
        self.intercept_ = params["intercept"].value.copy()
        return self

    def _labels(self, s: AnnotatedSentence) -> list[int]:
        lexicon = self._lexicon()
        return [0 if slot not in s.insertions else 1 + lexicon.index(s.insertions[slot]) for slot in range(s.n_slots)]

    # inference

    def predict_proba(self, tokens) -> np.ndarray:
        """Per-slot class probabilities for one sentence, shape (n_slots, 14)."""
        check_is_fitted(self, ["coef_"])
        s = check_sentence(tokens)
        if not s.tokens:
            raise ValueError("sentence is empty")
        feats = self._slot_features(s.tokens)
        logits = self.coef_[feats].sum(axis=1) + self.intercept_
        return ops.softmax(logits)

    def predict(self, tokens) -> AnnotatedSentence:
        return argmax_insertion(self, tokens)

    def sample(self, tokens, rng: np.random.Generator) -> AnnotatedSentence:
        return sample_insertion(self, tokens, rng)

    def score(self, X, y=None) -> float:
        """Slot-level top-1 accuracy against the sentences' own annotations."""
        sentences = check_sentences(X)
        hits = total = 0
        for s in sentences:
            pred = self.predict_proba(s.tokens).argmax(axis=1)
            gold = np.asarray(self._labels(s))
            hits += int((pred == gold).sum())
            total += gold.size
        return hits / total

    # persistence

    def to_dict(self) -> dict:
        check_is_fitted(self, ["coef_"])
        return {
            "kind": "fp-predictor",
            "params": self.get_params() | {"lexicon": self._lexicon().to_dict()},
            "classes": self.classes_,
            "vocabulary": self.vocabulary_,
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "seed": self.random_state,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FPPredictor":
        p = dict(d["params"])
        p["lexicon"] = FPLexicon.from_dict(p["lexicon"])
        model = cls(**p)
        model.classes_ = list(d["classes"])
        model.vocabulary_ = dict(d["vocabulary"])
        model.n_features_ = 2 * model.window * len(model.vocabulary_)
        model.coef_ = np.asarray(d["coef"], dtype=np.float64)
        model.intercept_ = np.asarray(d["intercept"], dtype=np.float64)
        return model

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FPPredictor":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train_fp_predictor(sentences: Sequence[AnnotatedSentence], lexicon: FPLexicon | None = None,
                       seed: int = 0, **kwargs) -> FPPredictor:
    return FPPredictor(lexicon=lexicon, random_state=seed, **kwargs).fit(sentences)


def predict_distributions(model: FPPredictor, tokens) -> np.ndarray:
    return model.predict_proba(tokens)


def argmax_insertion(model: FPPredictor, tokens) -> AnnotatedSentence:
    """Insert the most probable class per slot; ties go to the lowest class index."""
    s = check_sentence(tokens)
    best = predict_distributions(model, s.tokens).argmax(axis=1)
    ins = {slot: model.classes_[c] for slot, c in enumerate(best) if c != 0}
    return AnnotatedSentence(s.tokens, ins, "predicted-argmax")


def draw_classes(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One independent categorical draw per row."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] >= cdf).sum(axis=1)


def sample_insertion(model: FPPredictor, tokens, rng: np.random.Generator) -> AnnotatedSentence:
    s = check_sentence(tokens)
    drawn = draw_classes(predict_distributions(model, s.tokens), rng)
    ins = {slot: model.classes_[c] for slot, c in enumerate(drawn) if c != 0}
    return AnnotatedSentence(s.tokens, ins, "sampled")


@dataclass(frozen=True)
class PseudoEntry:
    source_id: str
    sentence: AnnotatedSentence


def build_pseudo_bank(model: FPPredictor | None, base: Sequence[tuple[str, Sequence[str]]], n: int = 128,
                      rng: np.random.Generator | None = None, mode: str = "probabilistic",
                      lexicon: FPLexicon | None = None) -> list[PseudoEntry]:
    """Sample ``n`` pseudo-FP sentences from FP-removed base sentences.

    ``base`` holds ``(utterance_id, tokens)`` pairs; each entry picks a base
    sentence uniformly at random. ``mode="random"`` inserts one uniformly
    random FP word per sentence instead of sampling from ``model``.
    """
    from .text import random_fp_insertion

    if not base:
        raise ValueError("pseudo bank needs at least one base sentence")
    rng = rng if rng is not None else np.random.default_rng(0)
    bank = []
    for _ in range(n):
        uid, tokens = base[int(rng.integers(0, len(base)))]
        if mode == "probabilistic":
            if model is None:
                raise ValueError("probabilistic pseudo bank needs a fitted FP predictor")
            sent = sample_insertion(model, tokens, rng)
        elif mode == "random":
            sent = random_fp_insertion(tokens, lexicon or (model._lexicon() if model else default_lexicon()), rng)
        else:
            raise ValueError(f"unknown pseudo mode {mode!r}")
        bank.append(PseudoEntry(uid, sent))
    return bank


def bank_to_json(bank: Sequence[PseudoEntry]) -> list[dict]:
    return [
        {"source_id": e.source_id, "tokens": list(e.sentence.tokens),
         "insertions": {str(k): v for k, v in e.sentence.insertions.items()}, "origin": e.sentence.origin}
        for e in bank
    ]


def bank_from_json(items: Sequence[Mapping]) -> list[PseudoEntry]:
    return [
        PseudoEntry(d["source_id"], AnnotatedSentence(tuple(d["tokens"]), {int(k): v for k, v in d["insertions"].items()}, d["origin"]))
        for d in items
    ]
