"""scikit-learn style wrappers around the teacher / student training loops.

``fit`` takes a list of :class:`~fpreg.corpus.Utterance` plus the corpus
manifest; ``predict`` returns one mel per input sentence and ``transform``
the per-module intermediate bundles.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .acoustic import ModelConfig, forward
from .corpus import CorpusManifest
from .predictor import FPPredictor, build_pseudo_bank
from .training import (
    RegularizationConfig,
    TrainConfig,
    eval_loss,
    prepare_bank,
    prepare_items,
    pretrain_teacher,
    speaker_index,
    train_student,
)
from .text import to_phonemes
from .validation import check_is_fitted, check_sentence


class _TTSBase(BaseEstimator):
    def _check_manifest(self, manifest) -> CorpusManifest:
        if not isinstance(manifest, CorpusManifest):
            raise TypeError("fit needs manifest=<CorpusManifest>")
        return manifest

    def _model_config(self) -> ModelConfig:
        return self.model_config if self.model_config is not None else ModelConfig()

    def _inputs(self, X, speaker):
        spk = speaker_index(self.manifest_)[speaker]
        for x in X:
            s = check_sentence(x)
            yield to_phonemes(s, self.manifest_.lexicon, self.manifest_.pron_table), spk

    def predict(self, X, speaker: str = "A") -> list[np.ndarray]:
        """Inference mels for annotated sentences (or token lists)."""
        check_is_fitted(self, ["params_"])
        return [forward(self.params_, self.config_, seq, None, spk)[0] for seq, spk in self._inputs(X, speaker)]

    def transform(self, X, speaker: str = "A") -> list:
        check_is_fitted(self, ["params_"])
        return [forward(self.params_, self.config_, seq, None, spk)[1] for seq, spk in self._inputs(X, speaker)]

    def score(self, X, y=None) -> float:
        """Negative teacher-forced TTS loss on utterances ``X`` (higher is better)."""
        check_is_fitted(self, ["params_"])
        return -eval_loss(self.params_, self.config_, prepare_items(X, self.manifest_))


class TeacherTTS(_TTSBase):
    """Plain acoustic model trained on FP-included data."""

    def __init__(self, model_config=None, steps=20000, batch_size=8, learning_rate=1e-3, random_state=0):
        self.model_config = model_config
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None, manifest=None):
        self.manifest_ = self._check_manifest(manifest)
        self.config_ = self._model_config()
        train = TrainConfig(self.steps, self.batch_size, self.learning_rate, self.random_state)
        res = pretrain_teacher(prepare_items(X, self.manifest_), self.config_, train)
        self.params_, self.history_ = res.params, res.history
        return self


class RegularizedTTS(_TTSBase):
    """Student initialised from a fitted :class:`TeacherTTS`.

    ``alpha=0`` reduces to continued plain training.
    """

    def __init__(self, alpha=1.0, beta=4.0, k=None, l=None, pseudo_mode="probabilistic",  # noqa: E741
                 bank_size=128, variance_source="predicted", decoder_output="hidden", steps=5000, batch_size=8,
                 learning_rate=1e-3, random_state=1, model_config=None):
        self.alpha = alpha
        self.beta = beta
        self.k = k
        self.l = l
        self.pseudo_mode = pseudo_mode
        self.bank_size = bank_size
        self.variance_source = variance_source
        self.decoder_output = decoder_output
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.model_config = model_config

    def reg_config(self) -> RegularizationConfig:
        return RegularizationConfig(
            alpha=self.alpha, beta=self.beta,
            k=self.k if self.k is not None else {"energy": 1.0},
            l=self.l if self.l is not None else {"energy": 1.0},
            pseudo_mode=self.pseudo_mode, variance_source=self.variance_source, decoder_output=self.decoder_output,
        )

    def fit(self, X, y=None, manifest=None, teacher: TeacherTTS | None = None, predictor: FPPredictor | None = None):
        self.manifest_ = self._check_manifest(manifest)
        if teacher is None:
            raise TypeError("fit needs teacher=<fitted TeacherTTS>")
        check_is_fitted(teacher, ["params_"])
        reg = self.reg_config()
        X = list(X)
        items = prepare_items(X, self.manifest_)
        bank = ()
        if reg.uses_pseudo:
            raw = build_pseudo_bank(predictor, [(u.uid, u.sentence.tokens) for u in X], self.bank_size,
                                    np.random.default_rng([self.random_state, 2]), reg.pseudo_mode,
                                    self.manifest_.lexicon)
            bank = prepare_bank(raw, items, self.manifest_.lexicon, self.manifest_.pron_table)
        self.config_ = teacher.config_
        train = TrainConfig(self.steps, self.batch_size, self.learning_rate, self.random_state)
        res = train_student(teacher.params_, self.config_, items, reg, train, bank)
        self.params_, self.history_ = res.params, res.history
        return self
