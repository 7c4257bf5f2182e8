from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .acoustic import ModelConfig, UtteranceBundle, forward
from .numerics import ParameterStore
from .predictor import FPPredictor, argmax_insertion
from .text import AnnotatedSentence, FPLexicon, to_phonemes

MODES = ("NoFP", "TrueFP", "PredFP")


def synthesize(params: ParameterStore, config: ModelConfig, sentence: AnnotatedSentence | Sequence[str], mode: str,
               lexicon: FPLexicon, pron_table: Mapping[str, Sequence[str]], predictor: FPPredictor | None = None,
               speaker: int = 0) -> tuple[np.ndarray, UtteranceBundle, AnnotatedSentence]:
    """Inference-mode synthesis under one of the NoFP / TrueFP / PredFP conditions.

    Returns the mel prediction, the module bundle and the sentence actually
    synthesized.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "TrueFP":
        if not isinstance(sentence, AnnotatedSentence):
            raise ValueError("TrueFP synthesis needs ground-truth annotations")
        text = sentence
    else:
        tokens = sentence.tokens if isinstance(sentence, AnnotatedSentence) else tuple(sentence)
        if mode == "NoFP":
            text = AnnotatedSentence(tokens, {}, "none")
        else:
            if predictor is None:
                raise ValueError("PredFP synthesis needs an FP predictor")
            text = argmax_insertion(predictor, tokens)
    seq = to_phonemes(text, lexicon, pron_table)
    mel, bundle = forward(params, config, seq, None, speaker)
    return mel, bundle, text
