"""Filled-pause aware regularization for a miniature FastSpeech2-style TTS model."""

from .acoustic import ModelConfig, forward, forward_batch, init_params
from .analysis import isolated_forward, run_impact_analysis, summarize
from .corpus import CorpusConfig, generate_corpus, load_corpus
from .estimators import RegularizedTTS, TeacherTTS
from .experiment import ExperimentConfig, resolve_config, run_experiment
from .predictor import FPPredictor, build_pseudo_bank, sample_insertion
from .synthesis import synthesize
from .text import AnnotatedSentence, FPLexicon, build_index_map, to_phonemes
from .training import RegularizationConfig, TrainConfig, evaluate, pretrain_teacher, train_student

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSentence",
    "CorpusConfig",
    "ExperimentConfig",
    "FPLexicon",
    "FPPredictor",
    "ModelConfig",
    "RegularizationConfig",
    "RegularizedTTS",
    "TeacherTTS",
    "TrainConfig",
    "build_index_map",
    "build_pseudo_bank",
    "evaluate",
    "forward",
    "forward_batch",
    "generate_corpus",
    "init_params",
    "isolated_forward",
    "load_corpus",
    "pretrain_teacher",
    "resolve_config",
    "run_experiment",
    "run_impact_analysis",
    "sample_insertion",
    "summarize",
    "synthesize",
    "to_phonemes",
    "train_student",
]
