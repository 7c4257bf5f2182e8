"""FP lexicon, annotated sentences, phoneme front end, and linguistic index maps.

Sentences are sequences of token names. An FP word attaches to an
inter-token slot: slot ``s`` sits before token ``s``, so a sentence of ``n``
tokens has ``n + 1`` slots including both boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

N_FP_WORDS = 13
NONE_MARKER = "<none>"
NO_FP = -1  # distance sentinel for utterances without any FP

LINGUISTIC_PHONEMES = (
    "a", "i", "u", "e", "o", "k", "s", "t", "n", "h", "m", "y",
    "r", "w", "g", "z", "d", "b", "p", "N", "ky", "sh", "ch", "ts",
)  # fmt: skip
FP_PHONEMES = ("fa", "fi", "fu", "fe", "fo", "fn")
PHONEMES = LINGUISTIC_PHONEMES + FP_PHONEMES
PHONEME_ID = {name: i for i, name in enumerate(PHONEMES)}

ORIGINS = ("ground-truth", "predicted-argmax", "sampled", "random", "none")


class LexiconError(KeyError):
    """Unknown FP word or malformed lexicon."""


class SlotError(IndexError):
    """Insertion slot outside ``0..len(tokens)``."""


class FrontEndError(KeyError):
    """A token or FP word has no pronunciation."""


@dataclass(frozen=True)
class FPLexicon:
    fp_words: tuple[str, ...]
    expansions: Mapping[str, tuple[str, ...]]
    none_marker: str = NONE_MARKER

    def __post_init__(self):
        words = tuple(self.fp_words)
        if len(words) != N_FP_WORDS or len(set(words)) != N_FP_WORDS:
            raise LexiconError(f"expected {N_FP_WORDS} distinct FP words, got {words}")
        if self.none_marker in words:
            raise LexiconError("none_marker collides with an FP word")
        for w in words:
            exp = self.expansions.get(w)
            if not exp:
                raise LexiconError(f"FP word {w!r} has no phoneme expansion")
            for ph in exp:
                if ph not in FP_PHONEMES:
                    raise LexiconError(f"FP word {w!r} uses non-FP phoneme {ph!r}")
        object.__setattr__(self, "fp_words", words)
        object.__setattr__(self, "expansions", {w: tuple(self.expansions[w]) for w in words})

    def __contains__(self, word: str) -> bool:
        return word in self.expansions

    def index(self, word: str) -> int:
        try:
            return self.fp_words.index(word)
        except ValueError:
            raise LexiconError(f"unknown FP word {word!r}") from None

    def to_dict(self) -> dict:
        return {
            "fp_words": list(self.fp_words),
            "expansions": {w: list(e) for w, e in self.expansions.items()},
            "none_marker": self.none_marker,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FPLexicon":
        return cls(tuple(d["fp_words"]), {w: tuple(e) for w, e in d["expansions"].items()}, d["none_marker"])


def default_lexicon(seed: int = 0) -> FPLexicon:
    """fp01..fp13, each expanding to 1-3 phonemes from the FP subset."""
    rng = np.random.default_rng(seed)
    words = tuple(f"fp{i:02d}" for i in range(1, N_FP_WORDS + 1))
    expansions: dict[str, tuple[str, ...]] = {}
    seen: set[tuple[str, ...]] = set()
    for w in words:
        while True:
            n = int(rng.integers(1, 4))
            exp = tuple(FP_PHONEMES[j] for j in rng.integers(0, len(FP_PHONEMES), size=n))
            if exp not in seen:
                break
        seen.add(exp)
        expansions[w] = exp
    return FPLexicon(words, expansions)


@dataclass(frozen=True)
class AnnotatedSentence:
    tokens: tuple[str, ...]
    insertions: Mapping[int, str] = field(default_factory=dict)
    origin: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "insertions", {int(k): v for k, v in sorted(self.insertions.items())})
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def n_slots(self) -> int:
        return len(self.tokens) + 1

    @property
    def has_fp(self) -> bool:
        return bool(self.insertions)

    def words(self) -> list[str]:
        """Surface word sequence with FP words spliced in."""
        out: list[str] = []
        for s in range(self.n_slots):
            if s in self.insertions:
                out.append(self.insertions[s])
            if s < len(self.tokens):
                out.append(self.tokens[s])
        return out

    def without_fp(self) -> "AnnotatedSentence":
        return AnnotatedSentence(self.tokens, {}, "none")


def insert_fp_words(tokens: Sequence[str], insertions: Mapping[int, str], lexicon: FPLexicon,
                    origin: str = "ground-truth") -> AnnotatedSentence:
    tokens = tuple(tokens)
    for slot, word in insertions.items():
        if not 0 <= int(slot) <= len(tokens):
            raise SlotError(f"slot {slot} outside 0..{len(tokens)}")
        if word not in lexicon:
            raise LexiconError(f"unknown FP word {word!r}")
    return AnnotatedSentence(tokens, dict(insertions), origin)


def remove_fp_words(annotated: AnnotatedSentence) -> tuple[tuple[str, ...], dict[int, str]]:
    return annotated.tokens, dict(annotated.insertions)


@dataclass(frozen=True)
class PhonemeSequence:
    phonemes: np.ndarray  # int64 phoneme ids
    fp_mask: np.ndarray  # bool
    fp_group: np.ndarray  # int64 slot index, -1 for linguistic phonemes

    def __len__(self) -> int:
        return int(self.phonemes.shape[0])

    @property
    def n_linguistic(self) -> int:
        return int((~self.fp_mask).sum())

    def names(self) -> list[str]:
        return [PHONEMES[i] for i in self.phonemes]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhonemeSequence):
            return NotImplemented
        return (
            np.array_equal(self.phonemes, other.phonemes)
            and np.array_equal(self.fp_mask, other.fp_mask)
            and np.array_equal(self.fp_group, other.fp_group)
        )

    __hash__ = None


def to_phonemes(annotated: AnnotatedSentence, lexicon: FPLexicon,
                pron_table: Mapping[str, Sequence[str]]) -> PhonemeSequence:
    ids: list[int] = []
    mask: list[bool] = []
    group: list[int] = []

    def emit(names: Sequence[str], is_fp: bool, slot: int) -> None:
        for ph in names:
            if ph not in PHONEME_ID:
                raise FrontEndError(f"unknown phoneme {ph!r}")
            ids.append(PHONEME_ID[ph])
            mask.append(is_fp)
            group.append(slot)

    for s in range(annotated.n_slots):
        if s in annotated.insertions:
            word = annotated.insertions[s]
            if word not in lexicon:
                raise FrontEndError(f"no pronunciation for FP word {word!r}")
            emit(lexicon.expansions[word], True, s)
        if s < len(annotated.tokens):
            tok = annotated.tokens[s]
            pron = pron_table.get(tok)
            if not pron:
                raise FrontEndError(f"no pronunciation for token {tok!r}")
            emit(pron, False, -1)
    return PhonemeSequence(
        np.asarray(ids, dtype=np.int64), np.asarray(mask, dtype=bool), np.asarray(group, dtype=np.int64)
    )


@dataclass(frozen=True)
class LinguisticIndexMap:
    """Positions of linguistic (non-FP) elements inside an FP-inserted sequence."""

    phone_map: np.ndarray
    frame_map: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.phone_map.shape[0])

    def with_frames(self, durations: np.ndarray) -> "LinguisticIndexMap":
        durations = np.asarray(durations, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
        frames = [np.arange(starts[p], starts[p] + durations[p]) for p in self.phone_map]
        frame_map = np.concatenate(frames) if frames else np.zeros(0, dtype=np.int64)
        return LinguisticIndexMap(self.phone_map, frame_map.astype(np.int64))


def build_index_map(seq: PhonemeSequence) -> LinguisticIndexMap:
    return LinguisticIndexMap(np.flatnonzero(~np.asarray(seq.fp_mask, dtype=bool)).astype(np.int64))


def random_fp_insertion(tokens: Sequence[str], lexicon: FPLexicon, rng: np.random.Generator) -> AnnotatedSentence:
    """Insert one uniformly chosen FP word at one uniformly chosen slot."""
    tokens = tuple(tokens)
    if not tokens:
        raise ValueError("random_fp_insertion needs at least one token")
    slot = int(rng.integers(0, len(tokens) + 1))
    word = lexicon.fp_words[int(rng.integers(0, len(lexicon.fp_words)))]
    return AnnotatedSentence(tokens, {slot: word}, "random")


def distance_to_nearest_fp(seq_or_mask) -> np.ndarray:
    """Index distance from each position to the closest FP phoneme.

    0 on FP phonemes, :data:`NO_FP` everywhere if the sequence has no FP.
    """
    mask = np.asarray(getattr(seq_or_mask, "fp_mask", seq_or_mask), dtype=bool)
    n = mask.shape[0]
    if not mask.any():
        return np.full(n, NO_FP, dtype=np.int64)
    big = n + 1
    left = np.empty(n, dtype=np.int64)
    last = -big
    for i in range(n):
        if mask[i]:
            last = i
        left[i] = i - last
    right = np.empty(n, dtype=np.int64)
    nxt = n + big
    for i in range(n - 1, -1, -1):
        if mask[i]:
            nxt = i
        right[i] = nxt - i
    return np.minimum(left, right)
