import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpreg.text import (
    FP_PHONEMES,
    LINGUISTIC_PHONEMES,
    NO_FP,
    PHONEME_ID,
    AnnotatedSentence,
    FPLexicon,
    FrontEndError,
    LexiconError,
    SlotError,
    build_index_map,
    default_lexicon,
    distance_to_nearest_fp,
    insert_fp_words,
    random_fp_insertion,
    remove_fp_words,
    to_phonemes,
)

LEX = default_lexicon()
PRON = {f"t{i}": tuple(LINGUISTIC_PHONEMES[(i + j) % len(LINGUISTIC_PHONEMES)] for j in range(1 + i % 3))
        for i in range(12)}


@st.composite
def annotated(draw):
    tokens = tuple(draw(st.lists(st.sampled_from(sorted(PRON)), min_size=0, max_size=10)))
    slots = draw(st.sets(st.integers(0, len(tokens)), max_size=len(tokens) + 1))
    ins = {s: draw(st.sampled_from(LEX.fp_words)) for s in slots}
    return tokens, ins


class TestLexicon:
    def test_default_has_thirteen_words(self):
        assert len(LEX.fp_words) == 13
        assert all(ph in FP_PHONEMES for e in LEX.expansions.values() for ph in e)

    def test_rejects_wrong_size_and_bad_phonemes(self):
        with pytest.raises(LexiconError):
            FPLexicon(("a",), {"a": ("fa",)})
        exp = dict(LEX.expansions)
        exp["fp01"] = ("a",)
        with pytest.raises(LexiconError):
            FPLexicon(LEX.fp_words, exp)

    def test_dict_roundtrip(self):
        assert FPLexicon.from_dict(LEX.to_dict()) == LEX


class TestInsertRemove:
    @settings(max_examples=1000, deadline=None)
    @given(annotated())
    def test_roundtrip(self, case):
        tokens, ins = case
        s = insert_fp_words(tokens, ins, LEX)
        assert remove_fp_words(s) == (tokens, ins)

    def test_bad_slot_and_word(self):
        with pytest.raises(SlotError):
            insert_fp_words(("t1", "t2"), {3: "fp01"}, LEX)
        with pytest.raises(LexiconError):
            insert_fp_words(("t1",), {0: "um"}, LEX)

    def test_surface_words(self):
        s = AnnotatedSentence(("a", "b"), {0: "fp01", 2: "fp02"})
        assert s.words() == ["fp01", "a", "b", "fp02"]


class TestFrontEnd:
    def test_hand_built_sequence(self):
        s = AnnotatedSentence(("t0", "t1"), {1: "fp01"})
        seq = to_phonemes(s, LEX, PRON)
        expected = list(PRON["t0"]) + list(LEX.expansions["fp01"]) + list(PRON["t1"])
        assert seq.names() == expected
        n0, nf = len(PRON["t0"]), len(LEX.expansions["fp01"])
        assert seq.fp_mask.tolist() == [False] * n0 + [True] * nf + [False] * len(PRON["t1"])
        assert set(seq.fp_group[seq.fp_mask]) == {1}

    def test_unknown_token(self):
        with pytest.raises(FrontEndError):
            to_phonemes(AnnotatedSentence(("nope",)), LEX, PRON)

    @settings(max_examples=300, deadline=None)
    @given(annotated())
    def test_fp_removal_leaves_linguistic_phonemes(self, case):
        tokens, ins = case
        with_fp = to_phonemes(AnnotatedSentence(tokens, ins), LEX, PRON)
        without = to_phonemes(AnnotatedSentence(tokens), LEX, PRON)
        np.testing.assert_array_equal(with_fp.phonemes[~with_fp.fp_mask], without.phonemes)
        assert all(p >= PHONEME_ID[FP_PHONEMES[0]] for p in with_fp.phonemes[with_fp.fp_mask])


def brute_index_map(mask):
    out, k = [], 0
    for i, m in enumerate(mask):
        if not m:
            out.append(i)
            k += 1
    return out


def brute_distance(mask):
    fps = [i for i, m in enumerate(mask) if m]
    if not fps:
        return [NO_FP] * len(mask)
    return [min(abs(i - j) for j in fps) for i in range(len(mask))]


class TestIndexMap:
    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.booleans(), max_size=40))
    def test_matches_brute_force(self, mask):
        from fpreg.text import PhonemeSequence

        m = np.array(mask, dtype=bool)
        seq = PhonemeSequence(np.zeros(len(m), dtype=np.int64), m, np.where(m, 0, -1))
        assert build_index_map(seq).phone_map.tolist() == brute_index_map(mask)
        assert distance_to_nearest_fp(m).tolist() == brute_distance(mask)

    def test_frame_map(self):
        from fpreg.text import PhonemeSequence

        m = np.array([False, True, False])
        seq = PhonemeSequence(np.zeros(3, dtype=np.int64), m, np.array([-1, 1, -1]))
        im = build_index_map(seq).with_frames(np.array([2, 3, 1]))
        assert im.frame_map.tolist() == [0, 1, 5]

    def test_no_fp_sentinel(self):
        assert distance_to_nearest_fp(np.zeros(4, dtype=bool)).tolist() == [NO_FP] * 4


class TestRandomInsertion:
    def test_exactly_one_fp_uniform_slots(self):
        rng = np.random.default_rng(0)
        tokens = ("t0", "t1", "t2")
        counts = np.zeros(4)
        n = 10_000
        for _ in range(n):
            s = random_fp_insertion(tokens, LEX, rng)
            assert len(s.insertions) == 1
            counts[next(iter(s.insertions))] += 1
        np.testing.assert_allclose(counts / n, 0.25, atol=0.02)

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            random_fp_insertion((), LEX, np.random.default_rng(0))
