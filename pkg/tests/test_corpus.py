import json
import tracemalloc
from collections import Counter

import numpy as np
import pytest

from fpreg.corpus import (
    ChecksumError,
    CorpusConfig,
    CorpusError,
    CorpusManifest,
    SchemaVersionError,
    build_inventory,
    generate_corpus,
    load_corpus,
    sample_annotations,
)
from fpreg.text import AnnotatedSentence, distance_to_nearest_fp, to_phonemes

SMALL = CorpusConfig(n_train=40, n_dev=5, n_test=10, seed=3)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    generate_corpus(SMALL, path)
    return path


def test_default_split_sizes():
    cfg = CorpusConfig()
    assert (cfg.n_train, cfg.n_test) == (500, 97)


def test_regeneration_is_byte_identical(small_corpus, tmp_path):
    generate_corpus(SMALL, tmp_path)
    for name in ("manifest.json", "train.jsonl", "dev.jsonl", "test.jsonl"):
        assert (tmp_path / name).read_bytes() == (small_corpus / name).read_bytes()


def test_different_seed_differs(small_corpus, tmp_path):
    generate_corpus(CorpusConfig(n_train=40, n_dev=5, n_test=10, seed=4), tmp_path)
    assert (tmp_path / "train.jsonl").read_bytes() != (small_corpus / "train.jsonl").read_bytes()


def test_loaded_records_are_consistent(small_corpus):
    corpus = load_corpus(small_corpus)
    m = corpus.manifest
    assert m.schema_version == 1
    all_ids = [i for ids in m.splits.values() for i in ids]
    assert len(all_ids) == len(set(all_ids)) == 55
    for u in corpus.iter_split("train"):
        seq = to_phonemes(u.sentence, m.lexicon, m.pron_table)
        assert seq == u.phonemes
        assert u.mel.shape == (u.durations.sum(), SMALL.n_mels)


def test_records_rerender_from_manifest(small_corpus):
    # a record equals the oracle's render under the manifest-derived seed
    corpus = load_corpus(small_corpus)
    m = corpus.manifest
    oracle = m.oracle()
    for u in corpus.load_split("test"):
        _, dur, pitch, energy, mel = oracle.render_sentence(u.sentence, m.pron_table, u.speaker, m.utterance_seed(u.uid))
        np.testing.assert_array_equal(dur, u.durations)
        np.testing.assert_array_equal(pitch, u.pitch)
        np.testing.assert_array_equal(mel, u.mel)


def test_checksum_error(small_corpus, tmp_path):
    for f in small_corpus.iterdir():
        (tmp_path / f.name).write_bytes(f.read_bytes())
    lines = (tmp_path / "dev.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["pitch"][0] += 1.0
    lines[0] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
    (tmp_path / "dev.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ChecksumError):
        load_corpus(tmp_path).load_split("dev")


def test_schema_version_checked(small_corpus):
    doc = json.loads((small_corpus / "manifest.json").read_text())
    doc["schema_version"] = 99
    with pytest.raises(SchemaVersionError):
        CorpusManifest.from_dict(doc)


def test_missing_manifest(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path)


def test_streaming_keeps_memory_flat(tmp_path):
    generate_corpus(CorpusConfig(n_train=200, n_dev=0, n_test=0, seed=1), tmp_path)
    corpus = load_corpus(tmp_path)
    tracemalloc.start()
    for _ in corpus.iter_split("train"):
        pass
    _, stream_peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    tracemalloc.start()
    held = corpus.load_split("train")
    _, load_peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert len(held) == 200
    assert stream_peak * 5 < load_peak


@pytest.fixture(scope="module")
def sample():
    cfg = CorpusConfig()
    lexicon, *_ = build_inventory(cfg)
    return cfg, lexicon, sample_annotations(cfg, 5000, np.random.default_rng(0), lexicon)


class TestAnnotationStatistics:
    def test_fp_word_frequencies_follow_zipf(self, sample):
        cfg, lexicon, sents = sample
        counts = Counter(w for s in sents for w in s.insertions.values())
        total = sum(counts.values())
        ranks = np.arange(1, 14)
        expected = (1.0 / ranks) / (1.0 / ranks).sum()
        observed = np.array([counts[w] / total for w in lexicon.fp_words])
        assert 0.5 * np.abs(observed - expected).sum() < 0.05

    def test_fluent_fraction_and_triggers(self, sample):
        cfg, _, sents = sample
        frac = np.mean([s.has_fp for s in sents])
        assert abs(frac - cfg.fp_fraction) < 0.03
        triggers = {f"w{i:02d}" for i in range(cfg.n_triggers)}
        for s in sents:
            if not s.has_fp:
                assert not triggers.intersection(s.tokens)
            for slot in s.insertions:
                assert s.tokens[slot - 1] in triggers


class TestOracle:
    def test_fp_offsets_hit_only_near_neighbours(self):
        cfg = CorpusConfig()
        manifest_parts = build_inventory(cfg)
        lexicon, pron, triggers, speakers = manifest_parts
        m = CorpusManifest(lexicon, pron, speakers, {}, cfg.seed, cfg, triggers)
        oracle = m.oracle()
        sent = AnnotatedSentence(("w10", "w11", "w00", "w12", "w13", "w14"), {3: "fp01"}, "ground-truth")
        seq, dur, pitch, energy, mel = oracle.render_sentence(sent, pron, "A", [0, 7, 1])
        bare, dur0, pitch0, energy0, mel0 = oracle.render_sentence(sent.without_fp(), pron, "A", [0, 7, 1])
        ling = ~seq.fp_mask
        dist = distance_to_nearest_fp(seq)[ling]
        dp = pitch[ling] - pitch0
        de = energy[ling] - energy0
        sign_p = oracle.pitch_sign[lexicon.index("fp01")]
        sign_e = oracle.energy_sign[lexicon.index("fp01")]
        expected_p = np.select([dist == 1, dist == 2], [0.5 * sign_p, 0.25 * sign_p], 0.0)
        expected_e = np.select([dist == 1, dist == 2], [0.5 * sign_e, 0.25 * sign_e], 0.0)
        np.testing.assert_allclose(dp, expected_p, atol=2e-6)
        np.testing.assert_allclose(de, expected_e, atol=2e-6)
        np.testing.assert_array_equal(dur[ling], dur0)
        # linguistic frames are unchanged: the mel does not depend on FP prosody
        owner = np.repeat(np.arange(len(seq)), dur)
        np.testing.assert_array_equal(mel[ling[owner]], mel0)
