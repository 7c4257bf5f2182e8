import numpy as np
import pytest

from fpreg.acoustic import ModelConfig, forward, init_params
from fpreg.analysis import (
    COSINE,
    NORMALIZED_ERROR,
    SENTINEL_GROUP,
    AnalysisRecord,
    adjacency_breakdown,
    cosine_profile,
    isolated_forward,
    normalized_duration_error,
    read_records_csv,
    run_impact_analysis,
    summarize,
    write_report,
)
from fpreg.corpus import CorpusConfig, generate_corpus, load_corpus
from fpreg.text import AnnotatedSentence, to_phonemes
from fpreg.validation import MODULES


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    generate_corpus(CorpusConfig(n_train=10, n_dev=0, n_test=20, seed=2), path)
    return load_corpus(path)


@pytest.fixture(scope="module")
def params():
    p = init_params(ModelConfig(), 4)
    rng = np.random.default_rng(0)
    for _, t in p.items():
        t.value += rng.normal(0.0, 0.05, size=t.shape)
    return p


def fp_pairs(corpus, n=8):
    m = corpus.manifest
    out = []
    for u in corpus.load_split("test"):
        if u.sentence.has_fp:
            out.append((u.phonemes, to_phonemes(u.sentence.without_fp(), m.lexicon, m.pron_table)))
        if len(out) == n:
            break
    return out


@pytest.mark.parametrize("target", MODULES)
def test_upstream_bitwise_equal(corpus, params, target):
    for fp_seq, nofp_seq in fp_pairs(corpus):
        res = isolated_forward(params, ModelConfig(), fp_seq, nofp_seq, target)
        expected_upstream = set(MODULES[: MODULES.index(target)])
        got = set(res.upstream) - {"frames"}
        assert got == expected_upstream
        for name, (a, b) in res.upstream.items():
            assert np.array_equal(a, b), name


@pytest.mark.parametrize("target", MODULES)
def test_fp_free_input_is_identity(corpus, params, target):
    m = corpus.manifest
    sent = AnnotatedSentence(("w10", "w20", "w30"))
    seq = to_phonemes(sent, m.lexicon, m.pron_table)
    res = isolated_forward(params, ModelConfig(), seq, seq, target)
    if target == "duration":
        err, valid = normalized_duration_error(res.fp_out, res.nofp_out)
        assert valid.all() and (err == 0.0).all()
    else:
        cos, valid = cosine_profile(res.fp_out, res.nofp_out)
        assert valid.all() and np.all(cos == 1.0)


def test_encoder_target_matches_plain_forward(corpus, params):
    # the encoder has nothing upstream: its FP-run output is just a plain forward pass
    fp_seq, nofp_seq = fp_pairs(corpus, 1)[0]
    res = isolated_forward(params, ModelConfig(), fp_seq, nofp_seq, "encoder")
    _, full = forward(params, ModelConfig(), fp_seq)
    _, bare = forward(params, ModelConfig(), nofp_seq)
    np.testing.assert_array_equal(res.fp_out, full.h_encoder[~fp_seq.fp_mask])
    np.testing.assert_array_equal(res.nofp_out, bare.h_encoder)


def test_fp_changes_neighbours(corpus, params):
    fp_seq, nofp_seq = fp_pairs(corpus, 1)[0]
    res = isolated_forward(params, ModelConfig(), fp_seq, nofp_seq, "encoder")
    cos, _ = cosine_profile(res.fp_out, res.nofp_out)
    near = (res.fp_distance >= 1) & (res.fp_distance <= 1)
    assert cos[near].min() < 1.0


def test_nofp_mismatch_rejected(corpus, params):
    fp_seq, nofp_seq = fp_pairs(corpus, 2)[1]
    with pytest.raises(ValueError):
        isolated_forward(params, ModelConfig(), fp_seq, fp_seq, "energy")


def test_metric_oracles():
    cos, valid = cosine_profile(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]]),
                                np.array([[0.0, 2.0], [2.0, 2.0], [1.0, 0.0]]))
    assert cos[0] == 0.0 and cos[1] == pytest.approx(1.0) and not valid[2]
    err, valid = normalized_duration_error(np.array([6.0, 2.0, 3.0, 9.0]), np.array([4.0, 2.0, 0.0]), [0, 1, 3])
    assert err[0] == 0.5 and err[1] == 0.0 and not valid[2]


def test_summarize_against_numpy():
    rng = np.random.default_rng(0)
    vals = np.concatenate([rng.normal(0.3, 0.02, 400), rng.normal(0.6, 0.02, 600)])
    s = summarize(vals, COSINE)
    np.testing.assert_allclose([s.quantiles[k] for k in ("5", "25", "50", "75", "95")],
                               np.percentile(vals, [5, 25, 50, 75, 95]))
    assert sum(s.histogram) == 1000
    assert len(s.modes) == 2
    assert abs(s.modes[0] - 0.3) < 0.05 and abs(s.modes[1] - 0.6) < 0.05
    e = summarize([5.0, -3.0], NORMALIZED_ERROR)
    assert e.histogram[0] == 1 and e.histogram[-1] == 1
    empty = summarize([], COSINE)
    assert empty.median is None and empty.count == 0


def test_adjacency_groups():
    recs = [AnalysisRecord("u", "energy", i, COSINE, v, d)
            for i, (v, d) in enumerate([(0.5, 1), (0.7, 2), (1.0, 3), (0.9, 7), (1.0, -1)])]
    br = adjacency_breakdown(recs)
    assert br["1"].count == 1 and br["2"].count == 1 and br[">=3"].count == 2
    assert br[SENTINEL_GROUP].count == 1


def test_report_roundtrip_and_determinism(corpus, params, tmp_path):
    test = corpus.load_split("test")
    a = run_impact_analysis(params, ModelConfig(), test, corpus.manifest, ["energy", "duration"], speaker=None)
    b = run_impact_analysis(params, ModelConfig(), test, corpus.manifest, ["energy", "duration"], speaker=None)
    write_report(tmp_path / "a", a, ["energy", "duration"])
    write_report(tmp_path / "b", b, ["energy", "duration"])
    for name in ("records.csv", "summary.json", "plotdata.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read_records_csv(tmp_path / "a" / "records.csv") == a.records
    fluent = [r for r in a.records if r.fp_distance == -1]
    assert fluent and all(r.value == (1.0 if r.metric == COSINE else 0.0) for r in fluent)


def test_unknown_module(corpus, params):
    with pytest.raises(ValueError):
        run_impact_analysis(params, ModelConfig(), [], corpus.manifest, ["vocoder"])
