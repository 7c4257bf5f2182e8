import numpy as np
import pytest

from fpreg.acoustic import (
    ModelConfig,
    extract_linguistic,
    forward,
    forward_batch,
    init_params,
    length_regulate,
    make_batch,
    round_durations,
    split_fp_linguistic_audio,
    tts_loss,
    unbatch,
)
from fpreg.numerics import DimensionError, grad_check
from fpreg.text import PHONEME_ID, PhonemeSequence, build_index_map

TINY = ModelConfig(dim=4, predictor_hidden=3, n_bins=4, n_mels=3, n_blocks=1)


def seq_from(names, fp):
    fp = np.array(fp, dtype=bool)
    return PhonemeSequence(np.array([PHONEME_ID[n] for n in names]), fp, np.where(fp, 1, -1))


SEQ = seq_from(["a", "e", "fa", "fi", "o", "u"], [0, 0, 1, 1, 0, 0])
SHORT = seq_from(["i", "a", "o"], [0, 0, 0])


@pytest.fixture(scope="module")
def params():
    return init_params(ModelConfig(), 0)


def test_round_durations():
    got = round_durations(np.log(np.array([0.2, 1.49, 1.5, 2.5, 7.0])))
    assert got.tolist() == [1, 1, 2, 3, 7]


def test_length_regulate_oracle():
    reps = np.arange(6.0).reshape(3, 2)
    frames, ranges = length_regulate(reps, [2, 1, 3])
    expected = [reps[0], reps[0], reps[1], reps[2], reps[2], reps[2]]
    np.testing.assert_array_equal(frames, expected)
    assert ranges.tolist() == [[0, 2], [2, 3], [3, 6]]
    with pytest.raises(ValueError):
        length_regulate(reps, [1, 0, 1])


def test_forward_shapes(params):
    mel, b = forward(params, ModelConfig(), SEQ)
    n = len(SEQ)
    assert b.h_encoder.shape == (n, 32) and b.h_duration.shape == (n,)
    assert mel.shape == (int(b.durations_used.sum()), 20)
    assert (b.durations_used >= 1).all()


def test_teacher_forcing_respected(params):
    d = np.array([1, 2, 3, 1, 2, 4])
    mel, b = forward(params, ModelConfig(), SEQ, {"durations": d, "pitch": np.zeros(6), "energy": np.zeros(6)})
    np.testing.assert_array_equal(b.durations_used, d)
    assert mel.shape[0] == d.sum()
    with pytest.raises(ValueError):
        forward(params, ModelConfig(), SEQ, {"pitch": np.zeros(3)})


def test_padding_does_not_leak(params):
    cfg = ModelConfig()
    _, alone = forward(params, cfg, SHORT)
    batch = make_batch([SEQ, SHORT], [0, 0])
    with_pad = unbatch(forward_batch(params, cfg, batch), 1)
    for f in ("h_encoder", "h_energy_resid", "h_decoder", "mel"):
        np.testing.assert_allclose(getattr(with_pad, f), getattr(alone, f), atol=1e-12)


def test_extract_linguistic_positions(params):
    _, b = forward(params, ModelConfig(), SEQ)
    lin = extract_linguistic(b, build_index_map(SEQ))
    np.testing.assert_array_equal(lin.h_encoder, b.h_encoder[[0, 1, 4, 5]])
    fp_frames, ling_frames = split_fp_linguistic_audio(b.mel, b.durations_used, SEQ.fp_mask)
    np.testing.assert_array_equal(lin.mel, ling_frames)
    assert fp_frames.shape[0] == b.durations_used[[2, 3]].sum()


def test_tts_loss_gradients():
    rng = np.random.default_rng(0)
    params = init_params(TINY, 1)
    for _, t in params.items():  # off the ReLU kinks of zero biases
        t.value += rng.normal(0.0, 0.1, size=t.shape)
    d = np.array([2, 1, 2, 1, 1, 2])
    frames = int(d.sum())
    batch = make_batch([SEQ], [1], durations=[d], pitch=[rng.normal(size=6)], energy=[rng.normal(size=6)],
                       mel=[rng.normal(size=(frames, 3))])
    names = list(params)
    tensors = [params[n] for n in names]

    def loss(*ts):
        return tts_loss(forward_batch(params, TINY, batch), batch).total

    assert grad_check(loss, tensors) < 1e-4


def test_loss_requires_targets(params):
    batch = make_batch([SEQ], [0])
    with pytest.raises(ValueError):
        tts_loss(forward_batch(params, ModelConfig(), batch), batch)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(kernel_size=2)
    assert ModelConfig().digest() == ModelConfig.from_dict(ModelConfig().to_dict()).digest()


def test_init_is_seeded():
    assert init_params(TINY, 3).digest() == init_params(TINY, 3).digest()
    assert init_params(TINY, 3).digest() != init_params(TINY, 4).digest()


def test_dimension_error_on_bad_mel(params):
    batch = make_batch([SHORT], [0], durations=[[1, 1, 1]], pitch=[np.zeros(3)], energy=[np.zeros(3)],
                       mel=[np.zeros((4, 20))])
    with pytest.raises(DimensionError):
        tts_loss(forward_batch(params, ModelConfig(), batch), batch)
