"""Independent reference implementations used as test oracles.

These avoid the package's batching and loss helpers on purpose: padding,
masking and the four loss terms are re-derived here from the raw arrays.
"""

import numpy as np

from fpreg.acoustic import Batch, add_variance, decode, encode, predict_scalar
from fpreg.numerics import Adam, Tensor, ops


def _pad_stack(arrays, fill, dtype):
    t = max(len(a) for a in arrays)
    out = np.full((len(arrays), t) + np.asarray(arrays[0]).shape[1:], fill, dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return out


def plain_step_loss(params, config, items):
    """Teacher-forced FastSpeech2-style loss built from scratch for one batch."""
    n = [len(it.seq) for it in items]
    mask = _pad_stack([np.ones(k, bool) for k in n], False, bool)
    batch = Batch(
        phonemes=_pad_stack([it.seq.phonemes for it in items], 0, np.int64),
        mask=mask,
        fp_mask=_pad_stack([it.seq.fp_mask for it in items], False, bool),
        speakers=np.array([it.speaker for it in items]),
    )
    h = encode(params, config, batch)
    log_d = predict_scalar(params, "dur", h, mask)
    p = predict_scalar(params, "pitch", h, mask)
    pitch_t = _pad_stack([it.pitch for it in items], 0.0, float)
    h = add_variance(params, "pitch_emb", h, Tensor(pitch_t), config.pitch_range, mask)
    e = predict_scalar(params, "energy", h, mask)
    energy_t = _pad_stack([it.energy for it in items], 0.0, float)
    h = add_variance(params, "energy_emb", h, Tensor(energy_t), config.energy_range, mask)

    # length regulation by explicit repetition
    frames_per = [np.repeat(np.arange(len(it.seq)), it.durations) for it in items]
    f = max(len(x) for x in frames_per)
    owner = np.zeros((len(items), f), np.int64)
    fmask = np.zeros((len(items), f), bool)
    for b, x in enumerate(frames_per):
        owner[b, : len(x)] = x
        fmask[b, : len(x)] = True
    frames = ops.mul(ops.gather_rows(h, owner), fmask[..., None].astype(float))
    _, mel = decode(params, config, frames, fmask)

    mel_t = _pad_stack([it.mel for it in items], 0.0, float)
    fm = fmask[..., None].astype(float)
    mel_l1 = ops.mul(ops.sum(ops.mul(_abs(ops.sub(mel, mel_t)), fm)), 1.0 / (fm.sum() * mel_t.shape[2]))
    m = mask.astype(float)
    logd_t = _pad_stack([np.log(it.durations) for it in items], 0.0, float)

    def mse(pred, target):
        d = ops.sub(pred, Tensor(target))
        return ops.mul(ops.sum(ops.mul(ops.mul(d, d), m)), 1.0 / m.sum())

    return ops.add(ops.add(mel_l1, mse(log_d, logd_t)), ops.add(mse(p, pitch_t), mse(e, energy_t)))


def _abs(x):
    # |x| = relu(x) + relu(-x)
    return ops.add(ops.relu(x), ops.relu(ops.mul(x, -1.0)))


def plain_trainer(init, config, items, steps, batch_size, lr, seed):
    """Plain trainer: own batching loop, own loss, fresh Adam."""
    params = init.copy()
    opt = Adam(lr=lr)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, len(items), size=batch_size)
        params.zero_grad()
        loss = plain_step_loss(params, config, [items[i] for i in idx])
        loss.backward()
        opt.step(params)
        losses.append(float(loss.value))
    return params, losses
