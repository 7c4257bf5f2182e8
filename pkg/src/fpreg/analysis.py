"""Module-isolated FP-impact analysis.

For a target module, the FP-inserted run is made to agree with the FP-removed
run on every linguistic position upstream of that module: each upstream
module's linguistic outputs are replaced by the FP-removed ones, while FP
positions keep whatever the FP run computes from those inputs. Differences
in the target's linguistic outputs are then due to the target alone.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .acoustic import (
    ModelConfig,
    add_variance,
    decode,
    encode,
    frame_layout,
    make_batch,
    predict_scalar,
    resolve_durations,
)
from .corpus import CorpusManifest, Utterance
from .numerics import ParameterStore, Tensor, no_grad, ops
from .text import NO_FP, PhonemeSequence, build_index_map, distance_to_nearest_fp, to_phonemes
from .training import speaker_index
from .validation import MODULES

COSINE = "cosine"
NORMALIZED_ERROR = "normalized_error"
DEFAULT_GROUPS: dict[str, tuple[float, float]] = {"1": (1, 1), "2": (2, 2), ">=3": (3, math.inf)}
SENTINEL_GROUP = "none"
QUANTILES = (5, 25, 50, 75, 95)
N_BINS = 50
MODE_FRACTION = 0.05
ZERO_NORM = 1e-12


def metric_for(module: str) -> str:
    return NORMALIZED_ERROR if module == "duration" else COSINE


@dataclass(frozen=True)
class AnalysisRecord:
    uid: str
    module: str
    position: int
    metric: str
    value: float
    fp_distance: int


@dataclass
class IsolatedResult:
    """Target outputs on linguistic elements, plus upstream linguistic outputs for auditing."""

    target: str
    fp_out: np.ndarray
    nofp_out: np.ndarray
    fp_distance: np.ndarray
    upstream: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def _sub(x: Tensor, rows: np.ndarray, replacement: np.ndarray) -> Tensor:
    v = x.value.copy()
    v[0, rows] = replacement
    return Tensor(v)


def _nofp_pass(params, config, seq, speaker):
    batch = make_batch([seq], [speaker])
    h_enc = encode(params, config, batch)
    log_d = predict_scalar(params, "dur", h_enc, batch.mask)
    p = predict_scalar(params, "pitch", h_enc, batch.mask)
    hp = add_variance(params, "pitch_emb", h_enc, p, config.pitch_range, batch.mask)
    e = predict_scalar(params, "energy", hp, batch.mask)
    he = add_variance(params, "energy_emb", hp, e, config.energy_range, batch.mask)
    durations = resolve_durations(log_d.value, None, batch.mask)
    owner, fmask = frame_layout(durations)
    h_dec, mel = decode(params, config, ops.gather_rows(he, owner), fmask)
    return {
        "encoder": h_enc.value[0],
        "log_duration": log_d.value[0],
        "pitch_raw": p.value[0],
        "pitch": hp.value[0],
        "energy_raw": e.value[0],
        "energy": he.value[0],
        "durations": durations[0],
        "frames": ops.gather_rows(he, owner).value[0],
        "decoder_hidden": h_dec.value[0],
        "decoder_mel": mel.value[0],
    }


def isolated_forward(params: ParameterStore, config: ModelConfig, fp_seq: PhonemeSequence, nofp_seq: PhonemeSequence,
                     target: str, speaker: int = 0, decoder_output: str = "hidden",
                     variance_repr: str = "residual") -> IsolatedResult:
    """Run the FP and FP-removed sequences with upstream substitution for ``target``.

    ``variance_repr="raw"`` reports the pitch/energy bin embedding alone
    instead of the residual-added representation.
    """
    if target not in MODULES:
        raise ValueError(f"unknown target module {target!r}")
    ling = build_index_map(fp_seq).phone_map
    if not np.array_equal(fp_seq.phonemes[ling], nofp_seq.phonemes) or nofp_seq.fp_mask.any():
        raise ValueError("nofp_seq is not the FP-removed version of fp_seq")
    order = MODULES.index(target)
    after = lambda m: order > MODULES.index(m)  # noqa: E731  target lies strictly downstream of m
    with no_grad():
        ref = _nofp_pass(params, config, nofp_seq, speaker)
        batch = make_batch([fp_seq], [speaker])
        mask = batch.mask
        upstream: dict[str, tuple[np.ndarray, np.ndarray]] = {}

        h_enc = encode(params, config, batch)
        if after("encoder"):
            h_enc = _sub(h_enc, ling, ref["encoder"])
            upstream["encoder"] = (h_enc.value[0, ling], ref["encoder"])
        log_d = predict_scalar(params, "dur", h_enc, mask)
        if after("duration"):
            log_d = _sub(log_d, ling, ref["log_duration"])
            upstream["duration"] = (log_d.value[0, ling], ref["log_duration"])
        p = predict_scalar(params, "pitch", h_enc, mask)
        hp = add_variance(params, "pitch_emb", h_enc, p, config.pitch_range, mask)
        if after("pitch"):
            hp = _sub(hp, ling, ref["pitch"])
            upstream["pitch"] = (hp.value[0, ling], ref["pitch"])
        e = predict_scalar(params, "energy", hp, mask)
        he = add_variance(params, "energy_emb", hp, e, config.energy_range, mask)
        if after("energy"):
            he = _sub(he, ling, ref["energy"])
            upstream["energy"] = (he.value[0, ling], ref["energy"])

        dist = distance_to_nearest_fp(fp_seq)[ling]
        if target == "decoder":
            durations = resolve_durations(log_d.value, None, mask)
            owner, fmask = frame_layout(durations)
            frames = ops.gather_rows(he, owner)
            h_dec, mel = decode(params, config, frames, fmask)
            fp_frames = np.repeat(fp_seq.fp_mask, durations[0])
            ling_frames = np.flatnonzero(~fp_frames)
            upstream["frames"] = (frames.value[0, ling_frames], ref["frames"])
            rep = mel if decoder_output == "mel" else h_dec
            fp_out = rep.value[0, ling_frames]
            nofp_out = ref["decoder_mel" if decoder_output == "mel" else "decoder_hidden"]
            frame_dist = np.repeat(distance_to_nearest_fp(fp_seq), durations[0])[ling_frames]
            return IsolatedResult(target, fp_out, nofp_out, frame_dist, upstream)

        if target == "encoder":
            fp_out, nofp_out = h_enc.value[0, ling], ref["encoder"]
        elif target == "duration":
            fp_out, nofp_out = np.exp(log_d.value[0, ling]), np.exp(ref["log_duration"])
        elif variance_repr == "raw":
            table, rng, vals, ref_key = (
                ("pitch_emb", config.pitch_range, p, "pitch_raw") if target == "pitch"
                else ("energy_emb", config.energy_range, e, "energy_raw")
            )
            fp_out = ops.interp_embedding(params[table], vals, *rng).value[0, ling]
            nofp_out = ops.interp_embedding(params[table], Tensor(ref[ref_key][None]), *rng).value[0]
        elif target == "pitch":
            fp_out, nofp_out = hp.value[0, ling], ref["pitch"]
        else:
            fp_out, nofp_out = he.value[0, ling], ref["energy"]
        return IsolatedResult(target, fp_out, nofp_out, dist, upstream)


def normalized_duration_error(d_fp, d_nofp, phone_map=None) -> tuple[np.ndarray, np.ndarray]:
    """``(d_fp[map[p]] - d_nofp[p]) / d_nofp[p]`` per linguistic phoneme.

    ``d_fp`` is indexed through ``phone_map`` when given (otherwise it is
    already linguistic-only). Returns ``(errors, valid)``; entries with a
    non-positive denominator are invalid and set to NaN.
    """
    d_nofp = np.asarray(d_nofp, dtype=np.float64)
    d_fp = np.asarray(d_fp, dtype=np.float64)
    if phone_map is not None:
        d_fp = d_fp[np.asarray(getattr(phone_map, "phone_map", phone_map))]
    if d_fp.shape != d_nofp.shape:
        raise ValueError(f"duration arrays misaligned: {d_fp.shape} vs {d_nofp.shape}")
    valid = d_nofp > 0
    err = np.full(d_nofp.shape, np.nan)
    err[valid] = (d_fp[valid] - d_nofp[valid]) / d_nofp[valid]
    return err, valid


def cosine_profile(h_fp, h_nofp, phone_map=None) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise cosine similarity; rows with a near-zero norm are flagged invalid (NaN)."""
    h_fp = np.asarray(h_fp, dtype=np.float64)
    h_nofp = np.asarray(h_nofp, dtype=np.float64)
    if phone_map is not None:
        h_fp = h_fp[np.asarray(getattr(phone_map, "phone_map", phone_map))]
    if h_fp.ndim != 2 or h_fp.shape != h_nofp.shape:
        raise ValueError(f"cosine_profile: shapes {h_fp.shape} and {h_nofp.shape} differ")
    nu = np.linalg.norm(h_fp, axis=1)
    nv = np.linalg.norm(h_nofp, axis=1)
    valid = (nu >= ZERO_NORM) & (nv >= ZERO_NORM)
    cos = np.full(h_fp.shape[0], np.nan)
    cos[valid] = np.clip((h_fp[valid] * h_nofp[valid]).sum(axis=1) / (nu[valid] * nv[valid]), -1.0, 1.0)
    # the division can land an ulp short of 1 for identical rows
    cos[valid & np.all(h_fp == h_nofp, axis=1)] = 1.0
    return cos, valid


@dataclass
class DistributionSummary:
    metric: str
    count: int
    bin_edges: list[float]
    histogram: list[int]
    quantiles: dict[str, float | None]
    modes: list[float]

    @property
    def median(self) -> float | None:
        return self.quantiles["50"]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "count": self.count,
            "bin_edges": self.bin_edges,
            "histogram": self.histogram,
            "quantiles": self.quantiles,
            "modes": self.modes,
        }


def histogram_range(metric: str) -> tuple[float, float]:
    return (-1.0, 1.0) if metric == COSINE else (-1.0, 2.0)


def summarize(values: Sequence[float], metric: str) -> DistributionSummary:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = histogram_range(metric)
    edges = np.linspace(lo, hi, N_BINS + 1)
    counts, _ = np.histogram(np.clip(v, lo, hi), bins=edges)
    if v.size:
        q = np.percentile(v, QUANTILES)
        quantiles = {str(k): float(x) for k, x in zip(QUANTILES, q)}
    else:
        quantiles = {str(k): None for k in QUANTILES}
    modes = []
    threshold = MODE_FRACTION * v.size
    for i, c in enumerate(counts):
        left = counts[i - 1] if i > 0 else -1
        right = counts[i + 1] if i + 1 < len(counts) else -1
        if c > left and c > right and c > threshold:
            modes.append(float((edges[i] + edges[i + 1]) / 2))
    return DistributionSummary(metric, int(v.size), edges.tolist(), counts.tolist(), quantiles, modes)


def group_of(distance: int, groups: Mapping[str, tuple[float, float]] = DEFAULT_GROUPS) -> str | None:
    if distance == NO_FP:
        return SENTINEL_GROUP
    for name, (lo, hi) in groups.items():
        if lo <= distance <= hi:
            return name
    return None


def adjacency_breakdown(records: Iterable[AnalysisRecord], groups: Mapping[str, tuple[float, float]] = DEFAULT_GROUPS
                        ) -> dict[str, DistributionSummary]:
    """Summaries per FP-distance group, with FP-free records under ``"none"``."""
    records = list(records)
    metrics = {r.metric for r in records}
    if len(metrics) > 1:
        raise ValueError(f"cannot pool different metrics {sorted(metrics)}")
    metric = metrics.pop() if metrics else COSINE
    buckets: dict[str, list[float]] = {g: [] for g in list(groups) + [SENTINEL_GROUP]}
    for r in records:
        g = group_of(r.fp_distance, groups)
        if g is not None:
            buckets[g].append(r.value)
    return {g: summarize(vals, metric) for g, vals in buckets.items()}


@dataclass
class AnalysisResult:
    records: list[AnalysisRecord]
    excluded: dict[str, int]


def _select_utterances(utterances: Iterable[Utterance], speaker: str | None) -> list[Utterance]:
    return [u for u in utterances if speaker is None or u.speaker == speaker]


def run_impact_analysis(params: ParameterStore, config: ModelConfig, utterances: Iterable[Utterance],
                        manifest: CorpusManifest, modules: Sequence[str] = MODULES, speaker: str | None = "A",
                        decoder_output: str = "hidden", variance_repr: str = "residual") -> AnalysisResult:
    """Per-utterance, per-module isolated comparison of FP vs FP-removed inputs."""
    for m in modules:
        if m not in MODULES:
            raise ValueError(f"unknown module {m!r}")
    spk = speaker_index(manifest)
    records: list[AnalysisRecord] = []
    excluded = {m: 0 for m in modules}
    for u in _select_utterances(utterances, speaker):
        fp_seq = u.phonemes
        nofp_seq = to_phonemes(u.sentence.without_fp(), manifest.lexicon, manifest.pron_table)
        for m in MODULES:
            if m not in modules:
                continue
            res = isolated_forward(params, config, fp_seq, nofp_seq, m, spk[u.speaker], decoder_output, variance_repr)
            if m == "duration":
                vals, valid = normalized_duration_error(res.fp_out, res.nofp_out)
            else:
                vals, valid = cosine_profile(res.fp_out, res.nofp_out)
            excluded[m] += int((~valid).sum())
            metric = metric_for(m)
            for pos in np.flatnonzero(valid):
                records.append(AnalysisRecord(u.uid, m, int(pos), metric, float(vals[pos]), int(res.fp_distance[pos])))
    return AnalysisResult(records, excluded)


# reports

RECORD_FIELDS = ("uid", "module", "position", "metric", "value", "fp_distance")


def write_records_csv(path: str | os.PathLike, records: Sequence[AnalysisRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.uid, r.module, r.position, r.metric, repr(r.value), r.fp_distance])


def read_records_csv(path: str | os.PathLike) -> list[AnalysisRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            AnalysisRecord(row["uid"], row["module"], int(row["position"]), row["metric"], float(row["value"]),
                           int(row["fp_distance"]))
            for row in csv.DictReader(fh)
        ]


def module_summaries(records: Sequence[AnalysisRecord], modules: Sequence[str] = MODULES
                     ) -> dict[str, dict[str, DistributionSummary]]:
    by_module: dict[str, list[AnalysisRecord]] = {m: [] for m in modules}
    for r in records:
        if r.module in by_module:
            by_module[r.module].append(r)
    out = {}
    for m, recs in by_module.items():
        breakdown = adjacency_breakdown(recs)
        for s in breakdown.values():
            s.metric = metric_for(m)
        out[m] = breakdown
    return out


def write_report(out_dir: str | os.PathLike, result: AnalysisResult, modules: Sequence[str]) -> dict:
    """Write records.csv, summary.json and plotdata.csv; return the summary document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records_csv(out_dir / "records.csv", result.records)
    summaries = module_summaries(result.records, modules)
    doc = {
        "modules": {m: {g: s.to_dict() for g, s in groups.items()} for m, groups in summaries.items()},
        "excluded": result.excluded,
        "n_records": len(result.records),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    with open(out_dir / "plotdata.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["module", "group", "metric", "bin_left", "bin_right", "count"])
        for m, groups in summaries.items():
            for g, s in groups.items():
                for i, c in enumerate(s.histogram):
                    w.writerow([m, g, s.metric, repr(s.bin_edges[i]), repr(s.bin_edges[i + 1]), c])
    return doc


@dataclass
class ComparisonRow:
    module: str
    group: str
    model: str
    summary: DistributionSummary
    median_delta: float | None


def compare_models(conv: tuple[ParameterStore, ModelConfig], prop: tuple[ParameterStore, ModelConfig],
                   utterances: Sequence[Utterance], manifest: CorpusManifest, modules: Sequence[str] = MODULES,
                   speaker: str | None = "A", conv_records: Sequence[AnalysisRecord] | None = None,
                   prop_records: Sequence[AnalysisRecord] | None = None) -> list[ComparisonRow]:
    """Side-by-side distribution summaries; ``median_delta`` is proposed minus conventional."""
    if conv[1] != prop[1]:
        raise ValueError("models were built with different configs")
    utterances = list(utterances)
    if conv_records is None:
        conv_records = run_impact_analysis(conv[0], conv[1], utterances, manifest, modules, speaker).records
    if prop_records is None:
        prop_records = run_impact_analysis(prop[0], prop[1], utterances, manifest, modules, speaker).records
    cs = module_summaries(conv_records, modules)
    ps = module_summaries(prop_records, modules)
    rows = []
    for m in modules:
        for g in cs[m]:
            a, b = cs[m][g].median, ps[m][g].median
            delta = None if a is None or b is None else b - a
            rows.append(ComparisonRow(m, g, "conventional", cs[m][g], delta))
            rows.append(ComparisonRow(m, g, "proposed", ps[m][g], delta))
    return rows


def write_comparison(out_dir: str | os.PathLike, rows: Sequence[ComparisonRow]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["module", "group", "model", "metric", "count"] + [f"q{q}" for q in QUANTILES] + ["modes", "median_delta"])
        for r in rows:
            s = r.summary
            w.writerow(
                [r.module, r.group, r.model, s.metric, s.count]
                + ["" if s.quantiles[str(q)] is None else repr(s.quantiles[str(q)]) for q in QUANTILES]
                + [";".join(repr(x) for x in s.modes), "" if r.median_delta is None else repr(r.median_delta)]
            )
    doc = [
        {"module": r.module, "group": r.group, "model": r.model, "summary": r.summary.to_dict(),
         "median_delta": r.median_delta}
        for r in rows
    ]
    with open(out_dir / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
