"""Multi-step workflows behind the CLI: extraction, target loading, training, evaluation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .analytics import AnnotationTable, MetricsResult, evaluate_axes, mos
from .backbones import load_dual_encoder, load_fragment_encoder
from .config import RunConfig
from .dimensions import AXIS_CODES, BENCHMARK_ORDER, validate_codes
from .errors import CacheMissError, DataError, MaxVQAError
from .evaluator import MaxVQA
from .features import FeatureCache, extract_bundle
from .training import (Sample, TrainConfig, TrainTarget, load_checkpoint, maxwell_split, random_splits,
                       rescale_mos, score_samples, train)
from .video import ingest, list_media

logger = logging.getLogger(__name__)


def load_encoders(config: RunConfig, need_fragment=True):
    b = config.backbones
    dual = load_dual_encoder(b.dual_encoder)
    frag = None
    if need_fragment and b.fragment_encoder:
        kwargs = {"checkpoint": b.fragment_checkpoint} if b.fragment_encoder != "stub" else {
            "patch_size": config.fragments.patch_size}
        frag = load_fragment_encoder(b.fragment_encoder, **kwargs)
    return dual, frag


def build_model(config: RunConfig, dual, fragment_dim: int) -> MaxVQA:
    m = config.model
    torch.manual_seed(config.train.seed)  # fc1 initialisation must not depend on earlier RNG use
    return MaxVQA(dual, fragment_dim, m.hidden_dim, m.dropout, m.per_axis_context)


# ---------------------------------------------------------------- extraction

@dataclass
class ExtractionStatus:
    video_id: str
    status: str  # ok | skip | error
    message: str = ""


def extract_features(config: RunConfig, encoders=None) -> list[ExtractionStatus]:
    """Populate the feature cache for every media file; existing records are skipped."""
    if config.paths.videos is None:
        raise DataError("paths.videos is not set")
    settings = config.extraction()
    cache = FeatureCache(config.paths.cache, settings)
    dual, frag = encoders or load_encoders(config)

    def work(path: Path) -> ExtractionStatus:
        vid = path.stem
        if vid in cache:
            return ExtractionStatus(vid, "skip")
        try:
            clip = ingest(path)
            cache.write(extract_bundle(clip, dual, frag, settings))
        except MaxVQAError as exc:
            return ExtractionStatus(vid, "error", str(exc))
        return ExtractionStatus(vid, "ok")

    files = list_media(config.paths.videos)
    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        return list(pool.map(work, files))


def status_text(rows: list[ExtractionStatus]) -> str:
    return "".join(f"{r.video_id}\t{r.status}\t{r.message}\n" for r in rows)


# ------------------------------------------------------------------- targets

def targets_from_annotations(table: AnnotationTable, axes=AXIS_CODES) -> dict[str, TrainTarget]:
    out = {}
    for vid in table.videos():
        values = {a: rescale_mos(mos(table, vid, a)) for a in axes if table.opinions(vid, a)}
        if values:
            out[vid] = TrainTarget(vid, values)
    return out


def targets_from_file(path) -> dict[str, TrainTarget]:
    """Delimited ``video_id, axis_code, target`` rows with targets already in [0, 1]."""
    import csv

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    delim = "\t" if "\t" in lines[0] else ","
    values: dict[str, dict[str, float]] = {}
    for row in csv.DictReader(lines, delimiter=delim):
        values.setdefault(row["video_id"], {})[row["axis_code"]] = float(row["target"])
    return {vid: TrainTarget(vid, v) for vid, v in values.items()}


def load_targets(config: RunConfig) -> dict[str, TrainTarget]:
    if config.paths.targets:
        return targets_from_file(config.paths.targets)
    if config.paths.annotations:
        return targets_from_annotations(AnnotationTable.from_file(config.paths.annotations))
    raise DataError("set paths.annotations or paths.targets")


def load_samples(cache: FeatureCache, targets: dict[str, TrainTarget], ids) -> list[Sample]:
    samples = []
    for vid in ids:
        if vid not in targets:
            raise DataError(f"no targets for video {vid!r}")
        samples.append(Sample(cache.read(vid), targets[vid]))
    return samples


def splits_for(config: RunConfig, ids) -> list[tuple[list[str], list[str]]]:
    s = config.split
    ids = sorted(ids)
    if s.mode == "file":
        test = set(Path(s.test_ids).read_text().split())
        return [([v for v in ids if v not in test], [v for v in ids if v in test])]
    if s.mode == "maxwell":
        return [maxwell_split(ids, seed=s.seed, test_size=min(s.test_size, len(ids) - 2))]
    return random_splits(ids, k=s.k, test_fraction=s.test_fraction, seed=s.seed)


def usable_ids(cache: FeatureCache, targets) -> list[str]:
    ids = [v for v in sorted(targets) if v in cache]
    if not ids:
        raise CacheMissError(f"no cached features for any labelled video under {cache.dir}")
    return ids


def train_from_config(config: RunConfig, encoders=None, split_index: int = 0):
    dual, _ = encoders or load_encoders(config, need_fragment=False)
    cache = FeatureCache(config.paths.cache, config.extraction())
    targets = load_targets(config)
    train_ids, test_ids = splits_for(config, usable_ids(cache, targets))[split_index]
    train_s = load_samples(cache, targets, train_ids)
    val_s = load_samples(cache, targets, test_ids) if test_ids else None
    model = build_model(config, dual, train_s[0].bundle.fragment.shape[-1])
    return train(train_s, config.train, model, val_s)


# ---------------------------------------------------------------- evaluation

def metrics_for(model: MaxVQA, samples: list[Sample], axes=AXIS_CODES) -> MetricsResult:
    q = score_samples(model, samples)
    preds, targs = {}, {}
    for a in axes:
        j = AXIS_CODES.index(a)
        idx = [i for i, s in enumerate(samples) if s.target.mask.get(a, False)]
        if len(idx) >= 2:
            preds[a] = q[idx, j]
            targs[a] = [samples[i].target.targets[a] for i in idx]
    return evaluate_axes(preds, targs)


@dataclass
class EvaluationResult:
    splits: list[MetricsResult]

    @property
    def mean(self) -> dict[str, tuple[float, float]]:
        axes = [a for a in AXIS_CODES if all(a in r.per_axis for r in self.splits)]
        return {a: (float(np.mean([r.per_axis[a][0] for r in self.splits])),
                    float(np.mean([r.per_axis[a][1] for r in self.splits]))) for a in axes}


def evaluate(config: RunConfig, checkpoint=None, encoders=None) -> EvaluationResult:
    """Score the test part of each configured split.

    With a checkpoint it is evaluated on every split as is; without one, a
    fresh model is trained on each split's training part first.
    """
    dual, _ = encoders or load_encoders(config, need_fragment=False)
    cache = FeatureCache(config.paths.cache, config.extraction())
    targets = load_targets(config)
    axes = config.axes or AXIS_CODES
    results = []
    for train_ids, test_ids in splits_for(config, usable_ids(cache, targets)):
        test_s = load_samples(cache, targets, test_ids)
        model = build_model(config, dual, test_s[0].bundle.fragment.shape[-1])
        if checkpoint is not None:
            load_checkpoint(model, checkpoint)
        else:
            model = train(load_samples(cache, targets, train_ids), config.train, model).model
        results.append(metrics_for(model, test_s, axes))
    return EvaluationResult(results)


def benchmark_rows(result: EvaluationResult) -> list[tuple[str, dict[str, tuple[float, float]]]]:
    rows = [(f"split{i}", r.per_axis) for i, r in enumerate(result.splits)]
    if len(result.splits) > 1:
        rows.append(("mean", result.mean))
    return rows


def benchmark_table(result: EvaluationResult, delimiter: str | None = None) -> str:
    """SRCC/PLCC per axis in benchmark column order; aligned text unless ``delimiter`` given."""
    rows = benchmark_rows(result)
    axes = [a for a in BENCHMARK_ORDER if any(a in r for _, r in rows)]
    header = ["split", "metric"] + axes
    body = []
    for name, per_axis in rows:
        for k, metric in enumerate(("SRCC", "PLCC")):
            body.append([name, metric] + [f"{per_axis[a][k]:.4f}" if a in per_axis else "NA" for a in axes])
    if delimiter is not None:
        return "\n".join(delimiter.join(r) for r in [header] + body) + "\n"
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + body) + "\n"


def zero_shot_evaluate(config: RunConfig, encoders=None) -> MetricsResult:
    from .evaluator import zero_shot_predict

    dual = (encoders or load_encoders(config, need_fragment=False))[0]
    cache = FeatureCache(config.paths.cache, config.extraction())
    targets = load_targets(config)
    ids = usable_ids(cache, targets)
    axes = validate_codes(config.axes or AXIS_CODES)
    reports = {v: zero_shot_predict(v, dual, cache=cache) for v in ids}
    preds, targs = {}, {}
    for a in axes:
        vids = [v for v in ids if targets[v].mask.get(a, False)]
        if len(vids) >= 2:
            preds[a] = [reports[v].scores[a] for v in vids]
            targs[a] = [targets[v].targets[a] for v in vids]
    return evaluate_axes(preds, targs)
