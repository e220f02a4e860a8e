"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backbone error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analytics, figures, pipeline
from .config import load_config
from .dimensions import AXIS_CODES, BENCHMARK_ORDER, validate_codes
from .errors import ConfigError, MaxVQAError
from .evaluator import QualityReport, predict, zero_shot_predict
from .features import FeatureCache
from .prompts import export_prompts
from .training import load_checkpoint, save_checkpoint
from .video import ingest

logger = logging.getLogger("maxvqa")


def _out_dir(config) -> Path:
    out = Path(config.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_extract(args, config):
    config.validate(require=("videos",))
    rows = pipeline.extract_features(config)
    _emit(pipeline.status_text(rows), args.report)
    return 2 if any(r.status == "error" for r in rows) else 0


def cmd_train(args, config):
    config.validate()
    result = pipeline.train_from_config(config)
    ckpt = Path(args.checkpoint or config.paths.checkpoint)
    save_checkpoint(result.model, ckpt, steps=result.steps, extra={"config": config.to_dict()})
    ckpt.with_suffix(".history.tsv").write_text(result.history_text(), encoding="utf-8")
    logger.info("saved %s after %d steps", ckpt, result.steps)
    return 0


def _load_model(config, checkpoint):
    dual, frag = pipeline.load_encoders(config)
    model = pipeline.build_model(config, dual, frag.out_dim)
    if checkpoint:
        load_checkpoint(model, checkpoint)
    return model, frag


def _source(args, config):
    if args.video:
        return ingest(args.video)
    return args.id


def cmd_predict(args, config):
    config.validate()
    model, frag = _load_model(config, args.checkpoint or config.paths.checkpoint)
    cache = FeatureCache(config.paths.cache, config.extraction())
    report = predict(_source(args, config), model, frag, config.extraction(), cache)
    _emit(report.to_text(), args.out)
    return 0


def cmd_zero_shot(args, config):
    config.validate()
    dual, _ = pipeline.load_encoders(config, need_fragment=False)
    if args.video or args.id:
        cache = FeatureCache(config.paths.cache, config.extraction())
        report = zero_shot_predict(_source(args, config), dual, config.extraction(), cache)
        _emit(report.to_text(), args.out)
        return 0
    result = pipeline.zero_shot_evaluate(config, encoders=(dual, None))
    _emit(pipeline.benchmark_table(pipeline.EvaluationResult([result]), "\t"), args.out)
    return 0


def cmd_quality_map(args, config):
    config.validate()
    axes = validate_codes(args.axes)
    cache = FeatureCache(config.paths.cache, config.extraction())
    source = _source(args, config)
    if args.zero_shot:
        dual, _ = pipeline.load_encoders(config, need_fragment=False)
        report = zero_shot_predict(source, dual, config.extraction(), cache, maps_for=axes)
    else:
        model, frag = _load_model(config, args.checkpoint or config.paths.checkpoint)
        report = predict(source, model, frag, config.extraction(), cache, maps_for=axes)
    out = _out_dir(config) / f"maps_{report.video_id or 'clip'}"
    out.mkdir(parents=True, exist_ok=True)
    for code, grid in report.local_maps.items():
        np.save(out / f"{code}.npy", grid.astype(np.float32))
        for t in range(grid.shape[0]):
            figures.grayscale_map(grid[t], out / f"{code}_t{t:03d}.png")
    if args.video:
        clip = source
        frame = clip.frames[0]
        figures.quality_map_overlays(frame, {c: g[0] for c, g in report.local_maps.items()}, out / "overlay.png")
    report.save(out / "report.tsv")
    print(out)
    return 0


def cmd_evaluate(args, config):
    config.validate()
    checkpoint = args.checkpoint if args.checkpoint != "none" else None
    result = pipeline.evaluate(config, checkpoint)
    out = _out_dir(config)
    (out / "benchmark.txt").write_text(pipeline.benchmark_table(result), encoding="utf-8")
    (out / "benchmark.tsv").write_text(pipeline.benchmark_table(result, "\t"), encoding="utf-8")
    sys.stdout.write(pipeline.benchmark_table(result))
    return 0


def cmd_analyze(args, config):
    config.validate(require=("annotations",))
    table = analytics.AnnotationTable.from_file(config.paths.annotations)
    out = _out_dir(config)
    rows = analytics.opinion_summary(table)
    lines = ["axis_code\tn_videos\tamr\tarr\tpositives\tnegatives\ttendency"]
    lines += [f"{r['axis_code']}\t{r['n_videos']}\t{r['amr']!r}\t{r['arr']!r}\t{r['positives']}\t"
              f"{r['negatives']}\t{r['tendency']!r}" for r in rows]
    (out / "opinions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    figures.response_bars([r for r in rows if r["axis_code"] in analytics_factor_codes()], out / "responses.png")
    videos, axes, mat = analytics.mos_matrix(table, axes=table.axes())
    complete = ~np.isnan(mat).any(axis=1)
    corr = analytics.correlation_map(mat[complete])
    figures.matrix_heatmap(corr, axes, out / "correlation.png", title="PLCC among dimensions")
    if args.predictions:
        reports = QualityReport.from_text(Path(args.predictions).read_text(encoding="utf-8"))
        preds = {r.video_id: r.scores for r in reports}
        subj = {v: {a: mat[i, j] for j, a in enumerate(axes)} for i, v in enumerate(videos) if complete[i]}
        common = sorted(set(preds) & set(subj))
        res = analytics.cross_dimension_matrix({v: preds[v] for v in common}, {v: subj[v] for v in common},
                                               axes=[a for a in BENCHMARK_ORDER if a in axes])
        figures.matrix_heatmap(res.matrix, res.axes, out / "cross_dimension.png",
                               title="prediction (rows) vs opinion (cols)")
    print(out)
    return 0


def analytics_factor_codes():
    from .dimensions import FACTOR_CODES

    return FACTOR_CODES


def cmd_export_prompts(args, config):
    tokenizer = None
    if args.token_ids:
        dual, _ = pipeline.load_encoders(config, need_fragment=False)
        tokenizer = dual.tokenizer
    _emit(export_prompts(tokenizer), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxvqa", description=__doc__.splitlines()[0])
    parser.add_argument("-c", "--config", help="YAML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="populate the feature cache")
    p.add_argument("--report", help="write per-video status here instead of stdout")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train fusion MLP and context token on cached features")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "score one video on all axes"),
                                 ("zero-shot", cmd_zero_shot, "score with the untuned dual encoder")):
        p = sub.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group(required=(name == "predict"))
        src.add_argument("--video")
        src.add_argument("--id", help="cached video id")
        if name == "predict":
            p.add_argument("--checkpoint")
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("quality-map", help="per-cell quality maps for selected axes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--video")
    src.add_argument("--id")
    p.add_argument("--axes", nargs="+", default=["O", "A-1", "T-1"])
    p.add_argument("--checkpoint")
    p.add_argument("--zero-shot", action="store_true")
    p.set_defaults(func=cmd_quality_map)

    p = sub.add_parser("evaluate", help="SRCC/PLCC on the configured split(s)")
    p.add_argument("--checkpoint", default="none",
                   help="checkpoint to evaluate; 'none' trains a fresh model per split")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-opinions", help="MOS statistics, correlation map, response charts")
    p.add_argument("--predictions", help="QualityReport rows for cross-dimension validation")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-prompts", help="write the prompt set")
    p.add_argument("--token-ids", action="store_true", help="include token ids from the configured tokenizer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_prompts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.overrides)
        return args.func(args, config)
    except MaxVQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
