"""Command-line interface.

Verbs mirror the pipeline stages: ingest, preprocess, extract, select,
train, evaluate, reproduce. Exit codes: 0 success, 1 usage error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys

import numpy as np

from . import __version__, mitdb, pipeline
from .errors import DataError, NumericError
from .evaluation import format_table, results_to_text
from .features import FEATURE_NAMES, FeatureMatrix
from .selection import SelectionTrace


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", default=None, help="directory of .hea/.dat/.atr files")
    common.add_argument("--cache-dir", default=None, help="stage artifact cache")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="plain-text key = value config file")
    common.add_argument("--quick", action="store_true", help="3+3 records, reduced budgets")
    common.add_argument("--paper-subsets", action="store_true",
                        help="use the published 11/4-feature subsets instead of the wrapper")

    parser = _Parser(prog="ecgbeats",
                     description="MIT-BIH heartbeat classification pipeline")
    parser.add_argument("--version", action="version", version=f"ecgbeats {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse and summarize records")
    p.add_argument("--record", help="record id, e.g. 100")
    p.add_argument("--verify", action="store_true", help="run codec round-trip checks")
    p.add_argument("--fetch", action="store_true", help="download missing files first")

    p = sub.add_parser("preprocess", parents=[common], help="filter + resample one record")
    p.add_argument("--record", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("extract", parents=[common], help="feature matrix for a split")
    p.add_argument("--split", choices=("ds1", "ds2"), required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select", parents=[common], help="wrapper feature selection")
    p.add_argument("--classifier", choices=("lda", "qda", "mlp"), default="lda")
    p.add_argument("--out", required=True, help="trace file")

    p = sub.add_parser("train", parents=[common], help="train one model on DS1")
    p.add_argument("--model", choices=("lda", "qda", "mlp", "ensemble", "moe"),
                   required=True)
    p.add_argument("--features", default="all",
                   help="'all', a comma list, a trace file, or a name-per-line file")
    p.add_argument("--out", required=True, help="model file")

    p = sub.add_parser("evaluate", parents=[common], help="score a model on a split")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--split", choices=("ds1", "ds2"), default="ds2")
    p.add_argument("--target", choices=("sveb", "veb", "both"), default="both")
    p.add_argument("--out", default=None, help="results file (columnar text)")

    p = sub.add_parser("reproduce", parents=[common],
                       help="full DS1-train/DS2-test comparison table")
    p.add_argument("--out", default=None, help="report file")
    return parser


def _make_config(args) -> pipeline.PipelineConfig:
    if args.config:
        config = pipeline.PipelineConfig.from_file(args.config)
    else:
        config = pipeline.PipelineConfig()
    updates = {}
    if args.data_dir is not None:
        updates["data_dir"] = args.data_dir
    if args.cache_dir is not None:
        updates["cache_dir"] = args.cache_dir
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.quick:
        updates["quick"] = True
    if args.paper_subsets:
        updates["paper_subsets"] = True
    if updates:
        from dataclasses import replace
        config = replace(config, **updates)
    return config


def _parse_feature_arg(spec: str):
    if spec == "all":
        return FEATURE_NAMES
    if os.path.exists(spec):
        with open(spec, encoding="ascii") as fh:
            first = fh.readline()
        if first.startswith("ecgbeats-trace"):
            return SelectionTrace.load(spec).final_subset
        with open(spec, encoding="ascii") as fh:
            names = [ln.strip() for ln in fh if ln.strip()]
    else:
        names = [n.strip() for n in spec.split(",") if n.strip()]
    unknown = [n for n in names if n not in FEATURE_NAMES]
    if unknown:
        raise DataError(f"unknown feature names: {unknown}")
    return tuple(names)


def _cmd_ingest(args, config) -> int:
    if args.verify:
        _verify_codecs()
        return 0
    if not args.record:
        raise _UsageError("ingest needs --record or --verify")
    if args.fetch:
        mitdb.fetch_record(config.data_dir, args.record)
    rec = mitdb.read_record(config.data_dir, args.record)
    h = rec.header
    split = mitdb.split_dataset([h.record_id])
    group = "DS1" if split.ds1 else "DS2" if split.ds2 else "excluded (paced)"
    print(f"record {h.record_id}: {h.n_signals} signals at {h.sampling_rate:g} Hz, "
          f"{h.n_samples} samples ({h.n_samples / h.sampling_rate / 60:.1f} min), {group}")
    for s in h.signals:
        print(f"  {s.lead_name or s.filename}: format {s.format_code}, "
              f"gain {s.adc_gain:g}/mV, zero {s.adc_zero}, {s.adc_resolution} bits")
    counts = mitdb.class_counts([rec])
    beats = sum(counts.values())
    print(f"  annotations: {len(rec.annotations)} events, {beats} beats "
          + " ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _verify_codecs() -> None:
    rng = np.random.default_rng(0)
    pairs = rng.integers(-2048, 2048, size=(10_000, 2), dtype=np.int64)
    decoded = mitdb.decode_format212(
        mitdb.encode_format212([pairs[:, 0], pairs[:, 1]]), 10_000, 2)
    assert np.array_equal(decoded[0], pairs[:, 0])
    assert np.array_equal(decoded[1], pairs[:, 1])
    print("format-212 round-trip on 10,000 random pairs: ok")

    beat_codes = sorted(mitdb.AAMI_MAP)
    t, events = 0, []
    for _ in range(1000):
        t += int(rng.integers(1, 3000))
        code = beat_codes[int(rng.integers(len(beat_codes)))]
        symbol, _, is_beat = mitdb.ANNOTATION_CODES[code]
        events.append(mitdb.AnnotationEvent(t, code, symbol, is_beat))
    parsed = mitdb.parse_annotations(mitdb.encode_annotations(events))
    assert [(e.sample_index, e.mit_code) for e in parsed] \
        == [(e.sample_index, e.mit_code) for e in events]
    print("annotation round-trip on 1,000 synthetic events: ok")


def _cmd_preprocess(args, config) -> int:
    artifact = pipeline.run_stage("preprocess", config, record_id=args.record)
    os.makedirs(args.out, exist_ok=True)
    for name in os.listdir(artifact):
        shutil.copyfile(os.path.join(artifact, name), os.path.join(args.out, name))
    print(f"wrote {args.record}.signal.tsv and {args.record}.annotations.tsv to {args.out}")
    return 0


def _cmd_extract(args, config) -> int:
    artifact = pipeline.run_stage("extract", config, split=args.split)
    shutil.copyfile(artifact, args.out)
    matrix = FeatureMatrix.load(args.out)
    flagged = sum(1 for f in matrix.flags if f)
    print(f"{args.split}: {len(matrix)} beats x {len(matrix.feature_names)} features "
          f"-> {args.out} ({flagged} beats flagged)")
    return 0


def _cmd_select(args, config) -> int:
    artifact = pipeline.run_stage("select", config, kind=args.classifier)
    shutil.copyfile(artifact, args.out)
    trace = SelectionTrace.load(args.out)
    print(f"{args.classifier}: {len(trace.final_subset)} features "
          f"({trace.stop_reason})")
    for i, step in enumerate(trace.steps):
        print(f"  {i + 1}. {step.feature}  score={step.score:.3f}")
    return 0


def _cmd_train(args, config) -> int:
    subset = _parse_feature_arg(args.features)
    artifact = pipeline.run_stage("train", config, kind=args.model, subset=subset)
    shutil.copyfile(artifact, args.out)
    print(f"trained {args.model} on {len(subset)} features -> {args.out}")
    return 0


def _cmd_evaluate(args, config) -> int:
    model = pipeline.load_any_model(args.model)
    cache = pipeline.Cache(config.resolved().cache_dir)
    matrix = FeatureMatrix.load(
        pipeline.stage_extract(config.resolved(), cache, args.split))
    evaluation = pipeline.evaluate_model(config, model, matrix)
    name = os.path.basename(args.model)
    row = pipeline._method_result(name, evaluation)
    targets = ("sveb", "veb") if args.target == "both" else (args.target,)
    for target in targets:
        m = evaluation[target]
        fmt = lambda v: "n/a" if v is None else f"{v:.2f}"
        print(f"{target.upper()}: Se={fmt(m.se)} Sp={fmt(m.sp)} PPV={fmt(m.ppv)} "
              f"FPR={fmt(m.fpr)} F={fmt(m.f_measure)} "
              f"(tp={m.tp} fn={m.fn} fp={m.fp} tn={m.tn})")
        runs = evaluation.get(f"{target}_runs")
        if runs is not None:
            f_mean, f_se = runs.mean["f_measure"], runs.stderr["f_measure"]
            print(f"  member mean F={fmt(f_mean)} (s.e. {fmt(f_se)}) over {runs.n} runs")
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(results_to_text([row]))
    return 0


def _cmd_reproduce(args, config) -> int:
    report, _ = pipeline.reproduce(config, out_path=args.out)
    print(report, end="")
    if args.out:
        print(f"\nreport -> {args.out} (+ .results.tsv, .manifest)")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "preprocess": _cmd_preprocess,
    "extract": _cmd_extract,
    "select": _cmd_select,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "reproduce": _cmd_reproduce,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _make_config(args)
        return _COMMANDS[args.verb](args, config)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
