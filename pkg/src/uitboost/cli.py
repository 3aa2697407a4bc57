"""Command-line entry point: synth, train, tune, importance, experiment, report.

Exit codes: 0 success, 1 pipeline error (message on stderr), 2 usage error.
All randomness flows from explicit seeds; there are no wall-clock or entropy
sources anywhere in the pipeline.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import gbt, harness
from .dataset import load_csv, load_schema, save_schema, split_deterministic, write_csv
from .errors import UitboostError
from .importance import decorrelated_permutation_importance, mdi_importance, permutation_importance
from .preprocess import (
    PreprocessConfig,
    Preprocessor,
    load_preprocessor,
    save_preprocessor,
)
from .tuning import CvConfig, SearchSpace, random_search


@dataclass(frozen=True)
class Command:
    name: str
    options: argparse.Namespace


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uitboost",
        description="Boosted-tree transaction screening: data generation, "
        "training, tuning, importance analysis, and repeated experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled CSV plus schema sidecar")
    p.add_argument("--spec", help="JSON file with generator settings (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--schema-out", help="schema sidecar path (default: <out>.schema.json)")
    p.add_argument("--seed", type=int, help="override the generator seed")

    p = sub.add_parser("train", help="fit a model on all rows of a CSV")
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--schema", required=True, help="schema sidecar JSON")
    p.add_argument("--params", help="JSON file with hyperparameters (defaults if omitted)")
    p.add_argument("--pca", action="store_true", help="project features through PCA")
    p.add_argument("--variance-target", type=float, default=0.95)
    p.add_argument("--out", required=True, help="output directory for the model bundle")
    p.add_argument("--seed", type=int, help="override the training seed")

    p = sub.add_parser("tune", help="random hyperparameter search with cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", help="JSON file with cv/search_space settings")
    p.add_argument("--out", required=True, help="audit-trail output file")
    p.add_argument("--seed", type=int, help="override the CV seed")

    p = sub.add_parser(
        "importance", help="rank features of a saved model (MDI, permutation, decorrelated)"
    )
    p.add_argument("--model", required=True, help="model bundle directory from `train`")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True, help="output directory for report files")
    p.add_argument("--seed", type=int, default=0, help="seed for the split and permutations")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--threshold", type=float, default=1.0, help="dendrogram cut distance")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--images", action="store_true", help="also render minimal PNG charts")

    p = sub.add_parser("experiment", help="run the repeated balanced-resampling protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", required=True, help="experiment JSON (cells, cv, space, seeds)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for repetitions")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--images", action="store_true")

    p = sub.add_parser("report", help="re-render report files from a saved aggregate")
    p.add_argument("--aggregate", required=True, help="aggregate.json from `experiment`")
    p.add_argument("--out", required=True, help="output directory")

    return parser


def parse_args(argv) -> Command:
    ns = build_parser().parse_args(argv)
    return Command(name=ns.command, options=ns)


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_table(ns):
    schema, label = load_schema(ns.schema)
    return load_csv(ns.data, schema, label)


def _cmd_synth(ns) -> int:
    doc = _load_json(ns.spec) if ns.spec else {}
    spec = harness.SyntheticSpec.from_dict(doc)
    if ns.seed is not None:
        spec = replace(spec, seed=ns.seed)
    table = harness.generate_synthetic(spec)
    out = Path(ns.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, out)
    schema_out = Path(ns.schema_out) if ns.schema_out else out.with_suffix(out.suffix + ".schema.json")
    save_schema(table, schema_out)
    print(f"wrote {table.n_rows} rows x {table.n_features} features to {out}")
    print(f"wrote schema to {schema_out}")
    return 0


def _cmd_train(ns) -> int:
    table = _load_table(ns)
    params = gbt.Hyperparams.from_dict(_load_json(ns.params)) if ns.params else gbt.Hyperparams()
    if ns.seed is not None:
        params = replace(params, seed=ns.seed)
    outdir = Path(ns.out)
    outdir.mkdir(parents=True, exist_ok=True)
    prep_cfg = PreprocessConfig(pca_enabled=ns.pca, pca_variance_target=ns.variance_target)
    rows = np.arange(table.n_rows)
    prep = Preprocessor(prep_cfg).fit(table, rows)
    X = prep.transform(table)
    model = gbt.train(X, table.labels, params)
    gbt.save_model(model, outdir / "model.txt")
    save_preprocessor(prep, outdir / "preprocess.txt")
    with open(outdir / "params.json", "w", encoding="utf-8") as fh:
        json.dump(params.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {model.ntrees} trees on {table.n_rows} rows; bundle in {outdir}")
    return 0


def _cmd_tune(ns) -> int:
    table = _load_table(ns)
    doc = _load_json(ns.config) if ns.config else {}
    cv = CvConfig(**doc.get("cv", {}))
    if ns.seed is not None:
        cv = replace(cv, seed=ns.seed)
    space = SearchSpace.from_dict(doc["search_space"]) if "search_space" in doc else SearchSpace()
    prep_cfg = PreprocessConfig(
        pca_enabled=doc.get("pca", False),
        pca_variance_target=doc.get("variance_target", 0.95),
    )
    result = random_search(table, space, cv, prep_cfg)
    out = Path(ns.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(result.to_text())
    print(f"best mean AUC {result.best_record.mean_auc:.6f}; audit trail in {out}")
    return 0


def _cmd_importance(ns) -> int:
    table = _load_table(ns)
    bundle = Path(ns.model)
    model = gbt.load_model(bundle / "model.txt")
    prep = load_preprocessor(bundle / "preprocess.txt")
    params = gbt.Hyperparams.from_dict(_load_json(bundle / "params.json"))
    split = split_deterministic(table, ns.train_fraction, ns.seed)
    X_train = prep.transform(table, split.train)
    X_test = prep.transform(table, split.test)
    y_train = table.labels[split.train]
    y_test = table.labels[split.test]

    reports = {
        "mdi": mdi_importance(model),
        "permutation_raw": permutation_importance(
            model, X_test, y_test, repeats=ns.repeats, seed=ns.seed
        ),
    }
    decorr = decorrelated_permutation_importance(
        X_train,
        y_train,
        X_test,
        y_test,
        trainer=lambda mat, yy: gbt.train(mat, yy, params),
        threshold=ns.threshold,
        repeats=ns.repeats,
        seed=ns.seed,
    )
    reports["permutation_decorrelated"] = decorr.report
    run = harness.RunResult(
        repetition=0,
        params=params,
        metrics=None,
        seeds={},
        importance=reports,
        decorrelation=decorr,
    )
    written = harness.emit_plot_data(run, ns.out)
    if ns.images:
        written += harness.render_images(run, Path(ns.out) / "images")
    for path in written:
        print(f"wrote {path}")
    return 0


def load_experiment_file(path, seed_override=None) -> list[harness.ExperimentConfig]:
    """Build one ExperimentConfig per configuration cell listed in the JSON file."""
    doc = _load_json(path)
    cv = CvConfig(**doc.get("cv", {}))
    space = SearchSpace.from_dict(doc["search_space"]) if "search_space" in doc else SearchSpace()
    master_seed = seed_override if seed_override is not None else doc.get("master_seed", 0)
    base = harness.ExperimentConfig(
        repetitions=doc.get("repetitions", 100),
        train_fraction=doc.get("train_fraction", 0.8),
        cv=cv,
        space=space,
        master_seed=master_seed,
        pca_variance_target=doc.get("variance_target", 0.95),
        importance_enabled=doc.get("importance", True),
        permutation_repeats=doc.get("permutation_repeats", 10),
        decorrelation_threshold=doc.get("decorrelation_threshold", 1.0),
        tune_once=doc.get("tune_once", False),
    )
    cells = doc.get("cells", [{}])
    configs = []
    for cell in cells:
        configs.append(
            replace(
                base,
                transactions=cell.get("transactions"),
                features=cell.get("features"),
                pca_enabled=cell.get("pca", False),
            )
        )
    return configs


def _cmd_experiment(ns) -> int:
    table = _load_table(ns)
    configs = load_experiment_file(ns.config, ns.seed)
    outdir = Path(ns.out)
    outdir.mkdir(parents=True, exist_ok=True)
    reports = []
    for config in configs:
        reports.append(harness.run_repeated(table, config, jobs=ns.jobs))
    merged = harness.merge_reports(reports)
    harness.emit_report(merged, outdir / "report.txt")
    harness.write_aggregate(merged, outdir / "aggregate.json")
    harness.emit_plot_data(merged, outdir / "plotdata")
    for config, report in zip(configs, reports):
        cell_dir = outdir / "runs" / config.cell_label().replace("/", "_")
        cell_dir.mkdir(parents=True, exist_ok=True)
        for run in report.results:
            harness.write_run_audit(run, cell_dir / f"rep_{run.repetition:04d}.json")
        if config.importance_enabled and report.results:
            first = report.results[0]
            plot_dir = outdir / "plotdata" / config.cell_label().replace("/", "_")
            harness.emit_plot_data(first, plot_dir)
            if ns.images:
                harness.render_images(first, outdir / "images" / config.cell_label().replace("/", "_"))
    print(harness.render_report(merged), end="")
    print(f"report in {outdir / 'report.txt'}")
    return 0


def _cmd_report(ns) -> int:
    report = harness.load_aggregate(ns.aggregate)
    outdir = Path(ns.out)
    outdir.mkdir(parents=True, exist_ok=True)
    harness.emit_report(report, outdir / "report.txt")
    harness.emit_plot_data(report, outdir / "plotdata")
    print(harness.render_report(report), end="")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "tune": _cmd_tune,
    "importance": _cmd_importance,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def dispatch(command: Command) -> int:
    return _HANDLERS[command.name](command.options)


def main(argv=None) -> int:
    command = parse_args(argv if argv is not None else sys.argv[1:])
    try:
        return dispatch(command)
    except (UitboostError, OSError, ValueError, KeyError) as exc:
        print(f"uitboost: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
