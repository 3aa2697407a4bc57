"""Experiment orchestration: synthetic data, repeated balanced resampling with
per-repetition tuning, metric aggregation, and report/plot-data emission.

Every source of randomness is derived from (master seed, repetition index,
stage tag), so toggling one pipeline stage (e.g. PCA) cannot perturb the
sampling or split of another, and repetitions are reproducible in isolation.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gbt
from .dataset import (
    CATEGORICAL,
    LAWFUL,
    NUMERIC,
    UNLAWFUL,
    FeatureSpec,
    RawTable,
    sample_balanced,
    split_deterministic,
)
from .errors import EmptyReportError, ExperimentError
from .importance import (
    DecorrelationResult,
    ImportanceReport,
    decorrelated_permutation_importance,
    mdi_importance,
    permutation_importance,
)
from .metrics import (
    REPORT_ROWS,
    MetricsReport,
    auc_roc,
    confusion_matrix,
    derive_rates,
    format_percent,
)
from .preprocess import PreprocessConfig, Preprocessor
from .tuning import CvConfig, SearchSpace, TuningResult, final_round_count, random_search

METRIC_KEYS = REPORT_ROWS + ("AUC",)

STAGE_BALANCE = "balance"
STAGE_CAP = "cap"
STAGE_SPLIT = "split"
STAGE_TUNE = "tune"
STAGE_FINAL = "final"
STAGE_PERM = "perm"
STAGE_DECORR = "decorr"
ALL_STAGES = (
    STAGE_BALANCE,
    STAGE_CAP,
    STAGE_SPLIT,
    STAGE_TUNE,
    STAGE_FINAL,
    STAGE_PERM,
    STAGE_DECORR,
)


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit seed from the master seed plus stage/repetition tags."""
    text = ":".join([str(int(master_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-signal table: class-shifted informative numerics, noisy copies of
    them in correlated blocks, class-tilted categoricals, and pure noise."""

    n_rows: int = 3984
    numeric_features: int = 90
    categorical_features: int = 20
    category_cardinality: int = 4
    informative: int = 10
    correlated_blocks: int = 5
    block_size: int = 4
    separation: float = 2.5
    label_noise: float = 0.01
    copy_noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rows < 4:
            raise ValueError("n_rows must be at least 4")
        if self.informative > self.numeric_features:
            raise ValueError("informative count exceeds numeric features")
        copies = self.correlated_blocks * (self.block_size - 1)
        if self.informative + copies > self.numeric_features:
            raise ValueError("correlated blocks do not fit into the numeric features")
        if self.correlated_blocks > self.informative:
            raise ValueError("each correlated block needs its own informative source")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must lie in [0, 0.5)")

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "numeric_features": self.numeric_features,
            "categorical_features": self.categorical_features,
            "category_cardinality": self.category_cardinality,
            "informative": self.informative,
            "correlated_blocks": self.correlated_blocks,
            "block_size": self.block_size,
            "separation": self.separation,
            "label_noise": self.label_noise,
            "copy_noise": self.copy_noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        return cls(**doc)


def generate_synthetic(spec: SyntheticSpec) -> RawTable:
    """Deterministic balanced table; at separation 0 the features carry no signal."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    n_unlawful = n // 2
    labels = np.zeros(n, dtype=np.int8)
    labels[n_unlawful:] = LAWFUL
    shift = (labels.astype(np.float64) - 0.5) * spec.separation

    numeric = np.empty((n, spec.numeric_features))
    names: list[tuple[str, str]] = []
    col = 0
    for i in range(spec.informative):
        numeric[:, col] = rng.standard_normal(n) + shift
        names.append((f"inf{i:02d}", NUMERIC))
        col += 1
    for b in range(spec.correlated_blocks):
        source = numeric[:, b]
        for t in range(spec.block_size - 1):
            numeric[:, col] = source + spec.copy_noise * rng.standard_normal(n)
            names.append((f"dup{b:02d}_{t}", NUMERIC))
            col += 1
    noise_idx = 0
    while col < spec.numeric_features:
        numeric[:, col] = rng.standard_normal(n)
        names.append((f"rnd{noise_idx:02d}", NUMERIC))
        noise_idx += 1
        col += 1

    tilt_strength = min(0.4, 0.1 * spec.separation)
    categorical = np.empty((n, spec.categorical_features), dtype=object)
    for j in range(spec.categorical_features):
        card = spec.category_cardinality
        base = rng.dirichlet(np.ones(card))
        pattern = rng.choice(np.array([-1.0, 1.0]), size=card)
        p_pos = base * (1.0 + tilt_strength * pattern)
        p_pos = p_pos / p_pos.sum()
        p_neg = base * (1.0 - tilt_strength * pattern)
        p_neg = p_neg / p_neg.sum()
        values = np.array([f"L{k}" for k in range(card)], dtype=object)
        draws_pos = rng.choice(values, size=n, p=p_pos)
        draws_neg = rng.choice(values, size=n, p=p_neg)
        categorical[:, j] = np.where(labels == LAWFUL, draws_pos, draws_neg)
        names.append((f"cat{j:02d}", CATEGORICAL))

    # symmetric label flips keep the class counts exactly balanced; both flip
    # sets are drawn from the original labels before either is applied
    if spec.label_noise > 0:
        flips = []
        for label in (UNLAWFUL, LAWFUL):
            idx = np.flatnonzero(labels == label)
            n_flip = int(math.floor(spec.label_noise * len(idx)))
            if n_flip:
                flips.append(rng.choice(idx, size=n_flip, replace=False))
        for flip in flips:
            labels[flip] = 1 - labels[flip]

    order = rng.permutation(n)
    specs = tuple(
        FeatureSpec(name, kind, i) for i, (name, kind) in enumerate(names)
    )
    return RawTable(
        specs=specs,
        numeric=numeric[order],
        categorical=categorical[order],
        labels=labels[order],
    )


@dataclass(frozen=True)
class ExperimentConfig:
    repetitions: int = 100
    transactions: int | None = None
    features: int | None = None
    pca_enabled: bool = False
    train_fraction: float = 0.8
    cv: CvConfig = CvConfig()
    space: SearchSpace = SearchSpace()
    master_seed: int = 0
    output_dir: str | None = None
    pca_variance_target: float = 0.95
    importance_enabled: bool = True
    permutation_repeats: int = 10
    decorrelation_threshold: float = 1.0
    tune_once: bool = False

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")

    def cell_label(self) -> str:
        tx = "all" if self.transactions is None else str(self.transactions)
        ft = "all" if self.features is None else str(self.features)
        return f"{tx}tx/{ft}f/{'PCA' if self.pca_enabled else 'noPCA'}"


@dataclass
class RunResult:
    repetition: int
    params: gbt.Hyperparams
    metrics: MetricsReport
    seeds: dict[str, int]
    tuning: TuningResult | None = None
    importance: dict[str, ImportanceReport] | None = None
    decorrelation: DecorrelationResult | None = None

    def metric_dict(self) -> dict[str, float | None]:
        return {k: self.metrics.as_dict()[k] for k in METRIC_KEYS}


@dataclass
class CellAggregate:
    label: str
    mean: dict[str, float | None]
    std: dict[str, float | None]
    runs: list[dict[str, float | None]]

    @property
    def repetitions(self) -> int:
        return len(self.runs)


@dataclass
class AggregateReport:
    cells: list[CellAggregate]
    master_seed: int
    results: list[RunResult] = field(default_factory=list, repr=False)


def _cap_rows(table: RawTable, cap: int, seed: int) -> RawTable:
    per_class = cap // 2
    rng = np.random.default_rng(seed)
    chosen = []
    for label in (UNLAWFUL, LAWFUL):
        idx = table.class_indices(label)
        if per_class > len(idx):
            raise ValueError(f"cap {cap} exceeds available rows of class {label}")
        chosen.append(np.sort(rng.choice(idx, size=per_class, replace=False)))
    return table.subset(np.sort(np.concatenate(chosen)))


def run_experiment(
    table: RawTable,
    config: ExperimentConfig,
    repetition: int,
    tuned: gbt.Hyperparams | None = None,
) -> RunResult:
    """One repetition: balance, cap, split, tune (unless given), refit, evaluate."""
    seeds = {
        stage: derive_seed(config.master_seed, repetition, stage) for stage in ALL_STAGES
    }
    work = table if config.features is None else table.select_features(config.features)
    balanced = sample_balanced(work, 0.5, seeds[STAGE_BALANCE])
    if config.transactions is not None and config.transactions < balanced.n_rows:
        balanced = _cap_rows(balanced, config.transactions, seeds[STAGE_CAP])
    split = split_deterministic(balanced, config.train_fraction, seeds[STAGE_SPLIT])

    prep_cfg = PreprocessConfig(
        pca_enabled=config.pca_enabled, pca_variance_target=config.pca_variance_target
    )
    tuning_result = None
    if tuned is None:
        train_table = balanced.subset(split.train)
        cv = replace(config.cv, seed=seeds[STAGE_TUNE])
        tuning_result = random_search(train_table, config.space, cv, prep_cfg)
        final_params = gbt.retrained(
            tuning_result.best,
            final_round_count(tuning_result.best_record),
            seeds[STAGE_FINAL],
        )
    else:
        final_params = replace(tuned, seed=seeds[STAGE_FINAL])

    prep = Preprocessor(prep_cfg).fit(balanced, split.train)
    X_train = prep.transform(balanced, split.train)
    X_test = prep.transform(balanced, split.test)
    y_train = balanced.labels[split.train]
    y_test = balanced.labels[split.test]

    model = gbt.train(X_train, y_train, final_params)
    probs = gbt.predict_proba(model, X_test)
    predicted = gbt.classify(model, X_test)
    metrics = derive_rates(confusion_matrix(y_test, predicted)).with_auc(
        auc_roc(y_test, probs)
    )

    importance = None
    decorrelation = None
    if config.importance_enabled:
        importance = {
            "mdi": mdi_importance(model),
            "permutation_raw": permutation_importance(
                model,
                X_test,
                y_test,
                repeats=config.permutation_repeats,
                seed=seeds[STAGE_PERM],
            ),
        }
        decorrelation = decorrelated_permutation_importance(
            X_train,
            y_train,
            X_test,
            y_test,
            trainer=lambda mat, yy: gbt.train(mat, yy, final_params),
            threshold=config.decorrelation_threshold,
            repeats=config.permutation_repeats,
            seed=seeds[STAGE_DECORR],
        )
        importance["permutation_decorrelated"] = decorrelation.report

    return RunResult(
        repetition=repetition,
        params=final_params,
        metrics=metrics,
        seeds=seeds,
        tuning=tuning_result,
        importance=importance,
        decorrelation=decorrelation,
    )


def _run_one(args) -> RunResult:
    table, config, repetition, tuned = args
    return run_experiment(table, config, repetition, tuned)


def _aggregate(label: str, results: list[RunResult], master_seed: int) -> AggregateReport:
    runs = [r.metric_dict() for r in results]
    mean: dict[str, float | None] = {}
    std: dict[str, float | None] = {}
    for key in METRIC_KEYS:
        values = [r[key] for r in runs if r[key] is not None]
        if values:
            mean[key] = float(np.mean(values))
            std[key] = float(np.std(values))
        else:
            mean[key] = None
            std[key] = None
    cell = CellAggregate(label=label, mean=mean, std=std, runs=runs)
    return AggregateReport(cells=[cell], master_seed=master_seed, results=results)


def run_repeated(table: RawTable, config: ExperimentConfig, jobs: int = 1) -> AggregateReport:
    """All repetitions of one configuration cell, aggregated in index order.

    Parallel and serial execution produce identical aggregates because each
    repetition derives its own seeds. A failing repetition aborts the run.
    """
    results: list[RunResult] = []
    tuned = None
    first_rep = 0
    if config.tune_once:
        try:
            first = run_experiment(table, config, 0)
        except Exception as exc:
            raise ExperimentError(f"repetition 0 failed: {exc}") from exc
        results.append(first)
        tuned = first.params
        first_rep = 1

    reps = list(range(first_rep, config.repetitions))
    if jobs > 1 and len(reps) > 1:
        tasks = [(table, config, i, tuned) for i in reps]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            ordered = pool.map(_run_one, tasks)
            for i in reps:
                try:
                    results.append(next(ordered))
                except Exception as exc:
                    raise ExperimentError(f"repetition {i} failed: {exc}") from exc
    else:
        for i in reps:
            try:
                results.append(run_experiment(table, config, i, tuned))
            except Exception as exc:
                raise ExperimentError(f"repetition {i} failed: {exc}") from exc
    return _aggregate(config.cell_label(), results, config.master_seed)


def merge_reports(reports: list[AggregateReport]) -> AggregateReport:
    """Concatenate cells of several runs into one multi-column report."""
    if not reports:
        raise ValueError("nothing to merge")
    cells = [c for r in reports for c in r.cells]
    results = [res for r in reports for res in r.results]
    return AggregateReport(cells=cells, master_seed=reports[0].master_seed, results=results)


def render_report(report: AggregateReport) -> str:
    """Text table: metric rows by configuration columns, percent at 2 decimals."""
    labels = [c.label for c in report.cells]
    widths = [max(len(lbl), 6) for lbl in labels]
    lines = ["Metric | " + " | ".join(lbl.rjust(w) for lbl, w in zip(labels, widths))]
    for key in REPORT_ROWS:
        row = [format_percent(c.mean[key]).rjust(w) for c, w in zip(report.cells, widths)]
        lines.append(f"{key:6s} | " + " | ".join(row))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, dict[str, float | None]]:
    """Inverse of render_report: {cell label: {metric: percent value}}."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [part.strip() for part in lines[0].split("|")][1:]
    out: dict[str, dict[str, float | None]] = {lbl: {} for lbl in header}
    for line in lines[1:]:
        parts = [part.strip() for part in line.split("|")]
        metric = parts[0]
        for lbl, cell in zip(header, parts[1:]):
            out[lbl][metric] = None if cell == "-" else float(cell)
    return out


def emit_report(report: AggregateReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_report(report))


def write_aggregate(report: AggregateReport, path) -> None:
    doc = {
        "master_seed": report.master_seed,
        "cells": [
            {
                "label": c.label,
                "repetitions": c.repetitions,
                "mean": c.mean,
                "std": c.std,
                "runs": c.runs,
            }
            for c in report.cells
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_aggregate(path) -> AggregateReport:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cells = [
        CellAggregate(label=c["label"], mean=c["mean"], std=c["std"], runs=c["runs"])
        for c in doc["cells"]
    ]
    return AggregateReport(cells=cells, master_seed=doc["master_seed"])


def write_run_audit(run: RunResult, path) -> None:
    doc = {
        "repetition": run.repetition,
        "seeds": run.seeds,
        "params": run.params.to_dict(),
        "metrics": run.metric_dict(),
    }
    if run.tuning is not None:
        doc["candidates"] = [
            {
                "params": rec.params.to_dict(),
                "mean_auc": rec.mean_auc,
                "fold_aucs": list(rec.fold_aucs),
                "best_rounds": list(rec.best_rounds),
            }
            for rec in run.tuning.candidates
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_importance_data(report: ImportanceReport, path) -> None:
    """Bar-chart data: one (feature, score) row per line, descending score."""
    if not report.entries:
        raise EmptyReportError("importance report has no entries")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature\tscore\n")
        for e in report.entries:
            fh.write(f"{e.name}\t{format(e.score, '.17g')}\n")


def emit_plot_data(run_or_aggregate, outdir) -> list[Path]:
    """Plot-data files for one run (importance bars, linkage, correlation grid)
    or for an aggregate (per-cell metric summary)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if isinstance(run_or_aggregate, AggregateReport):
        path = outdir / "metrics_by_cell.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("cell\tmetric\tmean\tstd\n")
            for c in run_or_aggregate.cells:
                for key in METRIC_KEYS:
                    mean = "-" if c.mean[key] is None else format(c.mean[key], ".17g")
                    std = "-" if c.std[key] is None else format(c.std[key], ".17g")
                    fh.write(f"{c.label}\t{key}\t{mean}\t{std}\n")
        written.append(path)
        return written

    run: RunResult = run_or_aggregate
    if run.importance is None:
        raise EmptyReportError("run has no importance reports")
    for tag, report in run.importance.items():
        path = outdir / f"importance_{tag}.tsv"
        write_importance_data(report, path)
        written.append(path)
    if run.decorrelation is not None:
        link_path = outdir / "linkage.tsv"
        with open(link_path, "w", encoding="utf-8") as fh:
            fh.write("cluster_a\tcluster_b\tdistance\tsize\n")
            for a, b, dist, size in run.decorrelation.linkage.merges:
                fh.write(f"{a}\t{b}\t{format(dist, '.17g')}\t{size}\n")
        written.append(link_path)
        corr = run.decorrelation.correlation
        corr_path = outdir / "correlation.tsv"
        with open(corr_path, "w", encoding="utf-8") as fh:
            fh.write("feature\t" + "\t".join(corr.names) + "\n")
            for i, name in enumerate(corr.names):
                row = "\t".join(format(v, ".17g") for v in corr.rho[i])
                fh.write(f"{name}\t{row}\n")
        written.append(corr_path)
    return written


def render_images(run: RunResult, outdir) -> list[Path]:
    """Minimal static bar/heatmap images; requires matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if run.importance:
        for tag, report in run.importance.items():
            top = report.entries[:30]
            fig, ax = plt.subplots(figsize=(8, max(2, 0.25 * len(top))))
            ax.barh([e.name for e in reversed(top)], [e.score for e in reversed(top)])
            ax.set_xlabel("importance score")
            ax.set_title(tag)
            fig.tight_layout()
            path = outdir / f"importance_{tag}.png"
            fig.savefig(path, dpi=100)
            plt.close(fig)
            written.append(path)
    if run.decorrelation is not None:
        corr = run.decorrelation.correlation
        fig, ax = plt.subplots(figsize=(8, 7))
        im = ax.imshow(corr.rho, vmin=-1, vmax=1, cmap="PuOr")
        fig.colorbar(im, ax=ax)
        ax.set_title("feature rank-correlation")
        fig.tight_layout()
        path = outdir / "correlation.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
