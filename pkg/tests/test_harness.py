import dataclasses
import json

import numpy as np
import pytest

from uitboost import harness
from uitboost.dataset import LAWFUL, UNLAWFUL, sample_balanced, split_deterministic
from uitboost.errors import EmptyReportError, ExperimentError
from uitboost.harness import (
    AggregateReport,
    CellAggregate,
    ExperimentConfig,
    SyntheticSpec,
    derive_seed,
    emit_plot_data,
    generate_synthetic,
    merge_reports,
    parse_report,
    render_report,
    run_experiment,
    run_repeated,
    write_aggregate,
    load_aggregate,
)
from uitboost.importance import ImportanceEntry, ImportanceReport
from uitboost.tuning import CvConfig, SearchSpace

TINY_SPEC = SyntheticSpec(
    n_rows=160,
    numeric_features=6,
    categorical_features=1,
    informative=2,
    correlated_blocks=1,
    block_size=2,
    separation=3.0,
    label_noise=0.0,
    seed=1,
)

TINY_CONFIG = ExperimentConfig(
    repetitions=2,
    master_seed=5,
    cv=CvConfig(folds=3, tuning_iterations=2, early_stop_patience=5),
    space=SearchSpace(
        ntrees=(8, 16),
        eta=(0.2, 0.4),
        max_depth=(2, 3),
        gamma=(0.0, 0.2),
        lam=(0.0, 1.0),
        row_sample=(0.8, 1.0),
        col_sample=(0.8, 1.0),
    ),
    importance_enabled=False,
    permutation_repeats=3,
)


class TestSyntheticGenerator:
    def test_deterministic(self):
        a = generate_synthetic(TINY_SPEC)
        b = generate_synthetic(TINY_SPEC)
        assert np.array_equal(a.numeric, b.numeric)
        assert np.array_equal(a.categorical, b.categorical)
        assert np.array_equal(a.labels, b.labels)

    def test_balanced_labels_and_shape(self):
        table = generate_synthetic(TINY_SPEC)
        assert table.n_rows == 160
        assert table.n_features == 7
        assert int(np.sum(table.labels == LAWFUL)) == 80
        assert int(np.sum(table.labels == UNLAWFUL)) == 80

    def test_label_noise_preserves_balance(self):
        spec = dataclasses.replace(TINY_SPEC, label_noise=0.1)
        table = generate_synthetic(spec)
        assert int(np.sum(table.labels == LAWFUL)) == 80

    def test_informative_features_shift_with_class(self):
        table = generate_synthetic(dataclasses.replace(TINY_SPEC, n_rows=2000))
        pos = table.numeric[table.labels == LAWFUL, 0]
        neg = table.numeric[table.labels == UNLAWFUL, 0]
        assert pos.mean() - neg.mean() == pytest.approx(3.0, abs=0.2)

    def test_zero_separation_removes_all_signal(self):
        spec = dataclasses.replace(TINY_SPEC, n_rows=2000, separation=0.0)
        table = generate_synthetic(spec)
        pos = table.numeric[table.labels == LAWFUL]
        neg = table.numeric[table.labels == UNLAWFUL]
        assert np.all(np.abs(pos.mean(axis=0) - neg.mean(axis=0)) < 0.2)

    def test_correlated_block_tracks_source(self):
        table = generate_synthetic(TINY_SPEC)
        source = table.numeric[:, 0]
        copy = table.numeric[:, 2]  # first block copy sits after informative cols
        rho = np.corrcoef(source, copy)[0, 1]
        assert rho > 0.95

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(informative=200, numeric_features=10)
        with pytest.raises(ValueError):
            SyntheticSpec(label_noise=0.7)


class TestSeeds:
    def test_derive_seed_stable_and_sensitive(self):
        a = derive_seed(7, 0, "balance")
        assert a == derive_seed(7, 0, "balance")
        assert a != derive_seed(7, 1, "balance")
        assert a != derive_seed(7, 0, "split")
        assert a != derive_seed(8, 0, "balance")

    def test_repetitions_resample_lawful_only(self):
        table = generate_synthetic(dataclasses.replace(TINY_SPEC, n_rows=400))
        # make lawful the majority so balancing actually samples
        majority = table.subset(
            np.concatenate(
                [table.class_indices(UNLAWFUL)[:100], table.class_indices(LAWFUL)]
            )
        )
        s0 = sample_balanced(majority, 0.5, derive_seed(5, 0, harness.STAGE_BALANCE))
        s1 = sample_balanced(majority, 0.5, derive_seed(5, 1, harness.STAGE_BALANCE))
        n_unlawful = 100
        assert np.array_equal(s0.numeric[:n_unlawful], s1.numeric[:n_unlawful])
        assert not np.array_equal(s0.numeric[n_unlawful:], s1.numeric[n_unlawful:])

    def test_pca_toggle_keeps_sampling_and_split(self):
        table = generate_synthetic(TINY_SPEC)
        run_plain = run_experiment(table, TINY_CONFIG, 0)
        run_pca = run_experiment(
            table, dataclasses.replace(TINY_CONFIG, pca_enabled=True), 0
        )
        assert run_plain.seeds == run_pca.seeds
        split_a = split_deterministic(table, 0.8, run_plain.seeds[harness.STAGE_SPLIT])
        split_b = split_deterministic(table, 0.8, run_pca.seeds[harness.STAGE_SPLIT])
        assert np.array_equal(split_a.train, split_b.train)


class TestRunExperiment:
    def test_rerun_bit_identical(self):
        table = generate_synthetic(TINY_SPEC)
        a = run_experiment(table, TINY_CONFIG, 1)
        b = run_experiment(table, TINY_CONFIG, 1)
        assert a.params == b.params
        assert a.metric_dict() == b.metric_dict()
        assert a.tuning == b.tuning

    def test_learns_separable_data(self):
        # fold AUC saturates almost immediately on this tiny spec, so the
        # median-best-round refit stays deliberately small; ranking quality is
        # the stable signal here
        table = generate_synthetic(TINY_SPEC)
        run = run_experiment(table, TINY_CONFIG, 0)
        assert run.metrics.auc >= 0.95
        assert run.metrics.acc >= 0.8

    def test_transaction_cap(self):
        table = generate_synthetic(dataclasses.replace(TINY_SPEC, n_rows=400))
        config = dataclasses.replace(TINY_CONFIG, transactions=100)
        run = run_experiment(table, config, 0)
        # 100 rows -> 80 train / 20 test by the 0.8 fraction
        assert run.metrics is not None
        cap_seed = run.seeds[harness.STAGE_CAP]
        assert cap_seed == derive_seed(TINY_CONFIG.master_seed, 0, harness.STAGE_CAP)

    def test_feature_subset_by_schema_order(self):
        table = generate_synthetic(TINY_SPEC)
        config = dataclasses.replace(TINY_CONFIG, features=3)
        run = run_experiment(table, config, 0)
        assert run.metrics.acc is not None

    def test_importance_reports_included_when_enabled(self):
        table = generate_synthetic(TINY_SPEC)
        config = dataclasses.replace(TINY_CONFIG, importance_enabled=True)
        run = run_experiment(table, config, 0)
        assert set(run.importance) == {
            "mdi",
            "permutation_raw",
            "permutation_decorrelated",
        }
        assert run.decorrelation is not None


class TestRunRepeated:
    def test_single_repetition_aggregate_is_that_run(self):
        table = generate_synthetic(TINY_SPEC)
        config = dataclasses.replace(TINY_CONFIG, repetitions=1)
        report = run_repeated(table, config)
        cell = report.cells[0]
        assert cell.repetitions == 1
        run = report.results[0]
        for key, value in run.metric_dict().items():
            assert cell.mean[key] == value
            assert cell.std[key] == 0.0

    def test_means_within_run_extremes(self):
        table = generate_synthetic(TINY_SPEC)
        report = run_repeated(table, TINY_CONFIG)
        cell = report.cells[0]
        for key in ("ACC", "AUC"):
            values = [r[key] for r in cell.runs]
            assert min(values) <= cell.mean[key] <= max(values)

    def test_failure_reports_repetition_index(self):
        table = generate_synthetic(TINY_SPEC)
        config = dataclasses.replace(TINY_CONFIG, features=1000)
        with pytest.raises(ExperimentError, match="repetition 0"):
            run_repeated(table, config)

    def test_parallel_equals_serial(self):
        table = generate_synthetic(TINY_SPEC)
        serial = run_repeated(table, TINY_CONFIG, jobs=1)
        parallel = run_repeated(table, TINY_CONFIG, jobs=2)
        assert serial.cells[0].mean == parallel.cells[0].mean
        assert serial.cells[0].runs == parallel.cells[0].runs

    def test_tune_once_reuses_params(self):
        table = generate_synthetic(TINY_SPEC)
        config = dataclasses.replace(TINY_CONFIG, tune_once=True)
        report = run_repeated(table, config)
        first, second = report.results
        assert second.tuning is None
        assert first.params.ntrees == second.params.ntrees
        assert first.params.seed != second.params.seed  # per-repetition refit seed


class TestReports:
    def sample_aggregate(self):
        mean = {"ACC": 0.9902, "PRE": 0.9732, "TPR": 0.9898, "FNR": 0.0102,
                "FPR": 0.0093, "TNR": 0.9907, "AUC": 0.9990}
        std = {k: 0.001 for k in mean}
        runs = [dict(mean), dict(mean)]
        cell = CellAggregate(label="3984tx/110f/noPCA", mean=mean, std=std, runs=runs)
        return AggregateReport(cells=[cell], master_seed=3)

    def test_percent_formatting_two_decimals(self):
        text = render_report(self.sample_aggregate())
        assert "99.02" in text
        assert "1.02" in text

    def test_parse_roundtrip_to_two_decimals(self):
        report = self.sample_aggregate()
        parsed = parse_report(render_report(report))
        cell = parsed["3984tx/110f/noPCA"]
        for key in ("ACC", "PRE", "TPR", "FNR", "FPR", "TNR"):
            assert cell[key] == pytest.approx(100 * report.cells[0].mean[key], abs=0.005)

    def test_undefined_rates_render_as_dash(self):
        report = self.sample_aggregate()
        report.cells[0].mean["PRE"] = None
        text = render_report(report)
        parsed = parse_report(text)
        assert parsed["3984tx/110f/noPCA"]["PRE"] is None

    def test_aggregate_json_roundtrip(self, tmp_path):
        report = self.sample_aggregate()
        path = tmp_path / "aggregate.json"
        write_aggregate(report, path)
        loaded = load_aggregate(path)
        assert loaded.cells[0].mean == report.cells[0].mean
        assert render_report(loaded) == render_report(report)

    def test_merge_reports_concatenates_cells(self):
        merged = merge_reports([self.sample_aggregate(), self.sample_aggregate()])
        assert len(merged.cells) == 2


class TestPlotData:
    def test_importance_rows_sorted_descending(self, tmp_path):
        table = generate_synthetic(TINY_SPEC)
        config = dataclasses.replace(TINY_CONFIG, importance_enabled=True)
        run = run_experiment(table, config, 0)
        written = emit_plot_data(run, tmp_path)
        mdi = (tmp_path / "importance_mdi.tsv").read_text().splitlines()[1:]
        scores = [float(line.split("\t")[1]) for line in mdi]
        assert scores == sorted(scores, reverse=True)
        assert (tmp_path / "linkage.tsv").exists()
        assert (tmp_path / "correlation.tsv").exists()
        assert all(p.exists() for p in written)

    def test_empty_report_rejected(self, tmp_path):
        report = ImportanceReport(method="MDI", entries=())
        run = harness.RunResult(
            repetition=0,
            params=None,
            metrics=None,
            seeds={},
            importance={"mdi": report},
        )
        with pytest.raises(EmptyReportError):
            emit_plot_data(run, tmp_path)

    def test_aggregate_plot_data(self, tmp_path):
        report = TestReports().sample_aggregate()
        written = emit_plot_data(report, tmp_path)
        lines = written[0].read_text().splitlines()
        assert lines[0] == "cell\tmetric\tmean\tstd"
        assert len(lines) == 1 + 7
