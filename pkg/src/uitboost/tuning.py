"""Random hyperparameter search under stratified k-fold CV with AUC early stopping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gbt
from .dataset import LAWFUL, UNLAWFUL, RawTable
from .preprocess import PreprocessConfig, Preprocessor


@dataclass(frozen=True)
class SearchSpace:
    """Per-hyperparameter bounds; integers uniform over integers, eta log-uniform."""

    ntrees: tuple[int, int] = (100, 600)
    eta: tuple[float, float] = (0.01, 0.3)
    max_depth: tuple[int, int] = (4, 20)
    gamma: tuple[float, float] = (0.0, 5.0)
    lam: tuple[float, float] = (0.0, 10.0)
    row_sample: tuple[float, float] = (0.5, 1.0)
    col_sample: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self) -> None:
        for name in ("ntrees", "eta", "max_depth", "gamma", "lam", "row_sample", "col_sample"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
        if self.eta[0] <= 0:
            raise ValueError("eta lower bound must be positive")

    def to_dict(self) -> dict:
        return {
            "ntrees": list(self.ntrees),
            "eta": list(self.eta),
            "max_depth": list(self.max_depth),
            "gamma": list(self.gamma),
            "lam": list(self.lam),
            "row_sample": list(self.row_sample),
            "col_sample": list(self.col_sample),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchSpace":
        return cls(**{k: tuple(v) for k, v in doc.items()})


@dataclass(frozen=True)
class CvConfig:
    folds: int = 5
    tuning_iterations: int = 5
    early_stop_patience: float = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.tuning_iterations < 1:
            raise ValueError("tuning_iterations must be at least 1")


@dataclass(frozen=True)
class CandidateRecord:
    params: gbt.Hyperparams
    fold_aucs: tuple[float, ...]
    best_rounds: tuple[int, ...]

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_aucs))

    @property
    def std_auc(self) -> float:
        return float(np.std(self.fold_aucs))


@dataclass(frozen=True)
class TuningResult:
    best: gbt.Hyperparams
    candidates: tuple[CandidateRecord, ...]

    @property
    def best_record(self) -> CandidateRecord:
        for rec in self.candidates:
            if rec.params == self.best:
                return rec
        raise ValueError("best candidate missing from records")

    def to_text(self) -> str:
        lines = ["uitboost-tuning v1"]
        for i, rec in enumerate(self.candidates):
            mark = "*" if rec.params == self.best else " "
            lines.append(f"candidate {i}{mark} mean_auc={rec.mean_auc:.6f} std={rec.std_auc:.6f}")
            lines.append("  params " + " ".join(
                f"{k}={v}" for k, v in rec.params.to_dict().items()
            ))
            lines.append("  fold_auc " + " ".join(f"{a:.6f}" for a in rec.fold_aucs))
            lines.append("  best_round " + " ".join(str(r) for r in rec.best_rounds))
        return "\n".join(lines) + "\n"


def kfold_split(labels, folds: int, seed: int) -> list[np.ndarray]:
    """Stratified fold index lists; per-class fold sizes differ by at most one."""
    labels = np.asarray(labels)
    parts: list[list[np.ndarray]] = [[] for _ in range(folds)]
    rng = np.random.default_rng(seed)
    for label in (UNLAWFUL, LAWFUL):
        idx = np.flatnonzero(labels == label)
        if len(idx) < folds:
            raise ValueError(f"class {label} has {len(idx)} rows, fewer than {folds} folds")
        perm = rng.permutation(idx)
        for f, chunk in enumerate(np.array_split(perm, folds)):
            parts[f].append(chunk)
    return [np.sort(np.concatenate(chunks)) for chunks in parts]


def draw_candidate(space: SearchSpace, rng: np.random.Generator) -> gbt.Hyperparams:
    """One uniform draw per bounded hyperparameter, plus a recorded training seed."""
    ntrees = int(rng.integers(space.ntrees[0], space.ntrees[1] + 1))
    eta = float(np.exp(rng.uniform(math.log(space.eta[0]), math.log(space.eta[1]))))
    max_depth = int(rng.integers(space.max_depth[0], space.max_depth[1] + 1))
    gamma = float(rng.uniform(*space.gamma))
    lam = float(rng.uniform(*space.lam))
    row_sample = float(rng.uniform(*space.row_sample))
    col_sample = float(rng.uniform(*space.col_sample))
    seed = int(rng.integers(0, 2**31 - 1))
    return gbt.Hyperparams(
        ntrees=ntrees,
        eta=eta,
        max_depth=max_depth,
        gamma=gamma,
        lam=lam,
        row_sample=row_sample,
        col_sample=col_sample,
        seed=seed,
    )


@dataclass(frozen=True)
class CvOutcome:
    mean_auc: float
    fold_aucs: tuple[float, ...]
    best_rounds: tuple[int, ...]


def cross_validate(
    table: RawTable,
    candidate: gbt.Hyperparams,
    cv: CvConfig,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> CvOutcome:
    """Per fold: fit preprocessing on the fold-train rows only, train monitoring
    validation AUC, and report the best-AUC round. Fold AUCs are averaged."""
    folds = kfold_split(table.labels, cv.folds, cv.seed)
    all_rows = np.arange(table.n_rows)
    fold_aucs: list[float] = []
    best_rounds: list[int] = []
    for val_rows in folds:
        train_rows = np.setdiff1d(all_rows, val_rows)
        prep = Preprocessor(preprocess).fit(table, train_rows)
        X_train = prep.transform(table, train_rows)
        X_val = prep.transform(table, val_rows)
        model = gbt.train(
            X_train,
            table.labels[train_rows],
            candidate,
            eval_set=(X_val, table.labels[val_rows]),
            patience=cv.early_stop_patience,
        )
        fold_aucs.append(max(model.eval_history))
        best_rounds.append(model.best_round)
    return CvOutcome(
        mean_auc=float(np.mean(fold_aucs)),
        fold_aucs=tuple(fold_aucs),
        best_rounds=tuple(best_rounds),
    )


def random_search(
    table: RawTable,
    space: SearchSpace,
    cv: CvConfig,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> TuningResult:
    """Draw, cross-validate, and rank candidates by mean validation AUC.

    Ties break toward lower ntrees, then lower max_depth, then draw order.
    """
    rng = np.random.default_rng(cv.seed)
    records: list[CandidateRecord] = []
    for _ in range(cv.tuning_iterations):
        candidate = draw_candidate(space, rng)
        outcome = cross_validate(table, candidate, cv, preprocess)
        records.append(
            CandidateRecord(
                params=candidate,
                fold_aucs=outcome.fold_aucs,
                best_rounds=outcome.best_rounds,
            )
        )
    best = min(
        records,
        key=lambda r: (-r.mean_auc, r.params.ntrees, r.params.max_depth),
    )
    return TuningResult(best=best.params, candidates=tuple(records))


def final_round_count(record: CandidateRecord) -> int:
    """Rounds for the refit: the median best round across folds, rounded up."""
    return max(1, int(math.ceil(float(np.median(record.best_rounds)))))
