"""Feature ranking: impurity-based (MDI), permutation, and the decorrelated
permutation pipeline (Spearman distances -> Ward clustering -> representative
selection -> retrain -> permutation on held-out rows)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gbt
from .errors import EmptyReportError
from .metrics import auc_roc, fractional_ranks
from .preprocess import EncodedMatrix

MDI = "MDI"
PERMUTATION_RAW = "permutation-raw"
PERMUTATION_DECORRELATED = "permutation-decorrelated"


@dataclass(frozen=True)
class ImportanceEntry:
    name: str
    score: float
    rank: int
    std: float | None = None


@dataclass(frozen=True)
class ImportanceReport:
    method: str
    entries: tuple[ImportanceEntry, ...]
    repeats: int | None = None
    raw_totals: tuple[float, ...] | None = None

    def score_of(self, name: str) -> float:
        for e in self.entries:
            if e.name == name:
                return e.score
        raise KeyError(name)

    def max_normalized(self) -> dict[str, float]:
        top = max((abs(e.score) for e in self.entries), default=0.0)
        if top == 0.0:
            return {e.name: 0.0 for e in self.entries}
        return {e.name: e.score / top for e in self.entries}


def _ranked(method, names, scores, stds=None, repeats=None, raw_totals=None) -> ImportanceReport:
    order = sorted(range(len(names)), key=lambda i: (-scores[i], names[i]))
    entries = tuple(
        ImportanceEntry(
            name=names[i],
            score=float(scores[i]),
            rank=rank + 1,
            std=None if stds is None else float(stds[i]),
        )
        for rank, i in enumerate(order)
    )
    return ImportanceReport(
        method=method,
        entries=entries,
        repeats=repeats,
        raw_totals=None if raw_totals is None else tuple(float(raw_totals[i]) for i in order),
    )


def mdi_importance(model: gbt.BoostedModel) -> ImportanceReport:
    """Per-feature sum of recorded split gains, normalized to sum 1."""
    totals = np.zeros(len(model.feature_names))
    for tree in model.trees:
        for feature, gain in tree.split_gains:
            totals[feature] += gain
    grand = totals.sum()
    if grand <= 0.0:
        raise EmptyReportError("model has no recorded splits")
    return _ranked(
        MDI,
        list(model.feature_names),
        totals / grand,
        raw_totals=totals,
    )


def _metric_value(metric: str, labels, predictions, scores) -> float:
    if metric == "acc":
        return float(np.mean(predictions == labels))
    if metric == "auc":
        return auc_roc(labels, scores)
    raise ValueError(f"unknown permutation metric {metric!r}")


def permutation_importance(
    model: gbt.BoostedModel,
    matrix: EncodedMatrix,
    labels,
    *,
    metric: str = "acc",
    repeats: int = 10,
    seed: int = 0,
    method_tag: str = PERMUTATION_RAW,
) -> ImportanceReport:
    """Mean drop of the metric over independent column permutations.

    A feature the model never splits on leaves predictions unchanged, so its
    score is exactly zero.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    labels = np.asarray(labels)
    # private copy: columns are permuted in place during evaluation
    X = np.array(matrix.values, dtype=np.float64, order="C")
    base_scores = gbt.predict_proba(model, X)
    base_pred = (base_scores >= 0.5).astype(np.int8)
    baseline = _metric_value(metric, labels, base_pred, base_scores)
    rng = np.random.default_rng(seed)
    n, m = X.shape
    means = np.zeros(m)
    stds = np.zeros(m)
    for j in range(m):
        drops = np.zeros(repeats)
        saved = X[:, j].copy()
        for r in range(repeats):
            X[:, j] = saved[rng.permutation(n)]
            scores = gbt.predict_proba(model, X)
            pred = (scores >= 0.5).astype(np.int8)
            drops[r] = baseline - _metric_value(metric, labels, pred, scores)
        X[:, j] = saved
        means[j] = drops.mean()
        stds[j] = drops.std()
    return _ranked(
        method_tag, list(matrix.names), means, stds=stds, repeats=repeats
    )


@dataclass(frozen=True)
class CorrelationMatrix:
    """Spearman rank-order coefficients; constant columns are flagged and
    correlate 0 with everything else."""

    names: tuple[str, ...]
    rho: np.ndarray
    constant: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return len(self.names)


def spearman_matrix(matrix: EncodedMatrix) -> CorrelationMatrix:
    """Fractional (average) ranks per column, then Pearson correlation of ranks."""
    X = matrix.values
    n, m = X.shape
    if n < 2:
        raise ValueError("correlation needs at least 2 rows")
    ranks = np.empty((n, m))
    for j in range(m):
        ranks[:, j] = fractional_ranks(X[:, j])
    centered = ranks - ranks.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    constant = np.flatnonzero(norms == 0.0)
    safe = np.where(norms == 0.0, 1.0, norms)
    z = centered / safe
    rho = z.T @ z
    rho[constant, :] = 0.0
    rho[:, constant] = 0.0
    np.fill_diagonal(rho, 1.0)
    np.clip(rho, -1.0, 1.0, out=rho)
    return CorrelationMatrix(
        names=matrix.names, rho=rho, constant=tuple(int(c) for c in constant)
    )


@dataclass(frozen=True)
class Linkage:
    """Agglomerative merge records: (cluster a, cluster b, distance, new size).

    Original features are clusters 0..m-1; the merge in row t creates cluster
    m+t. Ward distances are non-decreasing down the rows.
    """

    names: tuple[str, ...]
    merges: tuple[tuple[int, int, float, int], ...]


def ward_cluster(corr: CorrelationMatrix) -> Linkage:
    """Ward linkage over distances d = 1 - |rho| via the Lance-Williams update.

    Tie-break: the merge with the lexicographically smallest (a, b) id pair.
    """
    m = corr.size
    if m < 2:
        raise ValueError("clustering needs at least 2 features")
    d = 1.0 - np.abs(corr.rho)
    # squared inter-cluster Ward distances, indexed by cluster id
    total = 2 * m - 1
    D2 = np.full((total, total), np.inf)
    D2[:m, :m] = d**2
    np.fill_diagonal(D2, np.inf)
    size = np.zeros(total, dtype=np.int64)
    size[:m] = 1
    active = list(range(m))
    merges: list[tuple[int, int, float, int]] = []
    for step in range(m - 1):
        best = math.inf
        pair = (-1, -1)
        for ai in range(len(active)):
            for bi in range(ai + 1, len(active)):
                a, b = active[ai], active[bi]
                v = D2[a, b]
                if v < best:
                    best = v
                    pair = (a, b)
        a, b = pair
        new = m + step
        height = math.sqrt(best)
        size[new] = size[a] + size[b]
        merges.append((a, b, height, int(size[new])))
        for k in active:
            if k == a or k == b:
                continue
            D2[new, k] = D2[k, new] = (
                (size[a] + size[k]) * D2[a, k]
                + (size[b] + size[k]) * D2[b, k]
                - size[k] * D2[a, b]
            ) / (size[a] + size[b] + size[k])
        active.remove(a)
        active.remove(b)
        active.append(new)
    return Linkage(names=corr.names, merges=tuple(merges))


@dataclass(frozen=True)
class ClusterAssignment:
    """feature index -> cluster id, with one representative per cluster."""

    names: tuple[str, ...]
    cluster_of: tuple[int, ...]
    representatives: tuple[int, ...] = ()

    def members(self, cluster: int) -> list[int]:
        return [i for i, c in enumerate(self.cluster_of) if c == cluster]

    @property
    def n_clusters(self) -> int:
        return len(set(self.cluster_of))


def cut_clusters(linkage: Linkage, threshold: float) -> ClusterAssignment:
    """Connected components over merges strictly below the distance threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    m = len(linkage.names)
    parent = list(range(2 * m - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t, (a, b, dist, _) in enumerate(linkage.merges):
        if dist < threshold:
            new = m + t
            parent[find(a)] = new
            parent[find(b)] = new
    roots: dict[int, int] = {}
    cluster_of = []
    for i in range(m):
        r = find(i)
        if r not in roots:
            roots[r] = len(roots)
        cluster_of.append(roots[r])
    return ClusterAssignment(names=linkage.names, cluster_of=tuple(cluster_of))


def select_representatives(
    assignment: ClusterAssignment, corr: CorrelationMatrix
) -> ClusterAssignment:
    """Per cluster, the medoid: highest mean |rho| to co-members, ties by name."""
    reps = []
    for cluster in range(assignment.n_clusters):
        members = assignment.members(cluster)
        if len(members) == 1:
            reps.append(members[0])
            continue
        scored = []
        for i in members:
            others = [j for j in members if j != i]
            scored.append((-np.mean(np.abs(corr.rho[i, others])), corr.names[i], i))
        scored.sort()
        reps.append(scored[0][2])
    return ClusterAssignment(
        names=assignment.names,
        cluster_of=assignment.cluster_of,
        representatives=tuple(reps),
    )


@dataclass(frozen=True)
class DecorrelationResult:
    report: ImportanceReport
    correlation: CorrelationMatrix
    linkage: Linkage
    assignment: ClusterAssignment


def decorrelated_permutation_importance(
    train_matrix: EncodedMatrix,
    train_labels,
    test_matrix: EncodedMatrix,
    test_labels,
    trainer: Callable[[EncodedMatrix, np.ndarray], gbt.BoostedModel],
    *,
    threshold: float = 1.0,
    repeats: int = 10,
    seed: int = 0,
    metric: str = "acc",
) -> DecorrelationResult:
    """Cluster train features, keep one representative per cluster, retrain via
    ``trainer`` on representatives only, then rank them by permutation on the
    test rows."""
    corr = spearman_matrix(train_matrix)
    linkage = ward_cluster(corr)
    assignment = select_representatives(cut_clusters(linkage, threshold), corr)
    reps = sorted(assignment.representatives)
    sub_train = train_matrix.select_columns(reps)
    sub_test = test_matrix.select_columns(reps)
    model = trainer(sub_train, np.asarray(train_labels))
    report = permutation_importance(
        model,
        sub_test,
        test_labels,
        metric=metric,
        repeats=repeats,
        seed=seed,
        method_tag=PERMUTATION_DECORRELATED,
    )
    return DecorrelationResult(
        report=report, correlation=corr, linkage=linkage, assignment=assignment
    )
