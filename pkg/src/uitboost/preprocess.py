"""Fit-on-train / apply-everywhere transforms: one-hot, z-score, and PCA.

Encoding layout: numeric feature columns first (in schema order), then one
indicator block per categorical feature with columns named
``feature=category``. No reference level is dropped.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import RawTable
from .errors import SchemaError


@dataclass(frozen=True)
class EncodedMatrix:
    """Dense numeric matrix plus its ordered output-feature names."""

    values: np.ndarray
    names: tuple[str, ...]
    numeric_columns: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise SchemaError("encoded matrix shape does not match its names")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    def select_columns(self, columns) -> "EncodedMatrix":
        columns = list(columns)
        kept = set(columns)
        remap = {c: i for i, c in enumerate(columns)}
        return EncodedMatrix(
            values=np.ascontiguousarray(self.values[:, columns]),
            names=tuple(self.names[c] for c in columns),
            numeric_columns=tuple(
                remap[c] for c in self.numeric_columns if c in kept
            ),
        )


@dataclass(frozen=True)
class ZScoreParams:
    """Per-column population mean/std fitted on train rows; std 0 flags constants."""

    columns: tuple[int, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def constant_columns(self) -> tuple[int, ...]:
        return tuple(int(c) for c, s in zip(self.columns, self.std) if s == 0.0)


@dataclass(frozen=True)
class OneHotDict:
    """Per-categorical-feature category lists in first-seen (train) order."""

    categories: dict[str, tuple[str, ...]]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (m', r), columns orthonormal
    explained: np.ndarray  # fractions, non-increasing
    r: int


def fit_zscore(matrix: EncodedMatrix, numeric_columns=None) -> ZScoreParams:
    """Population mean/std per numeric column, computed on the given rows only."""
    if matrix.n_rows < 2:
        raise ValueError("z-score fitting needs at least 2 rows")
    cols = tuple(numeric_columns) if numeric_columns is not None else matrix.numeric_columns
    sub = matrix.values[:, list(cols)]
    return ZScoreParams(
        columns=cols,
        mean=sub.mean(axis=0),
        std=sub.std(axis=0),
    )


def apply_zscore(matrix: EncodedMatrix, params: ZScoreParams) -> EncodedMatrix:
    """Standardize the fitted columns; constant (std 0) columns map to zero."""
    for c in params.columns:
        if c >= matrix.n_columns:
            raise SchemaError("z-score params refer to a column beyond the matrix")
    values = matrix.values.copy()
    cols = list(params.columns)
    std = np.where(params.std == 0.0, 1.0, params.std)
    centered = (matrix.values[:, cols] - params.mean) / std
    centered[:, params.std == 0.0] = 0.0
    values[:, cols] = centered
    return EncodedMatrix(values=values, names=matrix.names, numeric_columns=matrix.numeric_columns)


def fit_onehot(table: RawTable, rows=None) -> OneHotDict:
    """Collect category vocabularies from the given (train) rows in first-seen order."""
    cat_specs = table.categorical_specs()
    rows = np.arange(table.n_rows) if rows is None else np.asarray(rows)
    categories: dict[str, tuple[str, ...]] = {}
    for j, spec in enumerate(cat_specs):
        col = table.categorical[rows, j].tolist()
        categories[spec.name] = tuple(dict.fromkeys(str(c) for c in col))
    return OneHotDict(categories=categories)


def apply_onehot(table: RawTable, onehot: OneHotDict, rows=None) -> EncodedMatrix:
    """Encode rows as [numeric columns, indicator blocks]; unseen categories map to zeros."""
    rows = np.arange(table.n_rows) if rows is None else np.asarray(rows)
    num_specs = table.numeric_specs()
    cat_specs = table.categorical_specs()
    if set(onehot.categories) != {s.name for s in cat_specs}:
        raise SchemaError("one-hot dictionary does not match the table's categorical features")
    n = len(rows)
    names = [s.name for s in num_specs]
    blocks = [table.numeric[rows]] if num_specs else [np.empty((n, 0))]
    for j, spec in enumerate(cat_specs):
        cats = onehot.categories[spec.name]
        block = np.zeros((n, len(cats)), dtype=np.float64)
        col = table.categorical[rows, j]
        for k, c in enumerate(cats):
            block[col == c, k] = 1.0
        blocks.append(block)
        names.extend(f"{spec.name}={c}" for c in cats)
    values = np.ascontiguousarray(np.hstack(blocks))
    return EncodedMatrix(
        values=values,
        names=tuple(names),
        numeric_columns=tuple(range(len(num_specs))),
    )


def fit_pca(matrix: EncodedMatrix, variance_target: float = 0.95) -> PcaModel:
    """PCA via SVD of the centered matrix.

    Keeps the smallest component count whose cumulative explained-variance
    fraction reaches the target. Sign convention: the largest-magnitude
    loading of each component is positive.
    """
    if not 0.0 < variance_target <= 1.0:
        raise ValueError("variance_target must lie in (0, 1]")
    if matrix.n_rows < 2:
        raise ValueError("PCA needs at least 2 rows")
    mean = matrix.values.mean(axis=0)
    centered = matrix.values - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2
    total = var.sum()
    fractions = var / total if total > 0 else np.zeros_like(var)
    cumulative = np.cumsum(fractions)
    r = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    r = min(r, len(fractions))
    components = vt[:r].T.copy()
    for k in range(r):
        lead = np.argmax(np.abs(components[:, k]))
        if components[lead, k] < 0:
            components[:, k] = -components[:, k]
    return PcaModel(mean=mean, components=components, explained=fractions[:r].copy(), r=r)


def apply_pca(matrix: EncodedMatrix, model: PcaModel) -> EncodedMatrix:
    if matrix.n_columns != model.mean.shape[0]:
        raise SchemaError("PCA model fitted on a different column count")
    scores = (matrix.values - model.mean) @ model.components
    return EncodedMatrix(
        values=np.ascontiguousarray(scores),
        names=tuple(f"PC{k + 1}" for k in range(model.r)),
        numeric_columns=(),
    )


@dataclass(frozen=True)
class PreprocessConfig:
    pca_enabled: bool = False
    pca_variance_target: float = 0.95


@dataclass
class Preprocessor:
    """Orchestrates one-hot -> z-score -> optional PCA with train-only fitting."""

    config: PreprocessConfig = field(default_factory=PreprocessConfig)
    onehot: OneHotDict | None = None
    zscore: ZScoreParams | None = None
    pca: PcaModel | None = None

    def fit(self, table: RawTable, rows) -> "Preprocessor":
        rows = np.asarray(rows)
        self.onehot = fit_onehot(table, rows)
        encoded = apply_onehot(table, self.onehot, rows)
        self.zscore = fit_zscore(encoded)
        if self.config.pca_enabled:
            scaled = apply_zscore(encoded, self.zscore)
            self.pca = fit_pca(scaled, self.config.pca_variance_target)
        return self

    def transform(self, table: RawTable, rows=None) -> EncodedMatrix:
        if self.onehot is None or self.zscore is None:
            raise ValueError("preprocessor not fitted")
        encoded = apply_onehot(table, self.onehot, rows)
        scaled = apply_zscore(encoded, self.zscore)
        if self.config.pca_enabled:
            if self.pca is None:
                raise ValueError("preprocessor not fitted with PCA")
            return apply_pca(scaled, self.pca)
        return scaled


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_preprocessor(prep: Preprocessor, path) -> None:
    """Write the fitted transforms as a text artifact (floats at 17 significant digits)."""
    if prep.onehot is None or prep.zscore is None:
        raise ValueError("cannot save an unfitted preprocessor")
    lines = ["uitboost-preprocess v1"]
    lines.append(
        f"config pca_enabled={int(prep.config.pca_enabled)} "
        f"variance_target={_fmt(prep.config.pca_variance_target)}"
    )
    lines.append(f"onehot {len(prep.onehot.categories)}")
    for name, cats in prep.onehot.categories.items():
        lines.append(f"feature {json.dumps(name)} {len(cats)}")
        for c in cats:
            lines.append(f"cat {json.dumps(c)}")
    lines.append(f"zscore {len(prep.zscore.columns)}")
    for c, mu, sigma in zip(prep.zscore.columns, prep.zscore.mean, prep.zscore.std):
        lines.append(f"col {c} {_fmt(mu)} {_fmt(sigma)}")
    if prep.pca is not None:
        m, r = prep.pca.components.shape
        lines.append(f"pca {m} {r}")
        lines.append("mean " + " ".join(_fmt(v) for v in prep.pca.mean))
        for row in prep.pca.components:
            lines.append("comp " + " ".join(_fmt(v) for v in row))
        lines.append("evr " + " ".join(_fmt(v) for v in prep.pca.explained))
    else:
        lines.append("pca none")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_preprocessor(path) -> Preprocessor:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "uitboost-preprocess v1":
        raise ValueError(f"{path}: not a v1 preprocessor artifact")
    at = 1
    cfg_parts = dict(kv.split("=") for kv in lines[at].split()[1:])
    config = PreprocessConfig(
        pca_enabled=bool(int(cfg_parts["pca_enabled"])),
        pca_variance_target=float(cfg_parts["variance_target"]),
    )
    at += 1
    n_feat = int(lines[at].split()[1])
    at += 1
    categories: dict[str, tuple[str, ...]] = {}
    for _ in range(n_feat):
        prefix, count_s = lines[at].rsplit(" ", 1)
        name = json.loads(prefix[len("feature "):])
        count = int(count_s)
        at += 1
        cats = []
        for _ in range(count):
            cats.append(json.loads(lines[at][4:]))
            at += 1
        categories[name] = tuple(cats)
    n_z = int(lines[at].split()[1])
    at += 1
    cols, means, stds = [], [], []
    for _ in range(n_z):
        _, c, mu, sigma = lines[at].split()
        cols.append(int(c))
        means.append(float(mu))
        stds.append(float(sigma))
        at += 1
    zscore = ZScoreParams(
        columns=tuple(cols), mean=np.array(means), std=np.array(stds)
    )
    pca = None
    head = lines[at].split()
    if head[0] != "pca":
        raise ValueError(f"{path}: malformed artifact at line {at + 1}")
    if head[1] != "none":
        m, r = int(head[1]), int(head[2])
        at += 1
        mean = np.array([float(v) for v in lines[at].split()[1:]])
        at += 1
        comps = np.empty((m, r))
        for i in range(m):
            comps[i] = [float(v) for v in lines[at].split()[1:]]
            at += 1
        explained = np.array([float(v) for v in lines[at].split()[1:]])
        pca = PcaModel(mean=mean, components=comps, explained=explained, r=r)
    return Preprocessor(
        config=config, onehot=OneHotDict(categories=categories), zscore=zscore, pca=pca
    )
