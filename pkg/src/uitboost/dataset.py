"""Loading, validation, balancing, and splitting of labeled transaction tables.

Tables are column-oriented: numeric cells live in one float64 matrix,
categorical cells in one object matrix, and labels are stored as int8 with
lawful mapped to 1 (positive class) and unlawful to 0.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BalanceWarning,
    MissingValueError,
    NumericParseError,
    SchemaError,
    UnknownLabelError,
)

LAWFUL = 1
UNLAWFUL = 0

NUMERIC = "numeric"
CATEGORICAL = "categorical"

_LABEL_VALUES = {
    "lawful": LAWFUL,
    "1": LAWFUL,
    "unlawful": UNLAWFUL,
    "0": UNLAWFUL,
}
_LABEL_TEXT = {LAWFUL: "lawful", UNLAWFUL: "unlawful"}


@dataclass(frozen=True)
class FeatureSpec:
    """One feature column: its name, kind, and 0-based position among features."""

    name: str
    kind: str
    column_index: int

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint, exhaustive train/test row indices of one table."""

    train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class RawTable:
    """Labeled transaction rows before encoding.

    ``numeric`` holds the numeric feature columns (in spec order) and
    ``categorical`` the categorical ones; ``specs`` maps each feature back to
    its position and storage. Instances are immutable; all mutating-style
    operations return new tables.
    """

    specs: tuple[FeatureSpec, ...]
    numeric: np.ndarray
    categorical: np.ndarray
    labels: np.ndarray
    label_name: str = "status"

    def __post_init__(self) -> None:
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise SchemaError("feature names are not unique")
        if [s.column_index for s in self.specs] != list(range(len(self.specs))):
            raise SchemaError("specs must be ordered by column_index covering 0..m-1")
        n = len(self.labels)
        if self.numeric.shape[0] != n or self.categorical.shape[0] != n:
            raise SchemaError("row counts of numeric/categorical blocks and labels differ")
        n_num = sum(1 for s in self.specs if s.kind == NUMERIC)
        n_cat = len(self.specs) - n_num
        if self.numeric.shape[1] != n_num or self.categorical.shape[1] != n_cat:
            raise SchemaError("column counts do not match the feature specs")
        if n < 2:
            raise SchemaError("a table needs at least 2 rows")
        if not (np.any(self.labels == LAWFUL) and np.any(self.labels == UNLAWFUL)):
            raise SchemaError("both classes must be present")

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return len(self.specs)

    def numeric_specs(self) -> list[FeatureSpec]:
        return [s for s in self.specs if s.kind == NUMERIC]

    def categorical_specs(self) -> list[FeatureSpec]:
        return [s for s in self.specs if s.kind == CATEGORICAL]

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def subset(self, rows) -> "RawTable":
        rows = np.asarray(rows, dtype=np.int64)
        return RawTable(
            specs=self.specs,
            numeric=self.numeric[rows],
            categorical=self.categorical[rows],
            labels=self.labels[rows],
            label_name=self.label_name,
        )

    def select_features(self, count: int) -> "RawTable":
        """Keep the first ``count`` features by schema order."""
        if not 1 <= count <= self.n_features:
            raise SchemaError(f"cannot select {count} of {self.n_features} features")
        if count == self.n_features:
            return self
        kept = self.specs[:count]
        num_keep = [i for i, s in enumerate(self.numeric_specs()) if s.column_index < count]
        cat_keep = [i for i, s in enumerate(self.categorical_specs()) if s.column_index < count]
        return RawTable(
            specs=kept,
            numeric=self.numeric[:, num_keep],
            categorical=self.categorical[:, cat_keep],
            labels=self.labels,
            label_name=self.label_name,
        )

    def row_cells(self, i: int) -> list[str]:
        """Cells of row ``i`` in spec order, formatted for CSV output."""
        cells: list[str] = []
        num_at = 0
        cat_at = 0
        for s in self.specs:
            if s.kind == NUMERIC:
                cells.append(format(self.numeric[i, num_at], ".17g"))
                num_at += 1
            else:
                cells.append(str(self.categorical[i, cat_at]))
                cat_at += 1
        return cells


def load_schema(path) -> tuple[list[FeatureSpec], str]:
    """Read a schema sidecar: feature names/kinds in file order plus the label column."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "label" not in doc or "features" not in doc:
        raise SchemaError("schema file needs 'label' and 'features' entries")
    specs = [
        FeatureSpec(f["name"], f["kind"], i) for i, f in enumerate(doc["features"])
    ]
    return specs, doc["label"]


def save_schema(table: RawTable, path) -> None:
    doc = {
        "label": table.label_name,
        "features": [
            {"name": s.name, "kind": s.kind}
            for s in table.specs
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_csv(path, schema: list[FeatureSpec], label_column: str) -> RawTable:
    """Parse a CSV file into a RawTable.

    The header must contain the label column plus exactly the schema's feature
    names, with features appearing in schema order once the label column is
    removed. Numeric cells must parse as floats; empty cells are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        if label_column not in header:
            raise SchemaError(f"{path}: label column {label_column!r} not in header")
        label_pos = header.index(label_column)
        feature_header = [h for i, h in enumerate(header) if i != label_pos]
        expected = [s.name for s in schema]
        if feature_header != expected:
            raise SchemaError(
                f"{path}: header features {feature_header!r} do not match schema {expected!r}"
            )

        num_specs = [s for s in schema if s.kind == NUMERIC]
        cat_specs = [s for s in schema if s.kind == CATEGORICAL]
        num_cols = [s.column_index for s in num_specs]
        cat_cols = [s.column_index for s in cat_specs]

        numeric_rows: list[list[float]] = []
        categorical_rows: list[list[str]] = []
        labels: list[int] = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{row_no}: expected {len(header)} cells, got {len(row)}")
            label_cell = row[label_pos]
            cells = [c for i, c in enumerate(row) if i != label_pos]
            for j, cell in enumerate(cells):
                if cell == "":
                    raise MissingValueError(
                        f"{path}:{row_no}: missing value in column {expected[j]!r}"
                    )
            num_row = []
            for j in num_cols:
                try:
                    num_row.append(float(cells[j]))
                except ValueError:
                    raise NumericParseError(
                        f"{path}:{row_no}: cannot parse {cells[j]!r} in numeric column "
                        f"{expected[j]!r}"
                    ) from None
            numeric_rows.append(num_row)
            categorical_rows.append([cells[j] for j in cat_cols])
            key = label_cell.strip().lower()
            if key not in _LABEL_VALUES:
                raise UnknownLabelError(f"{path}:{row_no}: unknown label value {label_cell!r}")
            labels.append(_LABEL_VALUES[key])

    n = len(labels)
    # re-index numeric/categorical specs to storage order
    return RawTable(
        specs=tuple(schema),
        numeric=np.array(numeric_rows, dtype=np.float64).reshape(n, len(num_cols)),
        categorical=np.array(categorical_rows, dtype=object).reshape(n, len(cat_cols)),
        labels=np.array(labels, dtype=np.int8),
        label_name=label_column,
    )


def write_csv(table: RawTable, path) -> None:
    """Serialize a table; numeric cells are printed at 17 significant digits."""
    header = [s.name for s in table.specs]
    header.append(table.label_name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(table.n_rows):
            writer.writerow(table.row_cells(i) + [_LABEL_TEXT[int(table.labels[i])]])


def sample_balanced(table: RawTable, ratio: float = 0.5, seed: int = 0) -> RawTable:
    """Balance classes by keeping every unlawful row and downsampling lawful ones.

    Lawful rows are sampled without replacement until the counts match. When
    the lawful class is already the smaller one, the table is returned
    unchanged and a BalanceWarning is issued.
    """
    if ratio != 0.5:
        raise ValueError("only the 0.5:0.5 ratio is supported")
    unlawful = table.class_indices(UNLAWFUL)
    lawful = table.class_indices(LAWFUL)
    if len(lawful) < len(unlawful):
        warnings.warn(
            "lawful class smaller than unlawful; returning table unchanged",
            BalanceWarning,
            stacklevel=2,
        )
        return table
    rng = np.random.default_rng(seed)
    chosen = rng.choice(lawful, size=len(unlawful), replace=False)
    return table.subset(np.concatenate([unlawful, chosen]))


def split_deterministic(table: RawTable, train_fraction: float, seed: int) -> SplitIndices:
    """Stratified train/test split; train count is floor(class_count * fraction) per class."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_parts = []
    test_parts = []
    for label in (UNLAWFUL, LAWFUL):
        idx = table.class_indices(label)
        if len(idx) < 2:
            raise ValueError(f"class {label} has fewer than 2 rows; cannot stratify")
        perm = rng.permutation(idx)
        cut = int(np.floor(len(idx) * train_fraction))
        train_parts.append(perm[:cut])
        test_parts.append(perm[cut:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return SplitIndices(train=train, test=test)
