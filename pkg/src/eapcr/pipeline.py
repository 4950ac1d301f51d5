"""Raw heterogeneous rows -> fixed-length integer index vectors.

Categorical columns are dictionary-encoded (index 0 reserved for unseen
values, observed values numbered 1..K in lexicographic order). Numerical
columns are discretized at equal-frequency (empirical quantile) edges fitted
on training data. Each column owns an independent index space; the model
offsets them into one shared embedding table.

Fitted objects are frozen and never mutated by ``transform``; fitting a
pipeline on the training portion only is the caller's responsibility (the
split helpers at the bottom of this module hand out index partitions for
that purpose).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import ConfigError, DataError, FitError, ImputationError

Row = Mapping[str, Any]

CATEGORICAL = "categorical"
NUMERICAL = "numerical"


class FeatureColumn(BaseModel):
    model_config = {"frozen": True}

    name: str
    kind: Literal["categorical", "numerical"]
    n_bins: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _bins_iff_numerical(self):
        if self.kind == NUMERICAL and self.n_bins is None:
            raise ValueError(f"numerical column {self.name!r} needs n_bins")
        if self.kind == CATEGORICAL and self.n_bins is not None:
            raise ValueError(f"categorical column {self.name!r} must not set n_bins")
        return self


class FeatureSchema(BaseModel):
    """Ordered feature columns plus the target column names."""

    model_config = {"frozen": True}

    columns: tuple[FeatureColumn, ...]
    targets: tuple[str, ...]

    @model_validator(mode="after")
    def _check(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature column names")
        if len(names) < 2:
            raise ValueError("need at least 2 feature columns")
        if not self.targets:
            raise ValueError("need at least one target column")
        overlap = set(names) & set(self.targets)
        if overlap:
            raise ValueError(f"target columns overlap feature columns: {sorted(overlap)}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate target column names")
        return self

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def with_bins(self, n_bins: int) -> "FeatureSchema":
        """Copy of the schema with every numerical column set to n_bins."""
        cols = tuple(
            c if c.kind == CATEGORICAL else FeatureColumn(name=c.name, kind=c.kind, n_bins=n_bins)
            for c in self.columns)
        return FeatureSchema(columns=cols, targets=self.targets)


UNKNOWN_INDEX = 0


@dataclass(frozen=True)
class ColumnVocabulary:
    """value -> index map for one categorical column; 0 = unknown/unseen."""

    index: Mapping[str, int]
    counts: Mapping[str, int]

    @property
    def size(self) -> int:
        return len(self.index) + 1  # the reserved unknown slot

    def encode(self, value: str) -> int:
        return self.index.get(value, UNKNOWN_INDEX)


@dataclass(frozen=True)
class ColumnDiscretizer:
    """Interior quantile edges for one numerical column.

    ``edges`` has (at most) requested_bins - 1 entries; duplicate quantile
    edges are collapsed, so ``effective_bins`` may be smaller than requested.
    A value lands in the first bin whose edge is >= value (a value exactly
    equal to an edge goes to the lower bin).
    """

    edges: np.ndarray
    requested_bins: int

    @property
    def effective_bins(self) -> int:
        return len(self.edges) + 1

    def encode(self, value: float) -> int:
        return int(np.searchsorted(self.edges, value, side="left"))


def _as_category(value: Any) -> str:
    return value if isinstance(value, str) else str(value)


def fit_vocab(rows: Sequence[Row], schema: FeatureSchema) -> dict[str, ColumnVocabulary]:
    """Fit per-column vocabularies for every categorical column.

    Observed values are sorted lexicographically before index assignment, so
    the result does not depend on row order.
    """
    if not rows:
        raise FitError("cannot fit a vocabulary on zero rows")
    vocabs: dict[str, ColumnVocabulary] = {}
    for col in schema.columns:
        if col.kind != CATEGORICAL:
            continue
        counts: dict[str, int] = {}
        for row in rows:
            value = row.get(col.name)
            if value is None:
                continue
            key = _as_category(value)
            counts[key] = counts.get(key, 0) + 1
        index = {value: i + 1 for i, value in enumerate(sorted(counts))}
        vocabs[col.name] = ColumnVocabulary(index=index, counts=dict(sorted(counts.items())))
    return vocabs


def fit_discretizer(values: Sequence[float], n_bins: int) -> ColumnDiscretizer:
    """Equal-frequency edges: empirical quantiles at k/n_bins, k=1..n_bins-1,
    linear interpolation between order statistics."""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    if arr.size < n_bins:
        raise FitError(f"need at least {n_bins} finite values to fit {n_bins} bins, got {arr.size}")
    if n_bins == 1:
        edges = np.empty(0)
    else:
        qs = np.arange(1, n_bins) / n_bins
        edges = np.unique(np.quantile(arr, qs, method="linear"))
    return ColumnDiscretizer(edges=edges, requested_bins=n_bins)


def fit_discretizers(rows: Sequence[Row], schema: FeatureSchema) -> dict[str, ColumnDiscretizer]:
    out: dict[str, ColumnDiscretizer] = {}
    for col in schema.columns:
        if col.kind != NUMERICAL:
            continue
        values = [row.get(col.name) for row in rows if row.get(col.name) is not None]
        try:
            out[col.name] = fit_discretizer(values, col.n_bins)
        except FitError as exc:
            raise FitError(f"column {col.name!r}: {exc}") from None
    return out


@dataclass(frozen=True)
class EncodedRow:
    """Per-column integer indices, length = schema.n_features."""

    indices: np.ndarray


def transform_row(raw_row: Row, schema: FeatureSchema,
                  vocabs: Mapping[str, ColumnVocabulary],
                  discretizers: Mapping[str, ColumnDiscretizer],
                  row_index: int | None = None) -> EncodedRow:
    """Encode one raw row; missing values are an error here (impute first)."""
    indices = np.empty(schema.n_features, dtype=np.int64)
    for i, col in enumerate(schema.columns):
        value = raw_row.get(col.name)
        if value is None:
            where = f"row {row_index}" if row_index is not None else "row"
            raise DataError(f"missing value in {where}, column {col.name!r}",
                            row=row_index, column=col.name)
        if col.kind == CATEGORICAL:
            indices[i] = vocabs[col.name].encode(_as_category(value))
        else:
            indices[i] = discretizers[col.name].encode(float(value))
    return EncodedRow(indices=indices)


@dataclass(frozen=True)
class FittedPipeline:
    """Everything needed to encode rows for the model, fitted on train data."""

    schema: FeatureSchema
    vocabularies: Mapping[str, ColumnVocabulary]
    discretizers: Mapping[str, ColumnDiscretizer]

    @property
    def column_sizes(self) -> tuple[int, ...]:
        """Per-column index-space sizes, in schema column order."""
        sizes = []
        for col in self.schema.columns:
            if col.kind == CATEGORICAL:
                sizes.append(self.vocabularies[col.name].size)
            else:
                sizes.append(self.discretizers[col.name].effective_bins)
        return tuple(sizes)

    def encode_row(self, row: Row, row_index: int | None = None) -> EncodedRow:
        return transform_row(row, self.schema, self.vocabularies, self.discretizers,
                             row_index=row_index)

    def encode_rows(self, rows: Sequence[Row]) -> np.ndarray:
        """Encode many rows into an (n_rows, n_features) int64 matrix."""
        out = np.empty((len(rows), self.schema.n_features), dtype=np.int64)
        for i, row in enumerate(rows):
            out[i] = self.encode_row(row, row_index=i).indices
        return out

    def summary(self) -> dict:
        """Per-column encoding report (vocab sizes, effective bin counts)."""
        cols = []
        for col in self.schema.columns:
            if col.kind == CATEGORICAL:
                vocab = self.vocabularies[col.name]
                cols.append({"name": col.name, "kind": col.kind,
                             "observed_values": len(vocab.index),
                             "index_space": vocab.size})
            else:
                disc = self.discretizers[col.name]
                cols.append({"name": col.name, "kind": col.kind,
                             "requested_bins": disc.requested_bins,
                             "effective_bins": disc.effective_bins,
                             "index_space": disc.effective_bins})
        return {"columns": cols, "total_index_space": int(sum(self.column_sizes))}


def fit_pipeline(rows: Sequence[Row], schema: FeatureSchema) -> FittedPipeline:
    if not rows:
        raise FitError("cannot fit the feature pipeline on zero rows")
    return FittedPipeline(schema=schema,
                          vocabularies=fit_vocab(rows, schema),
                          discretizers=fit_discretizers(rows, schema))


def target_values(rows: Sequence[Row], column: str) -> np.ndarray:
    out = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        value = row.get(column)
        if value is None:
            raise DataError(f"missing target {column!r} in row {i}", row=i, column=column)
        out[i] = float(value)
    return out


# ---------------------------------------------------------------------------
# Nearest-neighbour imputation (numerical columns only)


def knn_impute(rows: Sequence[Row], schema: FeatureSchema, k: int) -> list[dict]:
    """Fill missing numerical cells from the k nearest donor rows.

    Distance is Euclidean over z-score-normalized numerical columns present
    in both rows; donors must themselves have the column being filled; ties
    on distance break by row order. The input rows are not mutated.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    numeric_cols = [c.name for c in schema.columns if c.kind == NUMERICAL]
    stats: dict[str, tuple[float, float]] = {}
    for name in numeric_cols:
        vals = np.asarray([r[name] for r in rows if r.get(name) is not None], dtype=np.float64)
        if vals.size == 0:
            raise ImputationError(f"column {name!r} has no observed values to impute from")
        sd = float(vals.std())
        stats[name] = (float(vals.mean()), sd if sd > 0 else 1.0)

    def zscores(row: Row) -> dict[str, float]:
        out = {}
        for name in numeric_cols:
            value = row.get(name)
            if value is not None:
                m, sd = stats[name]
                out[name] = (float(value) - m) / sd
        return out

    normalized = [zscores(r) for r in rows]
    filled = [dict(r) for r in rows]
    for i, row in enumerate(rows):
        missing = [name for name in numeric_cols if row.get(name) is None]
        if not missing:
            continue
        for name in missing:
            distances = []
            for j, donor in enumerate(rows):
                if j == i or donor.get(name) is None:
                    continue
                shared = normalized[i].keys() & normalized[j].keys()
                d = np.sqrt(sum((normalized[i][c] - normalized[j][c]) ** 2 for c in shared))
                distances.append((d, j))
            if len(distances) < k:
                raise ImputationError(
                    f"row {i}, column {name!r}: only {len(distances)} usable donor rows, need {k}")
            distances.sort(key=lambda t: (t[0], t[1]))
            donors = [rows[j][name] for _, j in distances[:k]]
            filled[i][name] = float(np.mean(donors))
    return filled


# ---------------------------------------------------------------------------
# Splits


class SplitSpec(BaseModel):
    """Either a seeded ratio split or seeded k-fold partitions."""

    model_config = {"frozen": True}

    kind: Literal["ratio", "kfold"] = "ratio"
    train_fraction: float = 0.7
    folds: int = 5

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "ratio" and not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.kind == "kfold" and self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        return self


@dataclass(frozen=True)
class Partition:
    train_indices: np.ndarray
    test_indices: np.ndarray


def split_ratio(n_rows: int, train_fraction: float, seed: int) -> Partition:
    """Seeded shuffle, then contiguous slice: first chunk trains, rest tests."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if n_rows < 2:
        raise ConfigError(f"need at least 2 rows to split, got {n_rows}")
    perm = np.random.default_rng(seed).permutation(n_rows)
    n_train = int(np.clip(round(n_rows * train_fraction), 1, n_rows - 1))
    return Partition(train_indices=perm[:n_train], test_indices=perm[n_train:])


def split_kfold(n_rows: int, folds: int, seed: int) -> list[Partition]:
    """Seeded shuffle, then contiguous fold slices partitioning all rows."""
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if n_rows < folds:
        raise ConfigError(f"need at least {folds} rows for {folds} folds, got {n_rows}")
    perm = np.random.default_rng(seed).permutation(n_rows)
    chunks = np.array_split(perm, folds)
    return [Partition(train_indices=np.concatenate([c for j, c in enumerate(chunks) if j != i]),
                      test_indices=chunks[i])
            for i in range(folds)]


def split_dataset(n_rows: int, spec: SplitSpec, seed: int) -> list[Partition]:
    """Dispatch on the split spec; always returns a list of partitions."""
    if spec.kind == "ratio":
        return [split_ratio(n_rows, spec.train_fraction, seed)]
    return split_kfold(n_rows, spec.folds, seed)
