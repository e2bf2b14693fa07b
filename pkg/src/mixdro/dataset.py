"""Mixed-feature tabular data: CSV ingestion, cleaning and one-hot encoding.

Categorical feature ``l`` with ``a`` categories is stored as a block of
``a - 1`` binary columns. Categories are kept in a fixed dictionary order
(sorted unless an explicit order is given) and the last category of that
order is the reference, encoded as the all-zeros block.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
LABEL = "label"
KINDS = (NUMERICAL, CATEGORICAL, LABEL)

MISSING_CATEGORY = "<missing>"
DEFAULT_MISSING_TOKENS = ("", "?")


class DataError(ValueError):
    """Raised for malformed input tables."""


@dataclass
class RawTable:
    """Column-typed rows as read from a delimited file.

    Numerical cells hold floats, categorical cells strings and label cells
    strings (or the ints -1/+1 after binarization). ``None`` marks a
    missing value.
    """

    columns: list[str]
    kinds: dict[str, str]
    rows: list[list]
    label_map: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        labels = [c for c in self.columns if self.kinds.get(c) == LABEL]
        if len(labels) != 1:
            raise DataError(f"expected exactly one label column, got {labels}")
        for c in self.columns:
            if self.kinds.get(c) not in KINDS:
                raise DataError(f"column {c!r} has no valid kind")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise DataError(f"row {i} has {len(row)} values, expected {len(self.columns)}")

    @property
    def label_column(self) -> str:
        return next(c for c in self.columns if self.kinds[c] == LABEL)

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [row[j] for row in self.rows]

    def columns_of(self, kind: str) -> list[str]:
        return [c for c in self.columns if self.kinds[c] == kind]


def load_csv(
    path,
    label_column: str,
    column_kinds: Mapping[str, str],
    delimiter: str = ",",
    missing_tokens: Sequence[str] = DEFAULT_MISSING_TOKENS,
    drop_columns: Sequence[str] = (),
) -> RawTable:
    """Read a delimited file with a header row into a :class:`RawTable`.

    Every column that is neither the label nor listed in ``drop_columns``
    must have a declared kind; kinds are never inferred.
    """
    missing = set(missing_tokens)
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"label column not found: {label_column!r}")
        dropped = set(drop_columns)
        keep = [j for j, h in enumerate(header) if h not in dropped]
        columns = [header[j] for j in keep]
        kinds = {}
        for c in columns:
            if c == label_column:
                kinds[c] = LABEL
            elif c in column_kinds:
                if column_kinds[c] not in (NUMERICAL, CATEGORICAL):
                    raise DataError(f"column {c!r}: unknown kind {column_kinds[c]!r}")
                kinds[c] = column_kinds[c]
            else:
                raise DataError(f"column {c!r} has no declared kind")

        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row at line {lineno} has {len(record)} fields, expected {len(header)}"
                )
            row = []
            for j in keep:
                cell = record[j].strip()
                kind = kinds[header[j]]
                if cell in missing:
                    row.append(None)
                elif kind == NUMERICAL:
                    try:
                        value = float(cell)
                    except ValueError:
                        value = None
                    row.append(value if value is not None and math.isfinite(value) else None)
                else:
                    row.append(cell)
            rows.append(row)
    return RawTable(columns, kinds, rows)


def _majority_first(values) -> list:
    counts = Counter(values)
    return sorted(counts, key=lambda v: (-counts[v], str(v)))


def _as_signed(labels) -> list[int] | None:
    """Labels already written as -1/+1 (ints or text), else ``None``."""
    out = []
    for v in labels:
        try:
            f = float(v)
        except (TypeError, ValueError):
            return None
        if f not in (-1.0, 1.0):
            return None
        out.append(int(f))
    return out if len(set(out)) == 2 else None


def preprocess(table: RawTable) -> RawTable:
    """Impute, normalize and binarize a raw table.

    Numerical gaps get the column median; categorical gaps become their own
    category; categorical text is lowercased; constant columns are dropped;
    labels become -1 (majority class) / +1 (everything else).
    """
    if len(table.rows) < 2:
        raise DataError("need at least two rows")
    cols = {c: table.column(c) for c in table.columns}

    label = table.label_column
    labels = cols[label]
    if any(v is None for v in labels):
        raise DataError("label column has missing values")
    label_map = dict(table.label_map)
    signed = _as_signed(labels)
    if signed is not None:
        new_labels = signed
        if not label_map:
            label_map = {"-1": -1, "1": 1}
    else:
        order = _majority_first(labels)
        if len(order) < 2:
            raise DataError("label column has a single class")
        majority = order[0]
        label_map = {str(v): (-1 if v == majority else 1) for v in order}
        new_labels = [-1 if v == majority else 1 for v in labels]

    out_cols, kinds = [], {}
    data = {}
    for c in table.columns:
        kind = table.kinds[c]
        if kind == LABEL:
            data[c] = new_labels
        elif kind == NUMERICAL:
            present = [v for v in cols[c] if v is not None]
            if not present:
                raise DataError(f"numerical column {c!r} is entirely missing")
            med = float(np.median(present))
            values = [med if v is None else v for v in cols[c]]
            if len(set(values)) < 2:
                continue
            data[c] = values
        else:
            values = [MISSING_CATEGORY if v is None else str(v).lower() for v in cols[c]]
            if len(set(values)) < 2:
                continue
            data[c] = values
        out_cols.append(c)
        kinds[c] = kind
    rows = [list(r) for r in zip(*(data[c] for c in out_cols))]
    return RawTable(out_cols, kinds, rows, label_map)


@dataclass(frozen=True)
class DatasetSchema:
    numerical: tuple[str, ...]
    categorical: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]
    label_map: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if len(self.categories) != len(self.categorical):
            raise DataError("one category dictionary per categorical feature required")
        for name, cats in zip(self.categorical, self.categories):
            if len(cats) < 2:
                raise DataError(f"categorical feature {name!r} needs at least two categories")
            if len(set(cats)) != len(cats):
                raise DataError(f"categorical feature {name!r} has duplicate categories")

    @property
    def n(self) -> int:
        return len(self.numerical)

    @property
    def m(self) -> int:
        return len(self.categorical)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.categories)

    @property
    def c(self) -> int:
        return sum(k - 1 for k in self.cardinalities)

    @property
    def offsets(self) -> np.ndarray:
        """Start column of every categorical block, plus the total width."""
        return np.concatenate([[0], np.cumsum([k - 1 for k in self.cardinalities])]).astype(int)

    def block(self, ell: int) -> slice:
        off = self.offsets
        return slice(int(off[ell]), int(off[ell + 1]))

    def to_dict(self) -> dict:
        return {
            "numerical": list(self.numerical),
            "categorical": list(self.categorical),
            "categories": [list(c) for c in self.categories],
            "label_map": {k: v for k, v in self.label_map},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        return cls(
            tuple(d["numerical"]),
            tuple(d["categorical"]),
            tuple(tuple(c) for c in d["categories"]),
            tuple(sorted(d.get("label_map", {}).items())),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def codes_to_onehot(codes: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    """Encode category indices (N x m) into the dropped-reference one-hot layout."""
    codes = np.atleast_2d(np.asarray(codes, dtype=int))
    N = codes.shape[0]
    width = sum(k - 1 for k in cardinalities)
    Z = np.zeros((N, width))
    off = 0
    for ell, k in enumerate(cardinalities):
        q = codes[:, ell]
        hit = q < k - 1
        Z[np.flatnonzero(hit), off + q[hit]] = 1.0
        off += k - 1
    return Z


def onehot_to_codes(Z: np.ndarray, cardinalities: Sequence[int]) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z))
    codes = np.empty((Z.shape[0], len(cardinalities)), dtype=int)
    off = 0
    for ell, k in enumerate(cardinalities):
        blk = Z[:, off:off + k - 1]
        if np.any(blk.sum(axis=1) > 1):
            raise DataError(f"categorical block {ell} has more than one active column")
        codes[:, ell] = np.where(blk.any(axis=1), blk.argmax(axis=1), k - 1)
        off += k - 1
    return codes


@dataclass(frozen=True)
class EncodedDataset:
    X: np.ndarray
    codes: np.ndarray
    y: np.ndarray
    schema: DatasetSchema

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float).reshape(len(self.y), self.schema.n)
        codes = np.asarray(self.codes, dtype=int).reshape(len(self.y), self.schema.m)
        y = np.asarray(self.y, dtype=int)
        if not np.all(np.isin(y, (-1, 1))):
            raise DataError("labels must be -1/+1")
        for ell, k in enumerate(self.schema.cardinalities):
            if codes.size and (codes[:, ell].min() < 0 or codes[:, ell].max() >= k):
                raise DataError(f"category index out of range in feature {ell}")
        for arr in (X, codes, y):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "y", y)
        Z = codes_to_onehot(codes, self.schema.cardinalities)
        Z.setflags(write=False)
        object.__setattr__(self, "_Z", Z)

    @property
    def Z(self) -> np.ndarray:
        return self._Z

    @property
    def N(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=int)
        return EncodedDataset(self.X[idx], self.codes[idx], self.y[idx], self.schema)

    def decode_row(self, i: int) -> dict:
        """Human-readable categorical values of row ``i``."""
        return {
            name: cats[self.codes[i, ell]]
            for ell, (name, cats) in enumerate(zip(self.schema.categorical, self.schema.categories))
        }

    def encode_values(self, values: Mapping[str, str]) -> np.ndarray:
        codes = [cats.index(values[name]) for name, cats in zip(self.schema.categorical, self.schema.categories)]
        return codes_to_onehot(np.array([codes]), self.schema.cardinalities)[0]


def encode(table: RawTable, category_order: Mapping[str, Sequence[str]] | None = None) -> EncodedDataset:
    """One-hot encode a preprocessed table.

    ``category_order`` optionally fixes the dictionary order of a feature;
    features without an entry use sorted order.
    """
    category_order = category_order or {}
    numerical = table.columns_of(NUMERICAL)
    categorical = table.columns_of(CATEGORICAL)
    X = np.array([table.column(c) for c in numerical], dtype=float).T.reshape(len(table.rows), len(numerical))
    if np.isnan(X).any():
        raise DataError("numerical values missing; run preprocess first")
    cats, codes = [], []
    for c in categorical:
        values = table.column(c)
        if any(v is None for v in values):
            raise DataError(f"categorical column {c!r} has missing values; run preprocess first")
        if c in category_order:
            order = tuple(category_order[c])
            unknown = set(values) - set(order)
            if unknown:
                raise DataError(f"column {c!r}: values {sorted(unknown)} missing from category order")
        else:
            order = tuple(sorted(set(values)))
        index = {v: q for q, v in enumerate(order)}
        cats.append(order)
        codes.append([index[v] for v in values])
    codes = np.array(codes, dtype=int).T.reshape(len(table.rows), len(categorical))
    y = np.array(table.column(table.label_column))
    if y.dtype.kind not in "iu":
        raise DataError("labels not binarized; run preprocess first")
    schema = DatasetSchema(tuple(numerical), tuple(categorical), tuple(cats), tuple(sorted(table.label_map.items())))
    return EncodedDataset(X, codes, y, schema)


def split(ds: EncodedDataset, test_fraction: float, seed: int) -> tuple[EncodedDataset, EncodedDataset]:
    """Shuffled train/test split; the test side gets ``floor(N * test_fraction)`` rows."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must lie in (0, 1)")
    if ds.N < 2:
        raise DataError("need at least two rows to split")
    n_test = int(math.floor(ds.N * test_fraction + 1e-9))
    if n_test == 0 or n_test == ds.N:
        raise DataError(f"test_fraction {test_fraction} leaves an empty side for N={ds.N}")
    perm = np.random.default_rng(seed).permutation(ds.N)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def write_csv(ds: EncodedDataset, path, delimiter: str = ",") -> None:
    """Write a dataset back in raw (decoded) form with a ``label`` column."""
    schema = ds.schema
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(list(schema.numerical) + list(schema.categorical) + ["label"])
        for i in range(ds.N):
            cats = [schema.categories[ell][ds.codes[i, ell]] for ell in range(schema.m)]
            w.writerow([repr(float(v)) for v in ds.X[i]] + cats + [int(ds.y[i])])
