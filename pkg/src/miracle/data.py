"""Datasets, missingness masks, standardization and CSV I/O.

Missing cells are stored as NaN in ``Dataset.values`` so that an accidental
read of a missing cell poisons every downstream number instead of silently
contributing a zero.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """An n x d data matrix with its observation mask (1 = observed).

    ``values`` holds NaN wherever ``mask`` is 0. ``truth`` optionally carries
    the complete matrix when the data were amputed from known values.
    """

    values: np.ndarray
    mask: np.ndarray
    feature_names: tuple[str, ...] = ()
    truth: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask)
        if values.ndim != 2 or mask.shape != values.shape:
            raise DataError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        if not np.isin(mask, (0, 1)).all():
            raise DataError("mask entries must be 0 or 1")
        mask = mask.astype(np.int8)
        values = np.where(mask == 1, values, np.nan)
        if not np.isfinite(values[mask == 1]).all():
            raise DataError("observed entries must be finite")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DataError(f"{len(names)} feature names for {values.shape[1]} columns")
        object.__setattr__(self, "values", _frozen(values))
        m = mask.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "feature_names", names)
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=float)
            if truth.shape != values.shape:
                raise DataError("truth shape must match values")
            object.__setattr__(self, "truth", _frozen(truth))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def missing_features(self) -> np.ndarray:
        """Column indices missing in at least one row (the set S), ascending."""
        return np.flatnonzero((self.mask == 0).any(axis=0))

    @property
    def n_missing(self) -> int:
        return int((self.mask == 0).sum())

    @classmethod
    def complete(cls, values, feature_names: Sequence[str] = ()) -> "Dataset":
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones(values.shape, dtype=np.int8), tuple(feature_names), truth=values)

    def with_mask(self, mask: np.ndarray) -> "Dataset":
        """Same underlying values under a new mask; needs complete values or truth."""
        source = self.truth if self.truth is not None else self.values
        if np.isnan(source[np.asarray(mask) == 1]).any():
            raise DataError("new mask observes cells with no known value")
        return Dataset(source, mask, self.feature_names, truth=self.truth)

    def take_rows(self, rows: np.ndarray) -> "Dataset":
        truth = None if self.truth is None else self.truth[rows]
        return Dataset(self.values[rows], self.mask[rows], self.feature_names, truth=truth)


@dataclass(frozen=True)
class ImputedMatrix:
    values: np.ndarray
    provenance: str = "unknown"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or not np.isfinite(values).all():
            raise DataError("imputed matrix must be a finite 2-D array")
        object.__setattr__(self, "values", _frozen(values))


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-scoring fitted on observed entries (population std)."""

    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        means = np.empty(data.d)
        stds = np.empty(data.d)
        for j in range(data.d):
            col = data.values[data.mask[:, j] == 1, j]
            name = data.feature_names[j]
            if col.size < 2:
                raise DataError(f"column {name!r} needs at least 2 observed entries")
            means[j] = col.mean()
            stds[j] = col.std()
            if not stds[j] > 1e-12 * max(1.0, abs(means[j])):
                raise DataError(f"column {name!r} has zero variance")
        return cls(_frozen(means), _frozen(stds))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.stds

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.stds + self.means

    def apply(self, data: Dataset) -> Dataset:
        truth = None if data.truth is None else self.transform(data.truth)
        return Dataset(self.transform(data.values), data.mask, data.feature_names, truth=truth)


def standardize(data: Dataset, stats: Standardizer | None = None) -> tuple[Dataset, Standardizer]:
    """Z-score every column using observed entries only.

    Pass ``stats`` to reuse statistics fitted elsewhere (e.g. on a training split).
    """
    stats = stats or Standardizer.fit(data)
    return stats.apply(data), stats


def merge_imputation(data: Dataset, xhat: np.ndarray, provenance: str = "unknown") -> ImputedMatrix:
    """Observed cells from ``data``, missing cells from ``xhat``."""
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape != data.values.shape:
        raise DataError(f"shape mismatch: data {data.values.shape} vs estimate {xhat.shape}")
    return ImputedMatrix(np.where(data.mask == 1, data.values, xhat), provenance)


def split_train_test(data: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    n_train = int(round(ratio * data.n))
    if n_train == 0 or n_train == data.n:
        raise DataError(f"split of {data.n} rows at ratio {ratio} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(data.n)
    return data.take_rows(np.sort(perm[:n_train])), data.take_rows(np.sort(perm[n_train:]))


def load_csv(path: str | Path, missing_token: str | None = None) -> Dataset:
    """Read a headed CSV; empty cells, "NA" and ``missing_token`` are missing."""
    tokens = set(MISSING_TOKENS)
    if missing_token is not None:
        tokens.add(missing_token)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            parsed = []
            for col, cell in enumerate(row):
                cell = cell.strip()
                if cell in tokens:
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[col]!r}: cannot parse {cell!r}"
                    ) from None
            rows.append(parsed)
    if len(header) < 2:
        raise DataError(f"{path}: need at least 2 columns")
    if not rows:
        raise DataError(f"{path}: empty dataset")
    values = np.array(rows, dtype=float)
    mask = (~np.isnan(values)).astype(np.int8)
    empty = [header[j] for j in range(len(header)) if not mask[:, j].any()]
    if empty:
        raise DataError(f"{path}: fully-missing column(s) {', '.join(empty)}")
    return Dataset(values, mask, tuple(header))


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def write_csv(path: str | Path, values: np.ndarray, header: Sequence[str]) -> None:
    """Write a matrix with NaN as empty cells; floats use shortest round-trip repr."""
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in values:
            w.writerow([_fmt(v) for v in row])


def save_dataset(path: str | Path, data: Dataset) -> None:
    write_csv(path, data.values, data.feature_names)


def save_mask(path: str | Path, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.feature_names)
        w.writerows(data.mask.tolist())


def load_mask(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([[int(c) for c in row] for row in reader if row], dtype=np.int8)
