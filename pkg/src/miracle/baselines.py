"""Seed imputers: column mean, k-nearest neighbours, chained ridge regressions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import DataError, Dataset, ImputedMatrix, merge_imputation

BASELINES = ("mean", "knn", "chained")


@dataclass(frozen=True)
class BaselineKind:
    name: str = "mean"
    k: int = 5
    sweeps: int = 10
    ridge: float = 1e-2

    def __post_init__(self):
        if self.name not in BASELINES:
            raise ValueError(f"unknown baseline {self.name!r}; valid names: {', '.join(BASELINES)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if not self.ridge > 0:
            raise ValueError("ridge penalty must be > 0")


def _observed_means(data: Dataset) -> np.ndarray:
    counts = data.mask.sum(axis=0)
    if (counts == 0).any():
        names = [data.feature_names[j] for j in np.flatnonzero(counts == 0)]
        raise DataError(f"fully-missing column(s): {', '.join(names)}")
    return np.where(data.mask == 1, data.values, 0.0).sum(axis=0) / counts


def impute_mean(data: Dataset) -> ImputedMatrix:
    means = _observed_means(data)
    return merge_imputation(data, np.broadcast_to(means, data.values.shape), "mean")


def impute_knn(data: Dataset, k: int = 5, backend: str | None = None) -> ImputedMatrix:
    """Fill each missing cell with the mean of that feature over the k nearest rows.

    Candidates are rows observing the feature; distance is the mean squared
    difference over coordinates both rows observe. Ties go to the lower row.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _observed_means(data)
    out = data.values.copy()
    incomplete = np.flatnonzero((data.mask == 0).any(axis=1))
    if incomplete.size == 0:
        return ImputedMatrix(out, "knn")
    dist = kernels.masked_distances(
        data.values[incomplete], data.mask[incomplete], data.values, data.mask, backend=backend
    )
    for qi, row in enumerate(incomplete):
        for j in np.flatnonzero(data.mask[row] == 0):
            cand = np.flatnonzero(data.mask[:, j] == 1)
            dc = dist[qi, cand]
            finite = np.isfinite(dc)
            if not finite.any():
                raise DataError(f"row {row}: no neighbour observing {data.feature_names[j]!r} shares a coordinate")
            cand, dc = cand[finite], dc[finite]
            # lexsort: last key primary -> distance, then row index
            nearest = cand[np.lexsort((cand, dc))[:k]]
            out[row, j] = data.values[nearest, j].mean()
    return ImputedMatrix(out, "knn")


def ridge_solve(x: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Ridge weights and unpenalized intercept (fitted through centering)."""
    if not lam > 0:
        raise ValueError("ridge penalty must be > 0")
    xm = x.mean(axis=0)
    ym = y.mean()
    xc = x - xm
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    try:
        w = np.linalg.solve(gram, xc.T @ (y - ym))
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"ridge system is singular (lambda={lam})") from exc
    if not np.isfinite(w).all():
        raise FloatingPointError(f"ridge solution is not finite (lambda={lam})")
    return w, float(ym - xm @ w)


def impute_chained(data: Dataset, sweeps: int = 10, ridge: float = 1e-2, seed: int = 0) -> ImputedMatrix:
    """Single-imputation chained equations with ridge regressions.

    Starts from the column means; each sweep regresses every incomplete
    column on all the others (rows where it is observed) and refreshes its
    missing cells. Columns are visited in index order, so ``seed`` does not
    change the result; it is accepted for a uniform call signature.
    """
    if sweeps < 0:
        raise ValueError("sweeps must be >= 0")
    cur = impute_mean(data).values.copy()
    for _ in range(sweeps):
        for j in data.missing_features:
            obs = data.mask[:, j] == 1
            others = np.arange(data.d) != j
            w, c = ridge_solve(cur[obs][:, others], cur[obs, j], ridge)
            miss = ~obs
            cur[miss, j] = cur[miss][:, others] @ w + c
    return ImputedMatrix(cur, "chained")


def impute(data: Dataset, kind: BaselineKind | str = "mean", seed: int = 0) -> ImputedMatrix:
    kind = BaselineKind(kind) if isinstance(kind, str) else kind
    if kind.name == "mean":
        return impute_mean(data)
    if kind.name == "knn":
        return impute_knn(data, kind.k)
    return impute_chained(data, kind.sweeps, kind.ridge, seed)
