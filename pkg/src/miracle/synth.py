"""Synthetic linear-Gaussian SCMs and MCAR/MAR/MNAR amputation."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .data import Dataset

logger = logging.getLogger(__name__)

Mechanism = Literal["mcar", "mar", "mnar"]
MECHANISMS = ("mcar", "mar", "mnar")

PROB_FLOOR, PROB_CEIL = 0.01, 0.99


class AmputationError(ValueError):
    pass


@dataclass(frozen=True)
class ScmSpec:
    """Weighted DAG ``weights[k, j]`` = coefficient of edge k -> j."""

    weights: np.ndarray
    noise_std: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        d = w.shape[0]
        if w.shape != (d, d):
            raise ValueError("weights must be square")
        order = np.asarray(self.order, dtype=int)
        if sorted(order.tolist()) != list(range(d)):
            raise ValueError("order must be a permutation of 0..d-1")
        rank = np.empty(d, dtype=int)
        rank[order] = np.arange(d)
        ks, js = np.nonzero(w)
        if (rank[ks] >= rank[js]).any():
            raise ValueError("weights are not acyclic with respect to order")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noise_std", np.broadcast_to(np.asarray(self.noise_std, float), (d,)).copy())
        object.__setattr__(self, "order", order)

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.weights[:, j])

    def roots(self) -> np.ndarray:
        return np.flatnonzero(~self.weights.any(axis=0))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "weights": self.weights.tolist(),
            "noise_std": self.noise_std.tolist(),
            "order": self.order.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ScmSpec":
        return cls(np.array(obj["weights"]), np.array(obj["noise_std"]), np.array(obj["order"]))


def generate_scm(
    d: int,
    seed: int = 0,
    weight_range: tuple[float, float] = (0.5, 2.0),
    noise_std: float = 1.0,
    expected_edges: float | None = None,
) -> ScmSpec:
    """Erdos-Renyi DAG with ``expected_edges`` (default d) edges on average.

    A random topological order is drawn, then every forward pair is kept with
    probability 2 * expected_edges / (d * (d - 1)); kept edges get weights
    uniform on +-[lo, hi].
    """
    if d < 2:
        raise ValueError("an SCM needs d >= 2")
    rng = np.random.default_rng(seed)
    expected_edges = d if expected_edges is None else expected_edges
    p = min(1.0, 2.0 * expected_edges / (d * (d - 1)))
    order = rng.permutation(d)
    upper = np.triu(rng.random((d, d)) < p, k=1)
    lo, hi = weight_range
    mags = rng.uniform(lo, hi, size=(d, d))
    signs = rng.choice([-1.0, 1.0], size=(d, d))
    w_sorted = np.where(upper, mags * signs, 0.0)
    # w_sorted is indexed by position in the order; map back to node labels
    weights = np.zeros((d, d))
    weights[np.ix_(order, order)] = w_sorted
    return ScmSpec(weights, np.full(d, noise_std), order)


def location_scm(seed: int = 0, weight_range: tuple[float, float] = (0.5, 2.0)) -> ScmSpec:
    """Fixed 9-node DAG for the missingness-location study.

    Node 4 (X5 in 1-based labels) has parents {1, 2} (X2, X3); node 8 (X9)
    is isolated. Edge weights are random, signs positive.
    """
    edges = [(0, 1), (0, 2), (1, 4), (2, 4), (3, 5), (4, 5), (4, 6), (5, 7), (6, 7)]
    rng = np.random.default_rng(seed)
    w = np.zeros((9, 9))
    for k, j in edges:
        w[k, j] = rng.uniform(*weight_range)
    return ScmSpec(w, np.ones(9), np.arange(9))


def sample_scm(spec: ScmSpec, n: int, seed: int = 0) -> Dataset:
    """Draw n rows of X_j = sum_k W[k, j] X_k + E_j in topological order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, spec.d)) * spec.noise_std
    x = np.zeros((n, spec.d))
    for j in spec.order:
        x[:, j] = x @ spec.weights[:, j] + noise[:, j]
    return Dataset.complete(x)


@dataclass(frozen=True)
class AmputeSpec:
    """How to remove entries. Unset fields are drawn at amputation time.

    ``rate`` is the average missing rate of each targeted feature.
    ``targets``/``causes``/``w``/``b`` are filled in by :func:`resolve`.
    ``protected`` features are never targeted (e.g. root nodes).
    ``mar_mode="sequential"`` uses the literal previous-components form:
    feature i's score sums over all j < i, with b_j standing in for
    missing predecessors.
    """

    mechanism: Mechanism = "mcar"
    rate: float = 0.3
    target_fraction: float | None = None
    n_causes: int = 2
    mar_mode: Literal["causes", "sequential"] = "causes"
    protected: tuple[int, ...] = ()
    targets: tuple[int, ...] | None = None
    causes: dict[int, tuple[int, ...]] | None = None
    w: tuple[float, ...] | None = None
    b: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; choose from {MECHANISMS}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"missing rate must lie in (0, 1), got {self.rate}")
        if self.target_fraction is not None and not 0.0 < self.target_fraction <= 1.0:
            raise ValueError("target_fraction must lie in (0, 1]")

    @property
    def fraction(self) -> float:
        if self.target_fraction is not None:
            return self.target_fraction
        return 1.0 if self.mechanism == "mcar" else 0.3

    def to_dict(self) -> dict:
        out = {
            "mechanism": self.mechanism,
            "rate": self.rate,
            "target_fraction": self.fraction,
            "n_causes": self.n_causes,
            "mar_mode": self.mar_mode,
            "protected": list(self.protected),
        }
        if self.targets is not None:
            out["targets"] = list(self.targets)
        if self.causes is not None:
            out["causes"] = {str(k): list(v) for k, v in self.causes.items()}
        if self.w is not None:
            out["w"] = list(self.w)
            out["b"] = list(self.b)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "AmputeSpec":
        obj = dict(obj)
        if "causes" in obj and obj["causes"] is not None:
            obj["causes"] = {int(k): tuple(v) for k, v in obj["causes"].items()}
        for key in ("protected", "targets", "w", "b"):
            if obj.get(key) is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)


def resolve(spec: AmputeSpec, d: int, rng: np.random.Generator) -> AmputeSpec:
    """Draw targets, MAR cause sets and weights that ``spec`` leaves open."""
    protected = set(spec.protected)
    if spec.targets is None:
        pool = np.array([j for j in range(d) if j not in protected])
        n_targets = max(1, int(round(spec.fraction * d)))
        if spec.mechanism == "mar" and spec.mar_mode == "causes":
            # leave room for at least one always-observed cause
            n_targets = min(n_targets, d - 1)
        n_targets = min(n_targets, pool.size)
        if n_targets == 0:
            raise AmputationError("no feature is eligible for amputation")
        targets = tuple(sorted(rng.choice(pool, size=n_targets, replace=False).tolist()))
    else:
        targets = tuple(sorted(spec.targets))
    causes = spec.causes
    if spec.mechanism == "mar" and spec.mar_mode == "causes" and causes is None:
        others = np.array([j for j in range(d) if j not in targets])
        if others.size == 0:
            raise AmputationError("MAR needs at least one non-target feature as a cause")
        k = min(spec.n_causes, others.size)
        causes = {t: tuple(sorted(rng.choice(others, size=k, replace=False).tolist())) for t in targets}
    if causes is not None:
        for t, cs in causes.items():
            if set(cs) & set(targets):
                raise AmputationError(f"cause set of feature {t} overlaps the targeted features")
    w, b = spec.w, spec.b
    if w is None:
        w = tuple(rng.uniform(0.0, 1.0, size=d).tolist())
        b = tuple(rng.uniform(0.0, 1.0, size=d).tolist())
    return replace(spec, target_fraction=spec.fraction, targets=targets, causes=causes, w=w, b=b)


def missing_probabilities(scores: np.ndarray, rate: float) -> np.ndarray:
    """rate * n * exp(s_n) / sum_l exp(s_l), clamped to [0.01, 0.99].

    The overall scale is re-solved after clamping so the mean stays at
    ``rate``; with no clamping active this is the plain normalized formula.
    """
    if not PROB_FLOOR <= rate <= PROB_CEIL:
        raise AmputationError(f"rate {rate} not attainable with probabilities clamped to [{PROB_FLOOR}, {PROB_CEIL}]")
    s = np.asarray(scores, dtype=float)
    base = np.exp(s - s.max())
    base /= base.mean()

    def mean_at(c):
        return np.clip(c * base, PROB_FLOOR, PROB_CEIL).mean()

    lo, hi = 0.0, rate
    while mean_at(hi) < rate:
        hi *= 2.0
        if hi > 1e12:
            raise AmputationError(f"cannot reach rate {rate}; achieved {mean_at(hi):.4f}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_at(mid) < rate:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    p = np.clip(hi * base, PROB_FLOOR, PROB_CEIL)
    achieved = p.mean()
    if abs(achieved - rate) > 1e-6:
        raise AmputationError(f"requested rate {rate} infeasible after clamping; achieved {achieved:.6f}")
    return p


def ampute_detailed(data: Dataset, spec: AmputeSpec, seed: int = 0) -> tuple[Dataset, AmputeSpec]:
    """Ampute and also return the fully resolved spec that was applied."""
    if data.n_missing:
        raise AmputationError("amputation expects a fully observed dataset")
    rng = np.random.default_rng(seed)
    spec = resolve(spec, data.d, rng)
    x = data.values
    n = data.n
    mask = np.ones((n, data.d), dtype=np.int8)
    w = np.asarray(spec.w)
    b = np.asarray(spec.b)

    if spec.mechanism == "mar" and spec.mar_mode == "sequential":
        targets = set(spec.targets)
        for i in range(data.d):
            if i not in targets:
                continue
            m = mask[:, :i]
            s = (w[:i] * m * x[:, :i] + b[:i] * (1 - m)).sum(axis=1)
            p = missing_probabilities(s, spec.rate)
            mask[:, i] = rng.random(n) >= p
    else:
        for t in spec.targets:
            if spec.mechanism == "mcar":
                s = np.zeros(n)
            elif spec.mechanism == "mar":
                cs = list(spec.causes[t])
                s = x[:, cs] @ w[cs]
            else:
                s = -w[t] * x[:, t]
            p = missing_probabilities(s, spec.rate)
            mask[:, t] = rng.random(n) >= p

    for j in spec.targets:
        if not mask[:, j].any():
            # keep the column learnable
            mask[rng.integers(n), j] = 1
            warnings.warn(f"feature {j} was fully amputed; restored one entry", stacklevel=2)
    truth = data.truth if data.truth is not None else data.values
    return Dataset(truth, mask, data.feature_names, truth=truth), spec


def ampute(data: Dataset, spec: AmputeSpec, seed: int = 0) -> Dataset:
    """Remove entries of a complete dataset according to ``spec``.

    Observed values are untouched; the complete matrix is kept as ``truth``.
    """
    return ampute_detailed(data, spec, seed)[0]


def edge_recovery_score(truth: ScmSpec, est) -> float:
    """Share of estimated edge mass that sits on true edges (feature block only)."""
    b = np.abs(np.asarray(getattr(est, "B", est), dtype=float))[: truth.d, : truth.d]
    total = b.sum()
    if total == 0:
        warnings.warn("estimated adjacency is all zero; edge recovery score set to 0", stacklevel=2)
        return 0.0
    return float((b * (truth.weights != 0)).sum() / total)


def save_sidecar(path, scm: ScmSpec | None, ampute_spec: AmputeSpec | None, **extra) -> None:
    obj = dict(extra)
    if scm is not None:
        obj["scm"] = scm.to_dict()
    if ampute_spec is not None:
        obj["ampute"] = ampute_spec.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
