"""Adam training of the joint objective with bootstrap re-imputation."""
from __future__ import annotations

import graphlib
import json
import logging
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, ImputedMatrix, merge_imputation
from .losses import TrainingData, total_loss_and_grad
from .network import AdjacencyEstimate, NetworkParams, extract_adjacency, forward, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    beta1: float = 0.1
    beta2: float = 1.0
    lr: float = 0.0005
    epochs: int = 300
    refresh: int = 10  # epochs between input refreshes; 0 disables
    queue: int = 10
    tol: float = 1e-3
    seed: int = 0
    hidden: int | None = None  # defaults to d
    depth: int = 3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    use_l1: bool = True
    use_r1: bool = True
    use_r2: bool = True
    acyclicity: str = "expm"

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be >= 0")
        if not self.lr > 0 or self.epochs < 1:
            raise ValueError("lr must be > 0 and epochs >= 1")
        if self.refresh < 0 or self.queue < 1:
            raise ValueError("refresh must be >= 0 and queue >= 1")
        if not self.tol >= 0:
            raise ValueError("tol must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.tensors.items()},
                   {k: np.zeros_like(v) for k, v in params.tensors.items()})


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray], state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place; pinned inputs are re-zeroed."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    params.apply_mask()


@dataclass
class TrainResult:
    imputed: ImputedMatrix
    params: NetworkParams
    adjacency: AdjacencyEstimate
    log: list[dict] = field(default_factory=list)

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(a * a))) if a.size else 0.0


def train(dataset: Dataset, seed_imputation: ImputedMatrix, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Refine ``seed_imputation`` of ``dataset``.

    Each epoch is one full-batch Adam step on the joint loss with the current
    input matrix. Every ``cfg.refresh`` epochs the imputation heads re-impute
    the missing cells; that matrix joins a FIFO queue of ``cfg.queue`` and the
    input becomes the queue average. Stops after ``cfg.epochs`` or once the
    RMS change of the missing cells drops below ``cfg.tol``.
    """
    x0 = np.array(seed_imputation.values, dtype=float)
    if x0.shape != dataset.values.shape:
        raise ValueError("seed imputation shape does not match the dataset")
    observed = dataset.mask == 1
    if not np.array_equal(x0[observed], dataset.values[observed]):
        raise ValueError("seed imputation alters observed entries")
    missing_cells = ~observed
    if not missing_cells.any():
        warnings.warn("dataset has no missing values; output equals the input", stacklevel=2)

    params = init_params(dataset.d, dataset.missing_features, cfg.hidden, cfg.depth, cfg.seed)
    adam = AdamState.zeros_like(params)
    queue: deque[np.ndarray] = deque(maxlen=cfg.queue)
    log: list[dict] = []
    refreshed = False

    for epoch in range(1, cfg.epochs + 1):
        data = TrainingData.build(dataset, x0)
        try:
            losses, grads = total_loss_and_grad(
                params, data, cfg.beta1, cfg.beta2, cfg.use_l1, cfg.use_r1, cfg.use_r2, cfg.acyclicity
            )
        except FloatingPointError as exc:
            raise FloatingPointError(f"epoch {epoch}: {exc}") from exc
        adam_step(params, grads, adam, cfg.lr, cfg.adam_betas, cfg.adam_eps)
        rec = {"epoch": epoch, **losses.as_dict(), "delta": None}
        stop = False
        if cfg.refresh and epoch % cfg.refresh == 0:
            imp, _ = forward(params, x0)
            queue.append(merge_imputation(dataset, imp).values)
            new = np.mean(np.stack(queue), axis=0)
            delta = _rms((new - x0)[missing_cells])
            x0 = new
            refreshed = True
            rec["delta"] = delta
            stop = delta < cfg.tol
        log.append(rec)
        if stop:
            logger.info("converged at epoch %d (delta %.2e)", epoch, rec["delta"])
            break

    if refreshed or not missing_cells.any():
        final = merge_imputation(dataset, x0, "miracle")
    else:
        final = merge_imputation(dataset, forward(params, x0)[0], "miracle")
    return TrainResult(final, params, extract_adjacency(params, dataset.feature_names), log)


def threshold_dag(est: AdjacencyEstimate | np.ndarray, tau: float = 0.3) -> tuple[np.ndarray, bool]:
    """Binary adjacency (entries >= tau) and whether it is acyclic."""
    if not tau > 0:
        raise ValueError("threshold must be > 0")
    b = np.asarray(getattr(est, "B", est), dtype=float)
    binary = (b >= tau).astype(np.int8)
    sorter = graphlib.TopologicalSorter({j: set(np.flatnonzero(binary[:, j]).tolist()) for j in range(b.shape[0])})
    try:
        sorter.prepare()
        acyclic = True
    except graphlib.CycleError:
        acyclic = False
    return binary, acyclic
