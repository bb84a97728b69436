"""Imputation, prediction and congeniality metrics plus the benchmark grid."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import BASELINES, BaselineKind, impute, ridge_solve
from .data import Dataset, ImputedMatrix, Standardizer, split_train_test
from .losses import h_of
from .synth import MECHANISMS, AmputeSpec, ScmSpec, ampute_detailed, edge_recovery_score, generate_scm, location_scm, sample_scm
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

TERM_SETS = {
    "L1+R1+R2": (True, True, True),
    "R1+R2": (False, True, True),
    "L1+R2": (True, False, True),
    "L1+R1": (True, True, False),
    "L1": (True, False, False),
}


def imputation_rmse(truth, imputed, mask) -> float:
    """RMSE over the cells where ``mask`` is 0."""
    truth = np.asarray(getattr(truth, "values", truth), dtype=float)
    imputed = np.asarray(getattr(imputed, "values", imputed), dtype=float)
    missing = np.asarray(mask) == 0
    if not missing.any():
        raise ValueError("no amputed cells to score")
    return float(np.sqrt(np.mean((imputed[missing] - truth[missing]) ** 2)))


@dataclass(frozen=True)
class RidgeFit:
    weights: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.intercept


def fit_ridge(x: np.ndarray, y: np.ndarray, lam: float = 1.0) -> RidgeFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("ridge needs n > 1")
    w, c = ridge_solve(x, y, lam)
    return RidgeFit(w, c)


def _xy(values: np.ndarray, target: int):
    return np.delete(values, target, axis=1), values[:, target]


def prediction_rmse(imputed_train, test: Dataset, target: int, lam: float = 1.0) -> float:
    """Ridge fit on the imputed training matrix, RMSE on the untouched test split."""
    if (test.mask[:, target] == 0).any():
        raise ValueError("prediction target has missing entries in the test split")
    if test.n_missing:
        raise ValueError("test split must be complete")
    model = fit_ridge(*_xy(np.asarray(getattr(imputed_train, "values", imputed_train)), target), lam)
    xt, yt = _xy(test.values, target)
    return float(np.sqrt(np.mean((model.predict(xt) - yt) ** 2)))


def congeniality(complete, imputed, target: int, lam: float = 1.0) -> float:
    """Euclidean distance between ridge weights fit on complete vs imputed data."""
    w = fit_ridge(*_xy(np.asarray(getattr(complete, "values", complete)), target), lam).weights
    w_hat = fit_ridge(*_xy(np.asarray(getattr(imputed, "values", imputed)), target), lam).weights
    return float(np.linalg.norm(w - w_hat))


@dataclass
class EvalReport:
    mechanism: str
    rate: float
    n: int
    d: int
    baseline: str
    refined: bool
    seed: int
    terms: str
    imputation_rmse: float
    prediction_rmse: float
    congeniality: float
    h_value: float
    edge_recovery: float | None = None
    cell_errors: list = field(default_factory=list, repr=False)  # (row, col, squared error)
    error: str | None = None

    def key(self) -> tuple:
        return (self.mechanism, self.rate, self.n, self.d, self.baseline, self.refined, self.terms)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Cell:
    mechanism: str = "mar"
    rate: float = 0.3
    n: int = 1000
    d: int = 10
    baseline: str = "mean"
    seed: int = 0
    refine: bool = True
    terms: str = "L1+R1+R2"
    graph: str = "er"
    target: int | None = None
    ridge: float = 1.0
    standardize: bool = True
    train: dict = field(default_factory=dict)
    ampute: dict = field(default_factory=dict)


@dataclass
class CellData:
    scm: ScmSpec
    train: Dataset  # amputed, ``truth`` holds the complete training rows
    test: Dataset
    target: int
    ampute_spec: AmputeSpec


def prepare_cell(cell: Cell) -> CellData:
    """Synthesize, split 80/20 (train has ``cell.n`` rows), standardize, ampute."""
    scm = location_scm(cell.seed) if cell.graph == "location" else generate_scm(cell.d, cell.seed)
    n_total = int(math.ceil(cell.n / 0.8))
    full = sample_scm(scm, n_total, cell.seed)
    train_c, test = split_train_test(full, cell.n / n_total, cell.seed)
    if cell.standardize:
        stats = Standardizer.fit(train_c)
        train_c, test = stats.apply(train_c), stats.apply(test)
    target = cell.target if cell.target is not None else int(scm.order[-1])
    protected = {target}
    if cell.mechanism != "mcar":
        protected |= set(scm.roots().tolist())
    spec = AmputeSpec.from_dict({"mechanism": cell.mechanism, "rate": cell.rate,
                                 "protected": sorted(protected), **cell.ampute})
    amputed, spec = ampute_detailed(train_c, spec, cell.seed)
    return CellData(scm, amputed, test, target, spec)


def _report(cell: Cell, data: CellData, imputed: ImputedMatrix, refined: bool, h_value: float, edge) -> EvalReport:
    truth = data.train.truth
    missing = data.train.mask == 0
    rows, cols = np.nonzero(missing)
    sq = (imputed.values[missing] - truth[missing]) ** 2
    return EvalReport(
        cell.mechanism, cell.rate, cell.n, data.scm.d, cell.baseline, refined, cell.seed,
        cell.terms if refined else "-",
        imputation_rmse(truth, imputed, data.train.mask),
        prediction_rmse(imputed, data.test, data.target, cell.ridge),
        congeniality(truth, imputed, data.target, cell.ridge),
        h_value, edge,
        [(int(r), int(c), float(e)) for r, c, e in zip(rows, cols, sq)],
    )


def run_cell(cell: Cell) -> list[EvalReport]:
    """Seed report, followed by the refined report when ``cell.refine``."""
    data = prepare_cell(cell)
    seed_imp = impute(data.train, BaselineKind(cell.baseline), cell.seed)
    reports = [_report(cell, data, seed_imp, False, math.nan, None)]
    if cell.refine:
        l1, r1, r2 = TERM_SETS[cell.terms]
        cfg = TrainConfig(**{"seed": cell.seed, **cell.train, "use_l1": l1, "use_r1": r1, "use_r2": r2})
        res = train(data.train, seed_imp, cfg)
        reports.append(_report(cell, data, res.imputed, True, h_of(res.adjacency.B),
                               edge_recovery_score(data.scm, res.adjacency)))
    return reports


class ConfigError(ValueError):
    pass


SUITE_DEFAULTS = {
    "mechanisms": ["mar"],
    "rates": [0.3],
    "sizes": [1000],
    "dims": [10],
    "baselines": ["mean"],
    "seeds": [0, 1, 2, 3, 4],
    "refine": True,
    "ablations": ["L1+R1+R2"],
    "graph": "er",
    "target": None,
    "ridge": 1.0,
    "standardize": True,
    "train": {},
    "ampute": {},
}


def validate_suite(obj) -> dict:
    """Fill defaults and check types; errors carry a JSON pointer to the bad value."""
    if not isinstance(obj, dict):
        raise ConfigError("/: suite config must be a JSON object")
    unknown = set(obj) - set(SUITE_DEFAULTS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"/{key}: unknown key; valid keys: {', '.join(SUITE_DEFAULTS)}")
    cfg = {**SUITE_DEFAULTS, **obj}
    choices = {"mechanisms": MECHANISMS, "baselines": BASELINES, "ablations": tuple(TERM_SETS)}
    for key, valid in choices.items():
        if not isinstance(cfg[key], list) or not cfg[key]:
            raise ConfigError(f"/{key}: expected a non-empty list")
        for i, v in enumerate(cfg[key]):
            if v not in valid:
                raise ConfigError(f"/{key}/{i}: unknown value {v!r}; valid: {', '.join(valid)}")
    for key, kind, lo in (("rates", float, 0.0), ("sizes", int, 2), ("dims", int, 2), ("seeds", int, None)):
        if not isinstance(cfg[key], list) or not cfg[key]:
            raise ConfigError(f"/{key}: expected a non-empty list")
        for i, v in enumerate(cfg[key]):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
                raise ConfigError(f"/{key}/{i}: expected {kind.__name__}, got {v!r}")
            if key == "rates" and not 0 < v < 1:
                raise ConfigError(f"/{key}/{i}: rate must lie in (0, 1)")
            if lo is not None and key != "rates" and v < lo:
                raise ConfigError(f"/{key}/{i}: must be >= {lo}")
    if cfg["graph"] not in ("er", "location"):
        raise ConfigError("/graph: expected 'er' or 'location'")
    if not isinstance(cfg["refine"], bool):
        raise ConfigError("/refine: expected true or false")
    if not isinstance(cfg["train"], dict):
        raise ConfigError("/train: expected an object")
    try:
        TrainConfig(**cfg["train"])
    except TypeError as exc:
        raise ConfigError(f"/train: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"/train: {exc}") from None
    return cfg


def expand_suite(cfg: dict) -> list[Cell]:
    cells = []
    for mech, rate, n, d, base, terms, seed in itertools.product(
        cfg["mechanisms"], cfg["rates"], cfg["sizes"], cfg["dims"], cfg["baselines"], cfg["ablations"], cfg["seeds"]
    ):
        cells.append(Cell(mech, float(rate), n, d, base, seed, cfg["refine"], terms, cfg["graph"],
                          cfg["target"], cfg["ridge"], cfg["standardize"], dict(cfg["train"]), dict(cfg["ampute"])))
    return cells


def _safe_run(cell: Cell) -> list[EvalReport]:
    try:
        return run_cell(cell)
    except Exception as exc:  # recorded, the suite goes on
        logger.warning("cell %s failed: %s", cell, exc)
        nan = math.nan
        return [EvalReport(cell.mechanism, cell.rate, cell.n, cell.d, cell.baseline, cell.refine, cell.seed,
                           cell.terms, nan, nan, nan, nan, None, [], f"{type(exc).__name__}: {exc}")]


def run_benchmark(suite: dict, jobs: int = 1) -> list[EvalReport]:
    """Run every grid cell; reports come back in grid order regardless of ``jobs``."""
    cells = expand_suite(validate_suite(suite))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_safe_run, cells))
    else:
        results = [_safe_run(c) for c in cells]
    # every ablation of a seed repeats the same unrefined report; keep the first
    seen, out = set(), []
    for r in (r for rs in results for r in rs):
        if not r.refined and r.error is None:
            if (r.key(), r.seed) in seen:
                continue
            seen.add((r.key(), r.seed))
        out.append(r)
    return out


AGG_FIELDS = ("imputation_rmse", "prediction_rmse", "congeniality", "h_value", "edge_recovery")


def aggregate(reports: list[EvalReport]) -> list[dict]:
    """Mean and sample std over seeds for each grid cell, in first-seen order."""
    groups: dict[tuple, list[EvalReport]] = {}
    for r in reports:
        if r.error is None:
            groups.setdefault(r.key(), []).append(r)
    rows = []
    for key, rs in groups.items():
        row = dict(zip(("mechanism", "rate", "n", "d", "baseline", "refined", "terms"), key))
        row["seeds"] = len(rs)
        for f in AGG_FIELDS:
            vals = np.array([math.nan if getattr(r, f) is None else getattr(r, f) for r in rs], dtype=float)
            row[f"{f}_mean"] = float(np.mean(vals))
            row[f"{f}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def write_benchmark(out_dir: str | Path, suite: dict, reports: list[EvalReport]) -> None:
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(reports):
        tag = f"{i:04d}_{r.mechanism}_{r.baseline}_n{r.n}_d{r.d}_s{r.seed}_{'refined' if r.refined else 'seed'}"
        (out / "cells" / f"{tag}.json").write_text(json.dumps(r.to_dict(), indent=1), encoding="utf-8")
    rows = aggregate(reports)
    cols = ["mechanism", "rate", "n", "d", "baseline", "refined", "terms", "seeds"] + [
        f"{f}_{s}" for f in AGG_FIELDS for s in ("mean", "std")
    ]
    with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with open(out / "cell_errors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["report", "refined", "row", "col", "squared_error"])
        for i, r in enumerate(reports):
            for row, col, e in r.cell_errors:
                w.writerow([i, int(r.refined), row, col, repr(e)])


# --- studies built on the same pipeline -------------------------------------

LOCATION_TARGET = 4  # X5 of the location DAG


@dataclass
class LocationResult:
    cause: int
    seed: int
    baseline_rmse: float
    miracle_rmse: float
    parent_weight: float
    nonparent_weight: float


def location_study(cause: int, seed: int, n: int = 1000, train_cfg: dict | None = None,
                   baseline: str = "mean", standardize: bool = True) -> LocationResult:
    """Impute X5 of the 9-node DAG when its missingness is driven by ``cause``.

    ``cause == 4`` is self-masking (MNAR); the isolated node 8 gives MCAR.
    """
    if cause == LOCATION_TARGET:
        amp = {"targets": [LOCATION_TARGET]}
        mech = "mnar"
    else:
        amp = {"targets": [LOCATION_TARGET], "causes": {str(LOCATION_TARGET): [cause]}}
        mech = "mar"
    cell = Cell(mech, 0.3, n, 9, baseline, seed, True, "L1+R1+R2", "location", None, 1.0, standardize,
                dict(train_cfg or {}), amp)
    data = prepare_cell(cell)
    seed_imp = impute(data.train, BaselineKind(baseline), seed)
    res = train(data.train, seed_imp, TrainConfig(**{"seed": seed, **cell.train}))
    col = res.adjacency.B[: data.scm.d, LOCATION_TARGET]
    parents = set(data.scm.parents(LOCATION_TARGET).tolist())
    others = [k for k in range(data.scm.d) if k != LOCATION_TARGET and k not in parents]
    return LocationResult(
        cause, seed,
        imputation_rmse(data.train.truth, seed_imp, data.train.mask),
        imputation_rmse(data.train.truth, res.imputed, data.train.mask),
        float(col[sorted(parents)].mean()), float(col[others].mean()),
    )


def convergence_study(sizes, seeds, train_cfg: dict | None = None, cause: int = 1,
                      standardize: bool = True) -> dict[int, list[float]]:
    """Edge-recovery score of the learned graph for each training size."""
    out = {}
    for n in sizes:
        scores = []
        for seed in seeds:
            cell = Cell("mar", 0.3, n, 9, "mean", seed, True, "L1+R1+R2", "location", None, 1.0, standardize,
                        dict(train_cfg or {}), {"targets": [LOCATION_TARGET], "causes": {str(LOCATION_TARGET): [cause]}})
            data = prepare_cell(cell)
            res = train(data.train, impute(data.train, "mean"), TrainConfig(**{"seed": seed, **cell.train}))
            scores.append(edge_recovery_score(data.scm, res.adjacency))
        out[n] = scores
    return out
