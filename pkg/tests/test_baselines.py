import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miracle.baselines import (
    BaselineKind,
    impute,
    impute_chained,
    impute_knn,
    impute_mean,
    ridge_solve,
)
from miracle.data import DataError, Dataset, standardize
from miracle.synth import AmputeSpec, ampute, generate_scm, sample_scm


def with_missing(v, missing_cells):
    v = np.asarray(v, dtype=float)
    m = np.ones(v.shape, int)
    for i, j in missing_cells:
        m[i, j] = 0
    return Dataset(v, m)


def rmse_on_missing(ds, imputed):
    miss = ds.mask == 0
    return float(np.sqrt(np.mean((imputed[miss] - ds.truth[miss]) ** 2)))


# --- mean ---------------------------------------------------------------------

def test_mean_two_observed():
    ds = with_missing([[1.0, 0.0], [3.0, 1.0], [9.0, 2.0]], [(2, 0)])
    assert impute_mean(ds).values[2, 0] == 2.0


def test_mean_on_standardized_data_is_zero():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((40, 3))
    m = (rng.random((40, 3)) > 0.2).astype(int)
    z, _ = standardize(Dataset(v, m))
    out = impute_mean(z).values
    assert np.abs(out[m == 0]).max() < 1e-9


def test_mean_identity_without_missing():
    v = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(impute_mean(Dataset.complete(v)).values, v)


def test_fully_missing_column_rejected():
    ds = with_missing([[1.0, 2.0], [3.0, 4.0]], [(0, 1), (1, 1)])
    for kind in ("mean", "knn", "chained"):
        with pytest.raises(DataError):
            impute(ds, kind)


# --- k-NN ---------------------------------------------------------------------

def brute_knn(values, mask, k):
    """Oracle: explicit pairwise loop with the same distance and tie rule."""
    out = np.where(mask == 1, values, np.nan)
    n, d = values.shape
    for i, j in itertools.product(range(n), range(d)):
        if mask[i, j]:
            continue
        scored = []
        for r in range(n):
            if not mask[r, j]:
                continue
            shared = [c for c in range(d) if mask[i, c] and mask[r, c]]
            if not shared:
                continue
            dist = sum((values[i, c] - values[r, c]) ** 2 for c in shared) / len(shared)
            scored.append((dist, r))
        scored.sort()
        out[i, j] = np.mean([values[r, j] for _, r in scored[:k]])
    return out


def test_knn_duplicate_row_copied():
    v = [[1.0, 2.0, 3.0], [1.0, 2.0, 7.0], [5.0, 5.0, 5.0]]
    ds = with_missing(v, [(0, 2)])
    # row 1 is identical on the shared coordinates
    assert impute_knn(ds, k=1).values[0, 2] == 7.0


def test_knn_four_row_hand_case():
    v = [[0.0, 0.0], [1.0, 10.0], [2.0, 20.0], [10.0, 30.0]]
    ds = with_missing(v, [(0, 1)])
    # distances from row 0 on column 0: 1, 4, 100 -> rows 1, 2
    assert impute_knn(ds, k=2).values[0, 1] == pytest.approx(15.0)


def test_knn_tie_breaks_on_lower_row():
    v = [[0.0, 0.0], [1.0, 5.0], [-1.0, 9.0]]
    ds = with_missing(v, [(0, 1)])
    assert impute_knn(ds, k=1).values[0, 1] == 5.0


def test_knn_saturated_equals_mean():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((8, 3))
    ds = with_missing(v, [(0, 0), (3, 1)])
    np.testing.assert_allclose(impute_knn(ds, k=50).values, impute_mean(ds).values)


def test_knn_no_shared_coordinate():
    v = [[1.0, np.nan], [np.nan, 2.0]]
    ds = with_missing(np.nan_to_num(v), [(0, 1), (1, 0)])
    with pytest.raises(DataError, match="shares"):
        impute_knn(ds, k=1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    v = rng.integers(-3, 4, size=(9, 4)).astype(float)  # integers force ties
    m = (rng.random((9, 4)) > 0.3).astype(int)
    m[:, 0] = 1  # every pair shares at least this column
    ds = Dataset(v, m)
    np.testing.assert_allclose(impute_knn(ds, k).values, brute_knn(v, m, k), atol=1e-12)


# --- chained ridge ------------------------------------------------------------

def test_ridge_closed_form():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 3))
    y = x @ [1.0, -2.0, 0.5] + 3.0 + 0.1 * rng.standard_normal(30)
    w, c = ridge_solve(x, y, 0.7)
    xc, yc = x - x.mean(0), y - y.mean()
    expected = np.linalg.inv(xc.T @ xc + 0.7 * np.eye(3)) @ xc.T @ yc
    np.testing.assert_allclose(w, expected, rtol=1e-10)
    assert c == pytest.approx(y.mean() - x.mean(0) @ expected)


def test_chained_recovers_linear_relation():
    x1 = np.linspace(-2, 2, 25)
    ds = with_missing(np.c_[x1, 2 * x1], [(7, 1)])
    out = impute_chained(ds, sweeps=3, ridge=1e-6).values
    assert abs(out[7, 1] - 2 * x1[7]) < 1e-3


def test_chained_zero_sweeps_is_mean():
    rng = np.random.default_rng(1)
    ds = Dataset(rng.standard_normal((10, 3)), (rng.random((10, 3)) > 0.3).astype(int) | np.eye(10, 3, dtype=int))
    np.testing.assert_array_equal(impute_chained(ds, sweeps=0).values, impute_mean(ds).values)


def test_chained_independent_columns_near_mean():
    rng = np.random.default_rng(2)
    v = rng.standard_normal((2000, 3))
    ds = ampute(Dataset.complete(v), AmputeSpec("mcar", 0.3), 0)
    diff = impute_chained(ds).values - impute_mean(ds).values
    assert np.abs(diff).max() < 0.15


def test_chained_not_worse_than_mean_on_scm():
    mean_err, ch_err = [], []
    for seed in range(5):
        full = sample_scm(generate_scm(10, seed), 1000, seed)
        ds = ampute(full, AmputeSpec("mcar", 0.3), seed)
        mean_err.append(rmse_on_missing(ds, impute_mean(ds).values))
        ch_err.append(rmse_on_missing(ds, impute_chained(ds).values))
    assert np.mean(ch_err) <= np.mean(mean_err)


@pytest.mark.parametrize("kind", ["mean", "knn", "chained"])
def test_observed_entries_preserved(kind):
    rng = np.random.default_rng(5)
    v = rng.standard_normal((30, 4))
    m = (rng.random((30, 4)) > 0.25).astype(int)
    m[:, 0] = 1
    ds = Dataset(v, m)
    out = impute(ds, kind).values
    assert np.array_equal(out[m == 1], v[m == 1])
    assert np.isfinite(out).all()


def test_unknown_baseline_lists_valid_names():
    with pytest.raises(ValueError, match="mean, knn, chained"):
        BaselineKind("gain")


@pytest.mark.parametrize("kwargs", [{"k": 0}, {"sweeps": -1}, {"ridge": 0.0}])
def test_baseline_kind_validation(kwargs):
    with pytest.raises(ValueError):
        BaselineKind("knn", **kwargs)
