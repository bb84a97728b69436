import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm as scipy_expm

from gradcheck import max_relative_errors, random_instance
from miracle.losses import (
    TrainingData,
    _r2_parts,
    dh_db,
    expm,
    h_of,
    loss_l1,
    loss_r1,
    loss_r2,
    total_loss,
    total_loss_and_grad,
)
from miracle.network import init_params

TWO_CYCLE_H = 2 * math.cosh(1) - 2


# --- matrix exponential and h ------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.floats(0.01, 20.0))
def test_expm_matches_scipy(seed, m, scale):
    a = np.random.default_rng(seed).standard_normal((m, m)) * scale / m
    ref = scipy_expm(a)
    np.testing.assert_allclose(expm(a), ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_expm_overflow_is_reported():
    with pytest.raises(FloatingPointError):
        expm(np.full((3, 3), 1e6))


def test_h_of_examples():
    assert h_of(np.zeros((5, 5))) == 0.0
    assert h_of(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx(0.0, abs=1e-15)
    assert h_of(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(1.086161, abs=1e-6)
    assert h_of(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(TWO_CYCLE_H, abs=1e-12)


def test_h_zero_on_triangular_and_positive_on_cycles():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = rng.integers(2, 10)
        tri = np.triu(rng.random((m, m)) * 2, k=1)
        perm = rng.permutation(m)
        assert abs(h_of(tri[np.ix_(perm, perm)])) < 1e-10
        cyc = rng.random((m, m)) + 0.01
        assert h_of(cyc) > 1e-6


def test_poly_variant():
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    # (I + B/2)^2 has trace 2 * (1 + 1/4) -> h = 0.5
    assert h_of(b, "poly") == pytest.approx(0.5)
    assert h_of(np.triu(np.ones((4, 4)), 1), "poly") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        h_of(b, "pade")


@pytest.mark.parametrize("method", ["expm", "poly"])
def test_dh_db_finite_differences(method):
    b = np.random.default_rng(1).random((4, 4)) * 0.8
    _, g = dh_db(b, method)
    eps = 1e-6
    for idx in np.ndindex(b.shape):
        e = np.zeros_like(b)
        e[idx] = eps
        num = (h_of(b + e, method) - h_of(b - e, method)) / (2 * eps)
        assert g[idx] == pytest.approx(num, rel=1e-6, abs=1e-9)


# --- individual terms ----------------------------------------------------------

def zero_params(d, missing):
    p = init_params(d, missing)
    for v in p.tensors.values():
        v[...] = 0.0
    return p


def test_l1_cross_entropy_at_half():
    p = zero_params(3, [0, 2])
    x = np.zeros((5, 3))
    mask = np.ones((5, 3))
    data = TrainingData(x, x, mask)
    assert loss_l1(p, data) == pytest.approx(2 * math.log(2))


def test_l1_toy_by_hand():
    # imputation head 0 outputs b_out[0] = 1, head 1 outputs 0; missingness head p = sigmoid(0) = 0.5
    p = zero_params(2, [1])
    p.tensors["b_out"][0] = 1.0
    x = np.array([[2.0, 3.0], [0.5, 0.0]])
    mask = np.array([[1.0, 1.0], [1.0, 0.0]])
    data = TrainingData(x, x * mask, mask)
    recon = ((2 - 1) ** 2 + 3**2 + (0.5 - 1) ** 2) / 2
    xent = 2 * math.log(2) / 2
    assert loss_l1(p, data) == pytest.approx(recon + xent)


def test_l1_near_zero_at_perfect_fit():
    p = zero_params(2, [1])
    p.tensors["b_out"][:] = [1.0, 1.0, 50.0]  # p ~ 1 everywhere
    x = np.ones((3, 2))
    data = TrainingData(x, x, np.ones((3, 2)))
    assert loss_l1(p, data) < 2e-6


def test_r1_fresh_masked_params_is_zero():
    p = init_params(4, [1])
    p.tensors["w_in"][:] = 0.0
    assert loss_r1(p) == 0.0


def test_r1_two_cycle():
    p = zero_params(2, [])
    p.tensors["w_in"] = np.zeros((2, 2, 2))
    p.tensors["w_in"][0, :, 1] = [0.6, 0.8]
    p.tensors["w_in"][1, :, 0] = [1.0, 0.0]
    h = TWO_CYCLE_H
    assert loss_r1(p) == pytest.approx(0.5 * h * h + h, abs=1e-12)
    assert loss_r1(p) == pytest.approx(1.676, abs=1e-3)


def sipw_data():
    x = np.array([[1.0, 0.0], [2.0, 0.0], [9.0, 0.0]])
    mask = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 1.0]])
    return TrainingData(x, x * mask, mask)


def test_r2_sipw_toy():
    # p = (0.5, 0.25, 0.5) -> e = (2, 4, 2) -> tau = (2*1 + 4*2) / 6 = 5/3
    p = zero_params(2, [0])
    data = sipw_data()
    prob = np.array([[0.5], [0.25], [0.5]])
    imp = np.zeros((3, 2))  # tau_mean = 0, so R2 = tau_sipw^2
    r2, _, _ = _r2_parts(p, data, imp, prob)
    assert r2 == pytest.approx((5 / 3) ** 2, rel=1e-12)


def test_r2_zero_when_means_match():
    p = zero_params(2, [0])
    data = sipw_data()
    p.tensors["b_out"][0] = 1.5  # plain mean of the observed 1 and 2
    assert loss_r2(p, data) == pytest.approx(0.0, abs=1e-20)


def test_r2_ignores_unobserved_values():
    p = init_params(3, [1], seed=3)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((10, 3))
    mask = np.ones((10, 3))
    mask[::3, 1] = 0
    a = TrainingData(x, x * mask, mask)
    obs2 = a.observed.copy()
    obs2[mask == 0] = 123.0
    b = TrainingData(x, obs2, mask)
    assert loss_r2(p, a) == loss_r2(p, b)


# --- total objective --------------------------------------------------------------

def test_total_breakdown_identity():
    params, data = random_instance(0)
    lb, _ = total_loss_and_grad(params, data, beta1=0.3, beta2=2.0)
    expected = lb.l1_recon + lb.l1_xent + 0.3 * lb.r1 + 2.0 * lb.r2
    assert abs(lb.total - expected) < 1e-12
    assert lb.r1 >= 0 and lb.r2 >= 0 and lb.h_value >= 0


def test_zero_betas_give_l1_gradient():
    params, data = random_instance(1)
    _, g0 = total_loss_and_grad(params, data, beta1=0.0, beta2=0.0)
    _, g1 = total_loss_and_grad(params, data, use_r1=False, use_r2=False)
    for k in g0:
        np.testing.assert_array_equal(g0[k], g1[k])


def test_masked_positions_get_zero_gradient():
    params, data = random_instance(2)
    _, g = total_loss_and_grad(params, data)
    assert not (g["w_in"] * (1 - params.input_mask()[:, None, :])).any()


def test_negative_beta_rejected():
    params, data = random_instance(0)
    with pytest.raises(ValueError):
        total_loss_and_grad(params, data, beta1=-1.0)


@pytest.mark.parametrize("acyclicity", ["expm", "poly"])
def test_gradient_matches_finite_differences(acyclicity):
    params, data = random_instance(5)
    worst = max_relative_errors(params, data, acyclicity=acyclicity)
    assert max(worst.values()) < 1e-4, worst


def test_total_loss_matches_breakdown():
    params, data = random_instance(7)
    for flags in ({}, {"use_r1": False}, {"use_l1": False, "use_r2": False}):
        lb, _ = total_loss_and_grad(params, data, beta1=0.4, beta2=3.0, **flags)
        assert total_loss(params, data, beta1=0.4, beta2=3.0, **flags) == pytest.approx(lb.total, rel=1e-14)
