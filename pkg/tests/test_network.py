import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miracle.network import (
    PROB_EPS,
    NetworkParams,
    extract_adjacency,
    forward,
    init_params,
)


def zero_params(d, missing, hidden=None, depth=3):
    p = init_params(d, missing, hidden, depth, seed=0)
    for v in p.tensors.values():
        v[...] = 0.0
    return p


def test_parameter_count_closed_form():
    d, h, d_s = 4, 4, 2
    p = init_params(d, d_s, h, 3)
    heads = d + d_s
    expected = heads * (h * d + h) + (h * h + h) + heads * (h + 1)
    assert p.n_parameters() == expected


def test_init_masks_and_determinism():
    p = init_params(5, [1, 3], seed=7)
    for j in range(5):
        assert not p.w_imp_in[j][:, j].any()
    assert not p.w_miss_in[0][:, 1].any() and not p.w_miss_in[1][:, 3].any()
    q = init_params(5, [1, 3], seed=7)
    for k in p.tensors:
        np.testing.assert_array_equal(p.tensors[k], q.tensors[k])


def test_init_bounds():
    p = init_params(9, 2, hidden=16)
    assert np.abs(p.tensors["w_in"]).max() <= 1 / 3
    assert np.abs(p.tensors["w_hid0"]).max() <= 1 / 4


@pytest.mark.parametrize("kw", [{"hidden": 0}, {"depth": 2}])
def test_init_rejects_bad_shapes(kw):
    with pytest.raises(ValueError):
        init_params(3, 1, **kw)


def test_all_zero_net():
    imp, prob = forward(zero_params(3, [0, 2]), np.ones((4, 3)))
    assert not imp.any()
    np.testing.assert_array_equal(prob, 0.5)


def test_hand_traced_single_unit():
    # d = 2, h = 1, no missing heads, one shared layer
    p = zero_params(2, [], hidden=1)
    t = p.tensors
    t["w_in"][0, 0, 1] = -1.0  # head 0 reads x2
    t["w_in"][1, 0, 0] = 0.5  # head 1 reads x1
    t["w_hid0"][0, 0] = 2.0
    t["b_hid0"][0] = 0.25
    t["w_out"][:, 0] = [3.0, -1.0]
    t["b_out"][:] = [0.0, 1.0]
    imp, prob = forward(p, np.array([1.0, 2.0]))
    # head 0: z = -2 -> elu = e^-2 - 1; hidden: 2 * that + 0.25; out = 3 * elu(hidden)
    a0 = np.expm1(-2.0)
    h0 = 2 * a0 + 0.25
    h0 = np.expm1(h0) if h0 < 0 else h0
    # head 1: z = 0.5 -> hidden 1.25 -> out = -1.25 + 1
    assert imp[0] == pytest.approx(3 * h0, abs=1e-14)
    assert imp[1] == pytest.approx(-0.25, abs=1e-14)
    assert prob.shape == (0,)


def test_probability_clamp():
    p = zero_params(2, [1])
    p.tensors["b_out"][2] = 100.0
    _, prob = forward(p, np.zeros(2))
    assert prob[0] == 1.0 - PROB_EPS


def test_non_finite_input_names_layer():
    p = init_params(3, 1)
    with pytest.raises(FloatingPointError, match="input"):
        forward(p, np.array([np.nan, 0.0, 0.0]))
    p.tensors["w_hid0"][0, 0] = np.inf
    with pytest.raises(FloatingPointError, match="hidden layer 1"):
        forward(p, np.ones(3))


def test_batch_equals_rows():
    p = init_params(5, [0, 4], depth=4, seed=2)
    x = np.random.default_rng(0).standard_normal((12, 5))
    imp, prob = forward(p, x)
    for i in range(12):
        ri, rp = forward(p, x[i])
        np.testing.assert_allclose(ri, imp[i], atol=1e-12, rtol=0)
        np.testing.assert_allclose(rp, prob[i], atol=1e-12, rtol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_structural_independence_by_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d = 5
    missing = np.array([1, 3])
    p = init_params(d, missing, seed=seed)
    x = rng.standard_normal(d)
    eps = 1e-5
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        ip, _ = forward(p, x + e)
        im, _ = forward(p, x - e)
        assert abs(ip[j] - im[j]) / (2 * eps) < 1e-10
    for m, s in enumerate(missing):
        e = np.zeros(d)
        e[s] = eps
        _, pp = forward(p, x + e)
        _, pm = forward(p, x - e)
        assert abs(pp[m] - pm[m]) / (2 * eps) < 1e-10


def test_zero_adjacency_entry_means_invariance():
    rng = np.random.default_rng(3)
    d = 6
    p = init_params(d, [2], seed=3)
    for _ in range(20):
        k, c = rng.integers(0, d), rng.integers(0, p.n_heads)
        p.tensors["w_in"][c, :, k] = 0.0
        assert extract_adjacency(p).B[k, c] == 0.0
        x = rng.standard_normal(d)
        y = x.copy()
        y[k] += rng.standard_normal() * 5
        a = np.concatenate(forward(p, x))
        b = np.concatenate(forward(p, y))
        assert a[c] == b[c]


def test_adjacency_norm_and_layout():
    p = init_params(3, [0], hidden=2)
    p.tensors["w_in"][1, :, 0] = [3.0, 4.0]  # column 1 (x1) of head 2 (x2)
    est = extract_adjacency(p)
    assert est.B.shape == (4, 4)
    assert est.B[0, 1] == 5.0
    assert not np.diag(est.B)[:3].any()
    assert not est.B[3:].any()
    assert est.B[0, 3] == 0.0  # r1 never reads x1
    p.tensors["w_in"][3:] = 0.0
    assert not extract_adjacency(p).B[:, 3:].any()


def test_adjacency_csv(tmp_path):
    p = init_params(2, [1])
    path = tmp_path / "adj.csv"
    extract_adjacency(p).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "source,x1,x2,r2"
    assert len(lines) == 4


def test_checkpoint_round_trip(tmp_path):
    p = init_params(4, [0, 2], depth=4, seed=11)
    p.save(tmp_path / "ck.json")
    q = NetworkParams.load(tmp_path / "ck.json")
    assert (q.d, q.hidden, q.depth) == (4, 4, 4)
    np.testing.assert_array_equal(q.missing, [0, 2])
    np.testing.assert_array_equal(q.flat(), p.flat())
