"""Cross-attention semantics: trivial closed forms, a direct oracle, and
the structural properties (row-stochastic weights, convexity, permutation
equivariance, gradients)."""

import numpy as np
import pytest

from gradcheck import TOL_FD, fd_max_rel_err, weighted_loss
from rainsr.attention import AttentionParams, cross_attention, modulated_attention, qkv_project
from rainsr.tensor import Tensor, softmax

SEEDS = range(20)


def make_params(c, rng, gamma=None):
    g = float(np.sqrt(c)) if gamma is None else gamma
    return AttentionParams(
        w_q=Tensor(rng.normal(size=(c, c))),
        w_k=Tensor(rng.normal(size=(c, c))),
        w_v=Tensor(rng.normal(size=(c, c))),
        gamma=Tensor(g),
    )


def attention_oracle(q, k, v, gamma):
    logits = (q @ k.T) / gamma
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)
    return w @ v


def test_identity_weights_unit_modulator():
    rng = np.random.default_rng(0)
    feat = rng.normal(size=(3, 4, 5))
    params = AttentionParams(
        w_q=Tensor(np.eye(5)), w_k=Tensor(np.eye(5)), w_v=Tensor(np.eye(5)), gamma=Tensor(1.0)
    )
    q, k, v = qkv_project(Tensor(feat), Tensor(np.ones((3, 4, 5))), params)
    flat = feat.reshape(12, 5)
    np.testing.assert_array_equal(q.data, flat)
    np.testing.assert_array_equal(k.data, flat)
    np.testing.assert_array_equal(v.data, flat)


def test_zero_modulator_gives_uniform_attention():
    rng = np.random.default_rng(1)
    feat = rng.normal(size=(4, 4, 6))
    params = make_params(6, rng)
    q, k, v = qkv_project(Tensor(feat), Tensor(np.zeros((4, 4, 6))), params)
    assert np.abs(q.data).max() == 0.0
    out = cross_attention(q, k, v, params.gamma).data
    np.testing.assert_allclose(out, np.tile(v.data.mean(axis=0), (16, 1)), atol=1e-12)


def test_qkv_matches_matmul_oracle():
    rng = np.random.default_rng(2)
    feat = rng.normal(size=(2, 2, 3))
    mod = rng.normal(size=(2, 2, 3))
    params = make_params(3, rng)
    q, k, v = qkv_project(Tensor(feat), Tensor(mod), params)
    flat = feat.reshape(4, 3)
    np.testing.assert_allclose(q.data, (flat @ params.w_q.data) * mod.reshape(4, 3), atol=1e-12)
    np.testing.assert_allclose(k.data, flat @ params.w_k.data, atol=1e-12)
    np.testing.assert_allclose(v.data, flat @ params.w_v.data, atol=1e-12)


def test_single_token_returns_v():
    rng = np.random.default_rng(3)
    q = Tensor(rng.normal(size=(1, 4)))
    k = Tensor(rng.normal(size=(1, 4)))
    v = Tensor(rng.normal(size=(1, 4)))
    np.testing.assert_array_equal(cross_attention(q, k, v, Tensor(2.0)).data, v.data)


def test_three_token_oracle():
    rng = np.random.default_rng(4)
    c = 5
    q = rng.normal(size=(3, c))
    k = rng.normal(size=(3, c))
    v = rng.normal(size=(3, c))
    got = cross_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(np.sqrt(c))).data
    np.testing.assert_allclose(got, attention_oracle(q, k, v, np.sqrt(c)), atol=1e-10)


def test_rows_sum_to_one_and_convexity():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        q = Tensor(rng.normal(size=(7, 4)) * 5.0)
        k = Tensor(rng.normal(size=(7, 4)) * 5.0)
        v = rng.normal(size=(7, 4))
        logits = (q.data @ k.data.T) / 2.0
        w = softmax(Tensor(logits), axis=-1).data
        np.testing.assert_allclose(w.sum(axis=1), np.ones(7), atol=1e-10)
        out = cross_attention(q, k, Tensor(v), Tensor(2.0)).data
        assert (out <= v.max(axis=0) + 1e-12).all()
        assert (out >= v.min(axis=0) - 1e-12).all()


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    q, k, v = (rng.normal(size=(6, 3)) for _ in range(3))
    perm = rng.permutation(6)
    base = cross_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(1.5)).data
    permed = cross_attention(Tensor(q[perm]), Tensor(k[perm]), Tensor(v[perm]), Tensor(1.5)).data
    np.testing.assert_allclose(permed, base[perm], atol=1e-12)


def test_gamma_zero_rejected():
    t = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        cross_attention(t, t, t, Tensor(0.0))
    rng = np.random.default_rng(0)
    bad = make_params(2, rng)
    bad.gamma = Tensor(0.0)
    with pytest.raises(ValueError):
        qkv_project(Tensor(np.zeros((2, 2, 2))), Tensor(1.0), bad)


def test_shape_validation():
    rng = np.random.default_rng(6)
    params = make_params(4, rng)
    with pytest.raises(ValueError):
        qkv_project(Tensor(np.zeros((2, 2, 5))), Tensor(1.0), params)
    with pytest.raises(ValueError):
        cross_attention(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 5))), Tensor(np.zeros((3, 5))), Tensor(1.0))


def test_cross_attention_gradients_fd():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(5, 3))
        k = rng.normal(size=(5, 3))
        v = rng.normal(size=(5, 3))
        g = np.array(1.7)
        w = rng.normal(size=(5, 3))

        def build(tq, tk, tv, tg):
            return weighted_loss(cross_attention(tq, tk, tv, tg), w)

        assert fd_max_rel_err(build, [q, k, v, g], rng) < TOL_FD


def test_modulated_attention_gradients_fd():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        feat = rng.normal(size=(3, 3, 4))
        mod = rng.normal(size=(3, 3, 4))
        wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
        w = rng.normal(size=(3, 3, 4))

        def build(tf, tm, twq, twk, twv):
            params = AttentionParams(w_q=twq, w_k=twk, w_v=twv, gamma=Tensor(2.0))
            return weighted_loss(modulated_attention(tf, tm, params), w)

        assert fd_max_rel_err(build, [feat, mod, wq, wk, wv], rng) < TOL_FD


def test_row_modulator_broadcasts():
    # TC-style 1x1xC modulator applies one weight vector to every token
    rng = np.random.default_rng(7)
    feat = rng.normal(size=(3, 2, 4))
    row = rng.normal(size=(1, 1, 4))
    params = make_params(4, rng)
    q, _, _ = qkv_project(Tensor(feat), Tensor(row), params)
    full = np.broadcast_to(row, (3, 2, 4))
    q2, _, _ = qkv_project(Tensor(feat), Tensor(full.copy()), params)
    np.testing.assert_array_equal(q.data, q2.data)
