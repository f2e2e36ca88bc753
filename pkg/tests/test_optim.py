import numpy as np
import pytest

from rainsr.optim import Adam
from rainsr.tensor import Tensor


def test_single_step_matches_reference_formula():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01, beta1=0.9, beta2=0.99, eps=1e-8)
    g = np.array([0.3, -0.1, 2.0])
    opt.step({"p": g})
    # closed form after one step: m = (1-b1) g, v = (1-b2) g^2, and the
    # bias corrections cancel the same factors, so the update is
    # lr * g / (|g| + eps) regardless of g's magnitude.
    expect = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expect, rtol=0, atol=1e-12)


def test_two_step_reference():
    lr, b1, b2, eps = 0.05, 0.9, 0.99, 1e-8
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=lr, beta1=b1, beta2=b2, eps=eps)
    grads = [np.array([1.0]), np.array([-0.5])]
    # hand-rolled oracle
    theta, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g[0]
        v = b2 * v + (1 - b2) * g[0] ** 2
        theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        opt.step({"p": g})
    np.testing.assert_allclose(p.data, [theta], rtol=0, atol=1e-14)


def test_quadratic_convergence():
    rng = np.random.default_rng(0)
    target = rng.normal(size=(5,))
    p = Tensor(np.zeros(5), requires_grad=True)
    # Adam dithers around the optimum at O(lr), so the lr bounds the
    # reachable accuracy here
    opt = Adam({"p": p}, lr=0.01)
    for _ in range(3000):
        opt.step({"p": 2.0 * (p.data - target)})
    assert np.max(np.abs(p.data - target)) < 1e-3


def test_missing_grads_skip_parameter():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    opt = Adam({"a": a, "b": b}, lr=0.1)
    opt.step({"a": np.ones(3)})
    assert not np.array_equal(a.data, np.ones(3))
    np.testing.assert_array_equal(b.data, np.ones(3))
    opt.step({"a": np.ones(3), "b": None})
    np.testing.assert_array_equal(b.data, np.ones(3))


def test_shape_mismatch_rejected():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    opt = Adam({"p": p})
    with pytest.raises(ValueError, match="shape"):
        opt.step({"p": np.ones(3)})


def test_non_tensor_param_rejected():
    with pytest.raises(TypeError):
        Adam({"p": np.ones(3)})


def _run(steps, opt, p, grads):
    for t in range(steps):
        opt.step({"p": grads[t]})


def test_state_round_trip_resumes_bitwise():
    rng = np.random.default_rng(7)
    grads = [rng.normal(size=(4,)) for _ in range(20)]

    # uninterrupted run
    p_ref = Tensor(np.zeros(4), requires_grad=True)
    opt_ref = Adam({"p": p_ref}, lr=0.02)
    _run(20, opt_ref, p_ref, grads)

    # run 10 steps, export state, rebuild, run the rest
    p = Tensor(np.zeros(4), requires_grad=True)
    opt = Adam({"p": p}, lr=0.02)
    _run(10, opt, p, grads)
    state = opt.state_arrays()
    p2 = Tensor(p.data.copy(), requires_grad=True)
    opt2 = Adam({"p": p2}, lr=0.02)
    opt2.load_state_arrays(state)
    assert opt2.t == 10
    for t in range(10, 20):
        opt2.step({"p": grads[t]})
    np.testing.assert_array_equal(p2.data, p_ref.data)


def test_state_arrays_match_checkpoint_contract():
    p = Tensor(np.ones((2, 3)), requires_grad=True)
    opt = Adam({"p": p})
    opt.step({"p": np.ones((2, 3))})
    state = opt.state_arrays()
    assert set(state) == {"opt.t", "opt.m.p", "opt.v.p"}
    assert state["opt.t"].shape == ()
    with pytest.raises(KeyError):
        Adam({"q": Tensor(np.ones(1), requires_grad=True)}).load_state_arrays(state)
