import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teampursuit import nn_core
from teampursuit.nn_core import AdamState, CheckpointError, MlpParams, adam_step, backward, elu, forward


def dense_forward(p, x):
    """Plain layer-by-layer evaluation without the sparse gather."""
    a = np.atleast_2d(x)
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ W.T + b
        a = z if k == len(p.weights) - 1 else np.where(z > 0, z, np.exp(z) - 1)
    return a


def textbook_adam(params, grads, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    for P, G, M, V in zip(params, grads, m, v):
        M[...] = b1 * M + (1 - b1) * G
        V[...] = b2 * V + (1 - b2) * G * G
        P[...] -= lr * (M / (1 - b1 ** t)) / (np.sqrt(V / (1 - b2 ** t)) + eps)


def test_zero_network_outputs_zero():
    p = MlpParams.zeros([4, 3, 2])
    assert np.array_equal(forward(p, np.ones(4))[0], np.zeros(2))


def test_single_identity_layer():
    b = np.array([0.5, -1.0, 2.0])
    p = MlpParams([np.eye(3)], [b])
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(forward(p, x)[0], x + b)


def test_elu_values():
    assert math.isclose(float(elu(np.array(-1.0))), math.exp(-1) - 1, rel_tol=1e-15)
    assert round(float(elu(np.array(-1.0))), 4) == -0.6321
    assert float(elu(np.array(2.5))) == 2.5


def test_elu_smooth_at_zero():
    h = 1e-7
    left = (elu(np.array(0.0)) - elu(np.array(-h))) / h
    right = (elu(np.array(h)) - elu(np.array(0.0))) / h
    assert abs(float(left) - float(right)) < 1e-6


def test_backward_zero_and_linear_cases():
    rng = np.random.default_rng(0)
    p = MlpParams.init([5, 4, 3], rng)
    y, tape = forward(p, rng.normal(size=5))
    grads, gx = backward(p, tape, np.zeros(3))
    assert all(not g.W.any() and not g.b.any() for g in grads) and not gx.any()
    lin = MlpParams.init([4, 1], rng)
    x = rng.normal(size=4)
    _, tape = forward(lin, x)
    grads, gx = backward(lin, tape, np.ones(1))
    assert np.array_equal(grads[0].W, x[None, :])
    assert np.array_equal(gx, lin.weights[0][0])


def test_dimension_mismatch():
    p = MlpParams.zeros([4, 2])
    with pytest.raises(ValueError):
        forward(p, np.ones(5))
    with pytest.raises(ValueError):
        MlpParams([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.booleans())
def test_gradients_match_finite_differences(seed, wide):
    rng = np.random.default_rng(seed)
    width = 300 if wide else int(rng.integers(1, 6))
    sizes = [width] + [int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 3)))] + [int(rng.integers(1, 4))]
    p = MlpParams.init(sizes, rng)
    for b in p.biases:
        b[:] = rng.normal(0, 0.3, b.shape)
    x = rng.normal(size=(int(rng.integers(1, 4)), width))
    if wide:
        x[:, rng.random(width) < 0.95] = 0.0
    G = rng.normal(size=(x.shape[0], sizes[-1]))
    _, tape = forward(p, x)
    grads, gx = backward(p, tape, G)

    def f():
        return float(np.sum(G * dense_forward(p, x)))

    dense = nn_core.dense_grads(p, grads)
    checks = []
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        for arr, g in ((W, dense[k][0]), (b, dense[k][1])):
            for _ in range(3):
                idx = tuple(int(rng.integers(n)) for n in arr.shape)
                checks.append((arr, idx, g[idx]))
    for _ in range(3):
        idx = (int(rng.integers(x.shape[0])), int(rng.integers(width)))
        checks.append((x, idx, gx[idx]))
    for arr, idx, analytic in checks:
        numeric = nn_core.central_difference(f, arr, idx, 1e-5)
        assert nn_core.relative_error(analytic, numeric, 1e-6) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sparse_forward_equals_dense(seed):
    rng = np.random.default_rng(seed)
    p = MlpParams.init([400, 7, 3], rng)
    x = rng.normal(size=(5, 400))
    x[:, rng.random(400) < 0.9] = 0.0
    assert np.allclose(forward(p, x)[0], dense_forward(p, x), rtol=1e-12, atol=1e-12)


def test_adam_zero_gradient_leaves_params():
    rng = np.random.default_rng(1)
    p = MlpParams.init([3, 4, 2], rng)
    before = p.copy()
    s = AdamState.for_params(p)
    zero = [nn_core.LayerGrad(np.zeros_like(W), np.zeros_like(b)) for W, b in zip(p.weights, p.biases)]
    adam_step(p, s, zero, 1e-3)
    assert p.equals(before)


def test_adam_first_step_and_direction():
    p = MlpParams([np.array([[1.0, -2.0]])], [np.array([0.5])])
    s = AdamState.for_params(p)
    g = [nn_core.LayerGrad(np.array([[0.3, -7.0]]), np.array([1e-3]))]
    adam_step(p, s, g, 1e-3)
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(p.weights[0], [[1.0 - 1e-3, -2.0 + 1e-3]], atol=1e-10)
    assert math.isclose(p.biases[0][0], 0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8), rel_tol=1e-12)
    for _ in range(50):
        adam_step(p, s, g, 1e-3)
    assert p.weights[0][0, 0] < 1.0 - 0.04 and p.weights[0][0, 1] > -2.0 + 0.04


def test_column_skipping_adam_matches_textbook():
    rng = np.random.default_rng(2)
    p = MlpParams.init([300, 6, 3], rng)
    ref = [a.copy() for a in p.arrays()]
    m = [np.zeros_like(a) for a in ref]
    v = [np.zeros_like(a) for a in ref]
    s = AdamState.for_params(p)
    for t in range(1, 12):
        x = rng.normal(size=(4, 300))
        x[:, rng.random(300) < 0.95] = 0.0
        _, tape = forward(p, x)
        grads, _ = backward(p, tape, rng.normal(size=(4, 3)), input_grad=False)
        dense = [g for pair in nn_core.dense_grads(p, grads) for g in pair]
        adam_step(p, s, grads, 1e-2)
        textbook_adam(ref, dense, m, v, t, 1e-2)
        for a, r in zip(p.arrays(), ref):
            assert np.allclose(a, r, rtol=0, atol=1e-14)


def test_checkpoint_round_trip_and_errors():
    rng = np.random.default_rng(3)
    p = MlpParams.init([5, 4, 2], rng)
    blob = nn_core.save(p)
    assert blob[:4] == b"MLP1"
    q = nn_core.load(blob)
    assert q.equals(p)
    with pytest.raises(CheckpointError):
        nn_core.load(blob[:-3])
    with pytest.raises(CheckpointError):
        nn_core.load(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        nn_core.load(blob + b"\x00")
    with pytest.raises(CheckpointError):
        nn_core.load(blob[:6])


def test_forward_is_pure():
    rng = np.random.default_rng(4)
    p = MlpParams.init([6, 5, 2], rng)
    x = rng.normal(size=6)
    before = p.copy()
    a, b = forward(p, x)[0], forward(p, x)[0]
    assert np.array_equal(a, b) and p.equals(before)
