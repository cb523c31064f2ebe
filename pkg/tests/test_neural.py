import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicit_rec import neural
from implicit_rec.neural import (AdamState, DenseLayer, DropoutSpec, adam_step, backward, bce_loss,
                                 embedding_grad, forward, xavier_init)

from helpers import central_diff, rel_error


def naive_forward(layers, x):
    out = []
    for row in x:
        h = list(row)
        for layer in layers:
            z = [sum(h[a] * layer.weight[a, b] for a in range(len(h))) + layer.bias[b]
                 for b in range(layer.n_out)]
            if layer.activation == "relu":
                h = [max(v, 0.0) for v in z]
            elif layer.activation == "sigmoid":
                h = [1.0 / (1.0 + np.exp(-v)) for v in z]
            else:
                h = z
        out.append(h)
    return np.array(out)


def random_net(rng, widths, acts):
    return [DenseLayer(rng.normal(size=(a, b)), rng.normal(size=b), act)
            for a, b, act in zip(widths[:-1], widths[1:], acts)]


def test_xavier_bounds_and_determinism():
    v = xavier_init(1, 1, seed=0)
    assert abs(v[0, 0]) <= np.sqrt(3.0)
    assert np.array_equal(xavier_init(5, 3, seed=7), xavier_init(5, 3, seed=7))
    with pytest.raises(ValueError):
        xavier_init(0, 3)


def test_xavier_moments():
    w = np.stack([xavier_init(64, 32, seed=s) for s in range(50)]).ravel()
    var = 2.0 / (64 + 32)
    assert abs(w.mean()) < 3 * np.sqrt(var / w.size)
    assert abs(w.var() / var - 1.0) < 0.10


def test_identity_layer_passes_through():
    x = np.random.default_rng(0).normal(size=(4, 3))
    out, _ = forward([DenseLayer(np.eye(3), np.zeros(3), "identity")], x)
    assert np.array_equal(out, x)


def test_sigmoid_at_zero():
    out, _ = forward([DenseLayer(np.ones((2, 1)), np.zeros(1), "sigmoid")], np.zeros((1, 2)))
    assert out[0, 0] == 0.5


def test_forward_matches_naive():
    rng = np.random.default_rng(1)
    layers = random_net(rng, [5, 4, 3], ["relu", "sigmoid"])
    x = rng.normal(size=(6, 5))
    out, _ = forward(layers, x)
    assert np.max(np.abs(out - naive_forward(layers, x))) < 1e-12


def test_forward_shape_mismatch():
    layers = [DenseLayer(np.zeros((3, 2)), np.zeros(2)), DenseLayer(np.zeros((3, 1)), np.zeros(1))]
    with pytest.raises(ValueError):
        forward(layers, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((3, 2)), np.zeros(3))


def test_backward_zero_upstream():
    rng = np.random.default_rng(2)
    layers = random_net(rng, [4, 3, 2], ["relu", "identity"])
    out, tape = forward(layers, rng.normal(size=(5, 4)))
    grads, gx = backward(tape, np.zeros_like(out))
    assert all(not g.weight.any() and not g.bias.any() for g in grads)
    assert not gx.any()


def test_backward_shape_mismatch():
    rng = np.random.default_rng(2)
    _, tape = forward(random_net(rng, [4, 2], ["relu"]), rng.normal(size=(5, 4)))
    with pytest.raises(ValueError):
        backward(tape, np.zeros((5, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.sampled_from(["relu", "sigmoid", "identity"]), min_size=1, max_size=3),
       st.floats(0.0, 0.5))
def test_backward_matches_finite_differences(seed, acts, p):
    rng = np.random.default_rng(seed)
    widths = [int(w) for w in rng.integers(2, 5, len(acts) + 1)]
    layers = random_net(rng, widths, acts)
    x = rng.normal(size=(3, widths[0]))
    target = rng.normal(size=(3, widths[-1]))
    drop = [DropoutSpec(p)] + [None] * (len(acts) - 1)

    def loss():
        out, _ = forward(layers, x, drop, seed=seed)
        return 0.5 * np.sum((out - target) ** 2)

    out, tape = forward(layers, x, drop, seed=seed)
    grads, gx = backward(tape, out - target)
    for layer, g in zip(layers, grads):
        assert rel_error(g.weight, central_diff(loss, layer.weight)) < 1e-4
        assert rel_error(g.bias, central_diff(loss, layer.bias)) < 1e-4
    assert rel_error(gx, central_diff(loss, x)) < 1e-4


def test_linear_net_normal_equation_gradient():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(8, 4)), rng.normal(size=(8, 2))
    W, b = rng.normal(size=(4, 2)), rng.normal(size=2)
    out, tape = forward([DenseLayer(W, b, "identity")], X)
    (g,), _ = backward(tape, out - Y)
    # d/dW of 0.5 |XW + 1b - Y|^2 = X^T X W + X^T 1 b - X^T Y
    assert np.allclose(g.weight, X.T @ X @ W + np.outer(X.sum(0), b) - X.T @ Y, rtol=1e-12, atol=1e-12)
    assert np.allclose(g.bias, (X @ W + b - Y).sum(0))


def test_bce_values():
    loss, _ = bce_loss(np.array([0.5]), np.array([1.0]))
    assert abs(loss - np.log(2)) < 1e-15
    loss, _ = bce_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert 0.0 <= loss <= -np.log(1 - 1e-12) + 1e-15
    with pytest.raises(ValueError):
        bce_loss(np.array([0.5]), np.array([2.0]))


def test_bce_matches_direct_sum_and_gradient():
    rng = np.random.default_rng(4)
    p = rng.uniform(0.05, 0.95, 20)
    y = rng.integers(0, 2, 20).astype(float)
    loss, grad = bce_loss(p, y)
    direct = sum(-(yi * np.log(pi) + (1 - yi) * np.log(1 - pi)) for pi, yi in zip(p, y)) / 20
    assert abs(loss - direct) < 1e-12
    assert rel_error(grad, central_diff(lambda: bce_loss(p, y)[0], p)) < 1e-4
    total, _ = bce_loss(p, y, reduction="sum")
    assert abs(total - 20 * loss) < 1e-12


def test_dropout_inference_is_identity():
    rng = np.random.default_rng(5)
    layers = random_net(rng, [6, 3], ["relu"])
    x = rng.normal(size=(4, 6))
    a, tape = forward(layers, x, [DropoutSpec(0.5, "inference")], seed=1)
    b, _ = forward(layers, x)
    assert np.array_equal(a, b) and tape.masks == [None]


def test_inverted_dropout_preserves_expectation():
    rng = np.random.default_rng(6)
    x = rng.uniform(0.5, 1.5, size=(1, 20))
    masks = neural.dropout_mask((10_000, 20), 0.3, rng)
    mean = (masks * x).mean(axis=0)
    assert np.all(np.abs(mean / x[0] - 1.0) < 0.02)


def test_dropout_spec_validation():
    with pytest.raises(ValueError):
        DropoutSpec(1.0)
    with pytest.raises(ValueError):
        DropoutSpec(0.1, "eval")


def test_activation_ranges():
    rng = np.random.default_rng(7)
    x = rng.normal(scale=3, size=(50, 4))
    s, _ = forward([DenseLayer(rng.normal(size=(4, 3)), np.zeros(3), "sigmoid")], x)
    r, _ = forward([DenseLayer(rng.normal(size=(4, 3)), np.zeros(3), "relu")], x)
    assert np.all((s > 0) & (s < 1))
    assert np.all(r >= 0)


def test_adam_zero_grad_fresh_state():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(0.1))
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_learning_rate():
    p = {"w": np.array([0.0, 0.0])}
    state = AdamState(0.01)
    adam_step(p, {"w": np.array([3.0, -0.5])}, state)
    assert np.allclose(p["w"], [-0.01, 0.01], rtol=1e-6)
    assert state.step_count == 1


def test_adam_minimizes_square():
    p = {"x": np.array([1.0])}
    state = AdamState(0.1)
    for _ in range(200):
        adam_step(p, {"x": 2 * p["x"]}, state)
    assert abs(p["x"][0]) < 1e-2


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState())
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)


def test_adam_row_grad_touches_only_rows():
    E = np.ones((5, 2))
    adam_step({"E": E}, {"E": embedding_grad(np.array([1, 3, 1]), np.ones((3, 2)))}, AdamState(0.1))
    assert np.array_equal(E[[0, 2, 4]], np.ones((3, 2)))
    assert np.all(E[[1, 3]] < 1)


def test_embedding_grad_accumulates():
    g = embedding_grad(np.array([2, 0, 2]), np.array([[1.0], [2.0], [3.0]]))
    assert g.rows.tolist() == [0, 2] and g.values.ravel().tolist() == [2.0, 4.0]


def test_weights_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    layers = random_net(rng, [3, 4, 2], ["relu", "sigmoid"])
    arrays, acts = neural.layers_to_arrays("net", layers)
    neural.save_weights(tmp_path, arrays + [("h", rng.normal(size=4))], {"net": acts})
    back, manifest = neural.load_weights(tmp_path)
    rebuilt = neural.layers_from_arrays("net", back, manifest["activations"]["net"])
    x = rng.normal(size=(2, 3))
    assert np.array_equal(forward(rebuilt, x)[0], forward(layers, x)[0])
    assert (tmp_path / "weights.bin").stat().st_size == 8 * (12 + 4 + 8 + 2 + 4)
