import numpy as np
import pytest

from lpae.errors import ContractError, DivergenceError
from lpae.net import (AdamState, Gradients, Mlp, adam_step, backward, forward,
                      load_checkpoint, save_checkpoint, xavier_init)

from _oracles import central_difference, mlp_forward_loop


def test_xavier_bounds_shapes_and_determinism():
    net = xavier_init([6, 10, 3], seed=7)
    assert [W.shape for W in net.weights] == [(10, 6), (3, 10)]
    for W, (fi, fo) in zip(net.weights, [(6, 10), (10, 3)]):
        assert np.abs(W).max() <= np.sqrt(6 / (fi + fo))
    assert all(np.all(b == 0) for b in net.biases)
    again = xavier_init([6, 10, 3], seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), again.params()))
    other = xavier_init([6, 10, 3], seed=8)
    assert not np.array_equal(net.weights[0], other.weights[0])


def test_xavier_mean_near_zero():
    W = xavier_init([100, 100], seed=0).weights[0]
    sigma_mean = np.sqrt(6 / 200) / np.sqrt(3) / np.sqrt(W.size)
    assert abs(W.mean()) <= 3 * sigma_mean


def test_forward_single_linear_layer():
    net = Mlp((2, 1), [np.array([[2.0, -1.0]])], [np.array([0.5])])
    np.testing.assert_array_equal(net([1.0, 3.0]), [-0.5])
    out, _ = forward(net, np.array([[1.0, 3.0], [0.0, 0.0]]))
    np.testing.assert_array_equal(out, [[-0.5], [0.5]])


def test_forward_matches_scalar_loop():
    rng = np.random.default_rng(1)
    for act in ("identity", "sigmoid"):
        net = xavier_init([5, 7, 4, 3], seed=3, output_activation=act)
        for b in net.biases:
            b[:] = rng.normal(size=b.shape)
        for _ in range(10):
            x = rng.normal(size=5)
            np.testing.assert_allclose(net(x), mlp_forward_loop(net, x), rtol=1e-12, atol=1e-14)


def test_forward_bad_width():
    with pytest.raises(ContractError):
        xavier_init([3, 2], 0)(np.ones(4))


def test_backward_closed_form_linear():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(3, 4))
    net = Mlp((4, 3), [W], [np.zeros(3)])
    X = rng.normal(size=(5, 4))
    G = rng.normal(size=(5, 3))
    _, tr = forward(net, X)
    g = backward(net, tr, G)
    np.testing.assert_allclose(g.weights[0], G.T @ X)
    np.testing.assert_allclose(g.biases[0], G.sum(0))
    np.testing.assert_allclose(g.inputs, G @ W)


def test_backward_zero_upstream_gives_zero():
    net = xavier_init([3, 5, 2], 0)
    _, tr = forward(net, np.ones(3))
    g = backward(net, tr, np.zeros(2))
    assert all(np.all(p == 0) for p in g.params())


@pytest.mark.parametrize("act", ["identity", "sigmoid"])
def test_backward_finite_difference(act):
    rng = np.random.default_rng(4)
    net = xavier_init([4, 6, 5, 3], seed=9, output_activation=act)
    for b in net.biases:
        b[:] = rng.normal(0, 0.5, b.shape)
    X = rng.normal(size=(3, 4))
    G = rng.normal(size=(3, 3))
    _, tr = forward(net, X)
    if min(np.abs(p).min() for p in tr.pre[:-1]) < 1e-3:
        pytest.skip("sample too close to a ReLU kink")
    g = backward(net, tr, G)
    f = lambda: float(np.sum(forward(net, X)[0] * G))  # noqa: E731
    fd = central_difference(f, net.params())
    for a, b in zip(g.params(), fd):
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-8)
    (fdx,) = central_difference(f, [X])
    np.testing.assert_allclose(g.inputs, fdx, rtol=1e-5, atol=1e-8)


def test_stale_trace_rejected():
    net = xavier_init([2, 2], 0)
    _, tr = forward(net, np.ones(2))
    with pytest.raises(ContractError):
        backward(net.copy(), tr, np.ones(2))


def test_adam_zero_gradient_no_decay_is_identity():
    net = xavier_init([3, 4, 2], 1)
    state = AdamState.for_mlp(net, lr=0.1, weight_decay=0.0)
    new, st = adam_step(net, Gradients.zeros_like(net), state)
    assert st.t == 1
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), new.params()))


def test_adam_first_step_moves_by_lr():
    net = Mlp((1, 1), [np.array([[1.0]])], [np.array([0.0])])
    state = AdamState.for_mlp(net, lr=0.01, weight_decay=0.0)
    g = Gradients([np.array([[3.0]])], [np.array([-2.0])])
    new, _ = adam_step(net, g, state)
    # bias-corrected first step is lr * sign(g), up to eps
    assert new.weights[0][0, 0] == pytest.approx(0.99, abs=1e-9)
    assert new.biases[0][0] == pytest.approx(0.01, abs=1e-9)


def test_adam_decay_applies_to_weights_only():
    net = Mlp((1, 1), [np.array([[2.0]])], [np.array([2.0])])
    state = AdamState.for_mlp(net, lr=0.1, weight_decay=0.5)
    new, _ = adam_step(net, Gradients.zeros_like(net), state)
    assert new.weights[0][0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert new.biases[0][0] == 2.0


def test_adam_decreases_quadratic():
    net = Mlp((1, 1), [np.array([[5.0]])], [np.array([-3.0])])
    state = AdamState.for_mlp(net, lr=0.05, weight_decay=0.0)
    losses = []
    for _ in range(200):
        w, b = net.weights[0][0, 0], net.biases[0][0]
        losses.append(w * w + b * b)
        g = Gradients([np.array([[2 * w]])], [np.array([2 * b])])
        net, state = adam_step(net, g, state)
    assert losses[-1] < 1e-2 * losses[0]


def test_adam_non_finite_raises():
    net = xavier_init([2, 2], 0)
    g = Gradients.zeros_like(net)
    g.weights[0][0, 0] = np.nan
    with pytest.raises(DivergenceError):
        adam_step(net, g, AdamState.for_mlp(net))


def test_adam_leaves_inputs_untouched():
    net = xavier_init([2, 3, 2], 0)
    before = [p.copy() for p in net.params()]
    g = Gradients([np.ones_like(W) for W in net.weights], [np.ones_like(b) for b in net.biases])
    adam_step(net, g, AdamState.for_mlp(net))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))


def test_checkpoint_round_trip(tmp_path):
    enc = xavier_init([5, 8, 3], 1)
    dec = xavier_init([3, 8, 5], 2, output_activation="sigmoid")
    enc.biases[0][:] = np.pi
    save_checkpoint(tmp_path / "m.npz", encoder=enc, decoder=dec)
    nets = load_checkpoint(tmp_path / "m.npz")
    for orig in ("encoder", "decoder"):
        a, b = {"encoder": enc, "decoder": dec}[orig], nets[orig]
        assert a.layer_dims == b.layer_dims
        assert a.output_activation == b.output_activation
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params(), b.params()))
