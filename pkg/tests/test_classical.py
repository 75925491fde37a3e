import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qganlab.classical import (BAR_DISCRIMINATOR, Adam, CnnGenerator, MlpNetwork, SGD,
                               build_mlp_generator, build_patch_discriminator, cnn_backward,
                               cnn_forward_cached, cnn_generator_forward, load_network,
                               make_optimizer, mlp_backward, mlp_forward, mlp_forward_cached,
                               save_network)


def max_rel_error(analytic, numeric, floor=1e-3):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def numeric_grads(model, loss, h=1e-6):
    params = [p.copy() for p in model.parameters()]
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            for sign in (1, -1):
                trial = [q.copy() for q in params]
                trial[k][idx] += sign * h
                model.set_parameters(trial)
                g[idx] += sign * loss()
            g[idx] /= 2 * h
        out.append(g)
    model.set_parameters(params)
    return out


def naive_forward(net, x):
    a = list(x)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = [sum(w[j, i] * a[i] for i in range(len(a))) + b[j] for j in range(w.shape[0])]
        if l < len(net.weights) - 1:
            a = [max(v, 0.0) for v in z]
        elif net.output_activation == "sigmoid":
            a = [1 / (1 + np.exp(-v)) for v in z]
        else:
            e = [np.exp(v) for v in z]
            a = [v / sum(e) for v in e]
    return np.array(a)


def test_zero_net_sigmoid_half():
    assert mlp_forward(MlpNetwork.zeros((3, 4, 1)), [1.0, -2.0, 0.5])[0] == 0.5


def test_identity_relu_layer():
    net = MlpNetwork((3, 3, 3), [np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)], "linear")
    x = np.array([1.5, -2.0, 0.0])
    assert np.array_equal(mlp_forward(net, x), np.maximum(x, 0))


def test_forward_matches_naive_loops(rng):
    for act in ("sigmoid", "softmax"):
        net = MlpNetwork.init((5, 7, 3, 2), rng, act)
        x = rng.normal(size=5)
        assert np.allclose(mlp_forward(net, x), naive_forward(net, x), atol=1e-12)


def test_forward_batch_equals_rows(rng):
    net = MlpNetwork.init((4, 6, 1), rng)
    x = rng.normal(size=(5, 4))
    batch = mlp_forward(net, x)
    assert np.allclose(batch, np.stack([mlp_forward(net, r) for r in x]))


def test_forward_errors(rng):
    net = MlpNetwork.init((4, 1), rng)
    with pytest.raises(ValueError):
        mlp_forward(net, np.zeros(3))
    with pytest.raises(ValueError):
        mlp_forward(net, [np.nan, 0, 0, 0])
    with pytest.raises(ValueError):
        MlpNetwork((2, 1), [np.zeros((2, 2))], [np.zeros(1)])


def test_zero_upstream_zero_grads(rng):
    net = MlpNetwork.init((3, 4, 1), rng)
    _, cache = mlp_forward_cached(net, rng.normal(size=3))
    grads, _ = mlp_backward(net, cache, np.zeros(1))
    assert all(np.all(g == 0) for g in grads)


def test_single_sigmoid_neuron_bce():
    w, x, y = 0.7, 1.3, 1.0
    net = MlpNetwork((1, 1), [np.array([[w]])], [np.zeros(1)])
    out, cache = mlp_forward_cached(net, [x])
    s = out[0]
    # dBCE/ds = -(y/s) + (1-y)/(1-s)
    grads, _ = mlp_backward(net, cache, [-(y / s) + (1 - y) / (1 - s)])
    assert grads[0][0, 0] == pytest.approx((s - y) * x, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mlp_backprop_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for sizes, act in (((4, 5, 10, 1), "sigmoid"), ((2, 4, 4), "softmax"), ((64, 64, 16, 1), "sigmoid")):
        net = MlpNetwork.init(sizes, rng, act)
        x = rng.random((3, sizes[0]))
        c = rng.normal(size=(3, sizes[-1]))
        loss = lambda: float((mlp_forward(net, x) * c).sum())  # noqa: E731
        _, cache = mlp_forward_cached(net, x)
        grads, _ = mlp_backward(net, cache, c)
        if sizes[0] == 64:
            # the 5217-parameter net: check the first and last layers only
            num = numeric_grads(_Subset(net, [4, 5]), loss)
            assert max_rel_error(grads[4:6], num) < 1e-5
        else:
            assert max_rel_error(grads, numeric_grads(net, loss)) < 1e-5


class _Subset:
    """Expose only some parameter arrays of a network to the numeric checker."""

    def __init__(self, net, which):
        self.net, self.which = net, which

    def parameters(self):
        return [self.net.parameters()[k] for k in self.which]

    def set_parameters(self, params):
        full = self.net.parameters()
        for k, p in zip(self.which, params):
            full[k] = p
        self.net.set_parameters(full)


def test_input_gradient(rng):
    net = MlpNetwork.init((3, 5, 1), rng)
    x = rng.normal(size=3)
    _, cache = mlp_forward_cached(net, x)
    _, gx = mlp_backward(net, cache, np.ones(1))
    h = 1e-6
    num = [(mlp_forward(net, x + h * e)[0] - mlp_forward(net, x - h * e)[0]) / (2 * h)
           for e in np.eye(3)]
    assert np.allclose(gx, num, atol=1e-8)


def test_discriminator_builders(rng):
    digits = build_patch_discriminator(64, rng)
    assert digits.layer_sizes == (64, 64, 16, 1) and digits.n_params == 5217
    bar = build_patch_discriminator(4, rng)
    assert bar.layer_sizes == BAR_DISCRIMINATOR and bar.n_params == 96
    out = mlp_forward(digits, rng.random(64))
    assert out.shape == (1,) and 0 < out[0] < 1
    assert build_patch_discriminator(4, rng, hidden=(16,)).n_params == 97


def test_mlp_generator_softmax(rng):
    gen = build_mlp_generator(2, 2, 4, rng)
    assert gen.n_params == 18
    assert np.allclose(mlp_forward(gen, rng.normal(size=(7, 2))).sum(axis=1), 1, atol=1e-10)


def test_cnn_zero_weights_uniform():
    gen = CnnGenerator.zeros(2, 3)
    assert np.allclose(cnn_generator_forward(gen, [0.3, -1.0]), 0.25)


def test_cnn_output_normalized(rng):
    gen = CnnGenerator.init(2, 3, rng)
    out = cnn_generator_forward(gen, rng.normal(size=(10, 2)))
    assert out.shape == (10, 4) and np.allclose(out.sum(axis=1), 1, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_cnn_backprop_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    gen = CnnGenerator.init(2, 3, rng)
    z = rng.normal(size=(4, 2))
    c = rng.normal(size=(4, 4))
    loss = lambda: float((cnn_generator_forward(gen, z) * c).sum())  # noqa: E731
    _, cache = cnn_forward_cached(gen, z)
    grads, _ = cnn_backward(gen, cache, c)
    assert max_rel_error(grads, numeric_grads(gen, loss)) < 1e-5


def test_sgd_step():
    out = SGD(0.1).step([np.array([1.0])], [np.array([2.0])])
    assert out[0][0] == pytest.approx(0.8)
    assert SGD(0.1).step([np.array([1.0])], [np.zeros(1)])[0][0] == 1.0


def test_sgd_momentum_and_nesterov():
    opt = SGD(0.1, momentum=0.5)
    p = [np.array([0.0])]
    p = opt.step(p, [np.array([1.0])])
    p = opt.step(p, [np.array([1.0])])
    assert p[0][0] == pytest.approx(-0.1 - 0.15)
    nes = SGD(0.1, momentum=0.5, nesterov=True)
    q = nes.step([np.array([0.0])], [np.array([1.0])])
    assert q[0][0] == pytest.approx(-0.1 * 1.5)


def test_adam_first_step():
    lr, eps = 0.01, 1e-8
    out = Adam(lr).step([np.array([0.0])], [np.array([1.0])])
    # bias-corrected m_hat = 1, v_hat = 1
    assert out[0][0] == pytest.approx(-lr / (1 + eps), rel=1e-12)


def test_adam_zero_gradient_drift():
    opt = Adam(0.01)
    p = [np.array([1.0])]
    for _ in range(5):
        p = opt.step(p, [np.zeros(1)])
    assert abs(p[0][0] - 1.0) <= 0.01 * 1e-8 * 5


def test_optimizer_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        SGD(0.1).step([np.zeros(1)], [np.array([np.inf])])
    with pytest.raises(FloatingPointError):
        Adam(0.1).step([np.zeros(1)], [np.array([np.nan])])
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)


def test_training_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(0)
        net = MlpNetwork.init((2, 3, 1), rng)
        opt = make_optimizer("adam", 0.05)
        x = rng.normal(size=(8, 2))
        for _ in range(20):
            _, cache = mlp_forward_cached(net, x)
            grads, _ = mlp_backward(net, cache, np.ones((8, 1)))
            net.set_parameters(opt.step(net.parameters(), grads))
        return net.parameters()

    a, b = run(), run()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_network_checkpoint_round_trip(tmp_path, rng):
    net = MlpNetwork.init((4, 5, 1), rng)
    opt = SGD(0.1, 0.9)
    save_network(tmp_path / "n.json", net, opt)
    back = load_network(tmp_path / "n.json")
    assert all(np.array_equal(x, y) for x, y in zip(back.parameters(), net.parameters()))
    cnn = CnnGenerator.init(1, 2, rng)
    save_network(tmp_path / "c.json", cnn)
    back = load_network(tmp_path / "c.json")
    assert all(np.array_equal(x, y) for x, y in zip(back.parameters(), cnn.parameters()))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_output_ranges(seed):
    rng = np.random.default_rng(seed)
    d = MlpNetwork.init((4, 5, 10, 1), rng)
    x = rng.normal(size=(6, 4)) * 3
    out = mlp_forward(d, x)
    assert np.all((out > 0) & (out < 1))
    g = build_mlp_generator(2, 4, 4, rng)
    assert np.allclose(mlp_forward(g, x[:, :2]).sum(axis=1), 1, atol=1e-10)
