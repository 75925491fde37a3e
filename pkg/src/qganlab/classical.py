"""Classical networks with hand-written backpropagation, plus SGD and Adam.

Networks accept a single vector or a batch (rows). Parameters are exposed as a
flat list of arrays (``net.parameters()``) and gradients come back in the same
order, which is the contract the optimizers rely on.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DIGITS_DISCRIMINATOR = (64, 64, 16, 1)
# two hidden layers with exactly 96 parameters: 4*5+5 + 5*10+10 + 10*1+1
BAR_DISCRIMINATOR = (4, 5, 10, 1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activation_grad(kind: str, y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull ``upstream`` (dL/dy) back through the output activation."""
    if kind == "sigmoid":
        return upstream * y * (1.0 - y)
    if kind == "softmax":
        return y * (upstream - (upstream * y).sum(axis=-1, keepdims=True))
    if kind == "linear":
        return upstream
    raise ValueError(f"unknown activation {kind}")


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return (x[None, :], True) if x.ndim == 1 else (x, False)


@dataclass
class MlpNetwork:
    """Fully connected net; ReLU on hidden layers, chosen activation on the output.

    ``weights[l]`` has shape ``(n_{l+1}, n_l)``.
    """

    layer_sizes: tuple[int, ...]
    weights: list
    biases: list
    output_activation: str = "sigmoid"

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count mismatch")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[l + 1], self.layer_sizes[l]) or b.shape != (self.layer_sizes[l + 1],):
                raise ValueError(f"layer {l} has incompatible shapes")

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng: np.random.Generator,
             output_activation: str = "sigmoid") -> "MlpNetwork":
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
        return cls(tuple(layer_sizes), weights, biases, output_activation)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], output_activation: str = "sigmoid") -> "MlpNetwork":
        weights = [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(o) for o in layer_sizes[1:]]
        return cls(tuple(layer_sizes), weights, biases, output_activation)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        self.weights = [np.array(p) for p in params[0::2]]
        self.biases = [np.array(p) for p in params[1::2]]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.layer_sizes, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.output_activation)

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "layer_sizes": list(self.layer_sizes),
            "output_activation": self.output_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpNetwork":
        return cls(tuple(doc["layer_sizes"]), [np.array(w, dtype=float) for w in doc["weights"]],
                   [np.array(b, dtype=float) for b in doc["biases"]], doc["output_activation"])


def mlp_forward_cached(net: MlpNetwork, x):
    """Forward pass returning ``(output, cache)`` for :func:`mlp_backward`."""
    a, single = _as_batch(x)
    if a.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"input width {a.shape[1]} != {net.layer_sizes[0]}")
    activations = [a]
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        if l < last:
            a = np.maximum(z, 0.0)
        elif net.output_activation == "sigmoid":
            a = _sigmoid(z)
        elif net.output_activation == "softmax":
            a = _softmax(z)
        else:
            a = z
        activations.append(a)
    out = a[0] if single else a
    return out, (activations, single)


def mlp_forward(net: MlpNetwork, x) -> np.ndarray:
    return mlp_forward_cached(net, x)[0]


def mlp_backward(net: MlpNetwork, cache, upstream):
    """Gradients for the scalar loss whose output gradient is ``upstream``.

    Returns ``(param_grads, input_grad)``; ``param_grads`` follows
    ``net.parameters()`` order and sums over the batch.
    """
    activations, single = cache
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    g = _activation_grad(net.output_activation, activations[-1], g)
    grads = [None] * (2 * len(net.weights))
    for l in reversed(range(len(net.weights))):
        a_in = activations[l]
        grads[2 * l] = g.T @ a_in
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ net.weights[l]
        if l > 0:
            g = g * (activations[l] > 0)
    return grads, (g[0] if single else g)


def build_patch_discriminator(input_dim: int, rng: np.random.Generator,
                              hidden: Optional[Sequence[int]] = None) -> MlpNetwork:
    """Discriminator for the patch GAN: ReLU hidden layers, sigmoid head."""
    if hidden is None:
        if input_dim == 64:
            hidden = DIGITS_DISCRIMINATOR[1:-1]
        elif input_dim == 4:
            hidden = BAR_DISCRIMINATOR[1:-1]
        else:
            hidden = (64, 16)
    return MlpNetwork.init((input_dim, *hidden, 1), rng, "sigmoid")


def build_mlp_generator(noise_dim: int, hidden: int, out_dim: int,
                        rng: np.random.Generator) -> MlpNetwork:
    return MlpNetwork.init((noise_dim, hidden, out_dim), rng, "softmax")


# ---------------------------------------------------------------------------
# convolutional generator

@dataclass
class CnnGenerator:
    """Noise (1x1, ``noise_dim`` channels) -> (1x2) kernel -> 1x2 hidden map,
    ReLU -> (2x1) kernel -> 2x2 image, softmax over the four pixels.

    Both layers are transposed convolutions: each input position spreads over
    the kernel footprint. Output pixel order is row-major ``(i, j) -> 2i + j``.
    """

    noise_dim: int
    channels: int
    k1: np.ndarray  # (noise_dim, channels, 2): row kernel per in/out channel
    b1: np.ndarray  # (channels,)
    k2: np.ndarray  # (channels, 2): column kernel per hidden channel
    b2: np.ndarray  # (1,)

    @classmethod
    def init(cls, noise_dim: int, channels: int, rng: np.random.Generator) -> "CnnGenerator":
        b_1 = 1.0 / np.sqrt(noise_dim)
        b_2 = 1.0 / np.sqrt(channels)
        return cls(noise_dim, channels,
                   rng.uniform(-b_1, b_1, (noise_dim, channels, 2)),
                   rng.uniform(-b_1, b_1, channels),
                   rng.uniform(-b_2, b_2, (channels, 2)),
                   rng.uniform(-b_2, b_2, 1))

    @classmethod
    def zeros(cls, noise_dim: int, channels: int) -> "CnnGenerator":
        return cls(noise_dim, channels, np.zeros((noise_dim, channels, 2)), np.zeros(channels),
                   np.zeros((channels, 2)), np.zeros(1))

    @property
    def n_params(self) -> int:
        return self.k1.size + self.b1.size + self.k2.size + self.b2.size

    def parameters(self) -> list:
        return [self.k1, self.b1, self.k2, self.b2]

    def set_parameters(self, params) -> None:
        self.k1, self.b1, self.k2, self.b2 = (np.array(p) for p in params)

    def to_dict(self) -> dict:
        return {"kind": "cnn", "noise_dim": self.noise_dim, "channels": self.channels,
                "k1": self.k1.tolist(), "b1": self.b1.tolist(),
                "k2": self.k2.tolist(), "b2": self.b2.tolist()}


def cnn_forward_cached(gen: CnnGenerator, noise):
    z, single = _as_batch(noise)
    if z.shape[1] != gen.noise_dim:
        raise ValueError("noise dimension mismatch")
    h = np.einsum("bi,icj->bcj", z, gen.k1) + gen.b1[None, :, None]
    a = np.maximum(h, 0.0)
    o = np.einsum("bcj,ci->bij", a, gen.k2) + gen.b2[0]
    y = _softmax(o.reshape(o.shape[0], 4))
    return (y[0] if single else y), (z, h, a, y, single)


def cnn_generator_forward(gen: CnnGenerator, noise) -> np.ndarray:
    return cnn_forward_cached(gen, noise)[0]


def cnn_backward(gen: CnnGenerator, cache, upstream):
    z, h, a, y, single = cache
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    go = _activation_grad("softmax", y, g).reshape(-1, 2, 2)  # (b, i, j)
    dk2 = np.einsum("bij,bcj->ci", go, a)
    db2 = np.array([go.sum()])
    da = np.einsum("bij,ci->bcj", go, gen.k2)
    dh = da * (h > 0)
    dk1 = np.einsum("bcj,bi->icj", dh, z)
    db1 = dh.sum(axis=(0, 2))
    dz = np.einsum("bcj,icj->bi", dh, gen.k1)
    return [dk1, db1, dk2, db2], (dz[0] if single else dz)


# ---------------------------------------------------------------------------
# optimizers

def _check_grads(grads) -> None:
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")


@dataclass
class SGD:
    lr: float
    momentum: float = 0.0
    nesterov: bool = False
    velocity: Optional[list] = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list:
        _check_grads(grads)
        if self.momentum == 0.0:
            return [p - self.lr * g for p, g in zip(params, grads)]
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            v = self.momentum * self.velocity[k] + g
            self.velocity[k] = v
            d = g + self.momentum * v if self.nesterov else v
            out.append(p - self.lr * d)
        return out

    def to_dict(self) -> dict:
        return {"kind": "sgd", "lr": self.lr, "momentum": self.momentum,
                "nesterov": self.nesterov,
                "velocity": None if self.velocity is None else [v.tolist() for v in self.velocity]}


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[list] = None
    v: Optional[list] = None
    t: int = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list:
        _check_grads(grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out

    def to_dict(self) -> dict:
        return {"kind": "adam", "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "t": self.t,
                "m": None if self.m is None else [x.tolist() for x in self.m],
                "v": None if self.v is None else [x.tolist() for x in self.v]}


def make_optimizer(kind: str, lr: float, momentum: float = 0.0, nesterov: bool = False):
    if kind == "sgd":
        return SGD(lr, momentum, nesterov)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {kind}")


def save_network(path, net, optimizer=None) -> None:
    doc = {"network": net.to_dict()}
    if optimizer is not None:
        doc["optimizer"] = optimizer.to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_network(path):
    with open(path) as fh:
        doc = json.load(fh)
    net = doc["network"]
    if net["kind"] == "mlp":
        return MlpNetwork.from_dict(net)
    return CnnGenerator(net["noise_dim"], net["channels"], np.array(net["k1"]), np.array(net["b1"]),
                        np.array(net["k2"]), np.array(net["b2"]))
