"""Small dense networks with hand-written backprop and Adam.

Only the closed family the rest of the package needs: fully connected
layers, tanh or LeakyReLU hidden activations and a linear output layer.
All arrays are float64 and every random draw comes from an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ProtocolError

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("tanh", "leaky_relu")


class Mlp:
    """Feed-forward net mapping ``layer_dims[0]`` inputs to ``layer_dims[-1]`` outputs.

    ``weights[k]`` has shape ``(layer_dims[k], layer_dims[k+1])`` so a batch
    ``x`` of shape ``(n, d_in)`` maps to ``x @ W + b``.
    """

    def __init__(self, layer_dims, activation: str = "tanh", rng: np.random.Generator | None = None,
                 output_scale: float = 1.0, zero_init: bool = False):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"bad layer dims {layer_dims}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = layer_dims
        self.activation = activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        n_layers = len(layer_dims) - 1
        for k in range(n_layers):
            fan_in, fan_out = layer_dims[k], layer_dims[k + 1]
            if zero_init:
                W = np.zeros((fan_in, fan_out))
            else:
                if activation == "tanh":
                    limit = np.sqrt(6.0 / (fan_in + fan_out))
                else:
                    limit = np.sqrt(6.0 / fan_in)
                W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
                if k == n_layers - 1:
                    W *= output_scale
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.layer_dims = list(self.layer_dims)
        net.activation = self.activation
        net.weights = [W.copy() for W in self.weights]
        net.biases = [b.copy() for b in self.biases]
        net._cache = None
        return net

    def _act(self, z):
        if self.activation == "tanh":
            return np.tanh(z)
        return np.where(z > 0, z, LEAKY_SLOPE * z)

    def _act_grad(self, z, a):
        if self.activation == "tanh":
            return 1.0 - a * a
        return np.where(z > 0, 1.0, LEAKY_SLOPE)

    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.layer_dims[0]:
            raise ValueError(f"expected input width {self.layer_dims[0]}, got shape {x.shape}")
        pre, post = [], [X]
        h = X
        for k in range(self.n_layers):
            z = h @ self.weights[k] + self.biases[k]
            if k < self.n_layers - 1:
                h = self._act(z)
            else:
                h = z
            pre.append(z)
            post.append(h)
        self._cache = (pre, post, single) if cache else None
        return h[0] if single else h

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """Forward pass that leaves the backward cache untouched."""
        saved = self._cache
        out = self.forward(x, cache=False)
        self._cache = saved
        return out

    def backward(self, grad_out) -> list[np.ndarray]:
        """Gradients of the upstream-weighted output for every parameter, ordered like :meth:`params`."""
        if self._cache is None:
            raise ProtocolError("backward() called without a cached forward pass")
        pre, post, single = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != post[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output shape {post[-1].shape}")
        grads = [None] * (2 * self.n_layers)
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * self._act_grad(pre[k], post[k + 1])
            grads[2 * k] = post[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = g @ self.weights[k].T
        return grads

    def input_grad(self, grad_out) -> np.ndarray:
        pre, post, single = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        for k in reversed(range(self.n_layers)):
            if k < self.n_layers - 1:
                g = g * self._act_grad(pre[k], post[k + 1])
            g = g @ self.weights[k].T
        return g[0] if single else g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def check_finite(net: Mlp, what: str = "network") -> None:
    for p in net.params():
        if not np.all(np.isfinite(p)):
            raise NumericError(f"{what} has non-finite parameters")


def fit_regression(net: Mlp, inputs, targets, epochs: int = 500, batch_size: int = 256, lr: float = 1e-3,
                   seed: int = 0) -> tuple[Mlp, float]:
    """Mini-batch MSE training with seeded shuffling; returns the net and its final training MSE."""
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(X)
    if n == 0 or len(Y) != n:
        raise ValueError("need a non-empty dataset with matching inputs and targets")
    rng = np.random.default_rng(seed)
    opt = AdamState(lr=lr)
    params = net.params()
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            out = net.forward(X[idx])
            grad = 2.0 * (out - Y[idx]) / (len(idx) * Y.shape[1])
            adam_step(opt, params, net.backward(grad))
        check_finite(net)
    final = float(np.mean((net.predict(X) - Y) ** 2))
    return net, final


def save_mlp(net: Mlp, path, **extra) -> None:
    arrays = {"layer_dims": np.array(net.layer_dims), "activation": np.array(net.activation)}
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{k}"] = W
        arrays[f"b{k}"] = b
    for key, val in extra.items():
        arrays[f"extra_{key}"] = np.asarray(val)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_mlp(path) -> tuple[Mlp, dict]:
    with np.load(path, allow_pickle=False) as data:
        net = Mlp(data["layer_dims"].tolist(), str(data["activation"]), zero_init=True)
        for k in range(net.n_layers):
            net.weights[k] = data[f"W{k}"].copy()
            net.biases[k] = data[f"b{k}"].copy()
        extra = {key[6:]: data[key].copy() for key in data.files if key.startswith("extra_")}
    return net, extra
