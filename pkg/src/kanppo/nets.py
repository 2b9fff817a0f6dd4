"""KAN and dense layers with hand-written reverse mode.

Every layer exposes the same contract:

* ``forward(x) -> (y, cache)`` for a batch ``x`` of shape ``(batch, n_in)``;
* ``backward(cache, grad_y, grad_view, need_input_grad) -> grad_x`` which
  *accumulates* parameter gradients into ``grad_view`` (a flat slice of the
  network's gradient buffer).

A :class:`Network` owns one flat float64 parameter vector; each layer holds
reshaped views into it, so optimisers and checkpoints work on a single array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Rng
from .spline import EdgeFunction, SplineConfig, basis_derivatives, basis_values

__all__ = [
    "DenseLayer",
    "KANLayer",
    "Network",
    "InitScheme",
    "count_params",
    "init_params",
    "mlp",
    "kan",
]

ACTIVATIONS = ("tanh", "identity")


class DenseLayer:
    def __init__(self, n_in: int, n_out: int, activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.activation = activation
        self.bind(np.zeros(self.param_count))

    @property
    def param_count(self) -> int:
        return self.n_in * self.n_out + self.n_out

    def bind(self, params: np.ndarray):
        nw = self.n_in * self.n_out
        self.weights = params[:nw].reshape(self.n_out, self.n_in)
        self.biases = params[nw:]

    def forward(self, x: np.ndarray):
        z = x @ self.weights.T + self.biases
        y = np.tanh(z) if self.activation == "tanh" else z
        return y, (x, y)

    def backward(self, cache, grad_y, grad_view, need_input_grad=True):
        x, y = cache
        gz = grad_y * (1.0 - y * y) if self.activation == "tanh" else grad_y
        nw = self.n_in * self.n_out
        grad_view[:nw] += (gz.T @ x).ravel()
        grad_view[nw:] += gz.sum(axis=0)
        return gz @ self.weights if need_input_grad else None

    def describe(self) -> dict:
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}


class KANLayer:
    """``y_j = sum_i phi_{j,i}(x_i)`` with one B-spline edge per (output, input) pair.

    Edges carry only spline coefficients: no base activation and no scale
    weights, so the layer has ``n_in * n_out * (g + k)`` parameters.
    """

    def __init__(self, n_in: int, n_out: int, config: SplineConfig | None = None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.config = config or SplineConfig()
        self.bind(np.zeros(self.param_count))

    @property
    def param_count(self) -> int:
        return self.n_in * self.n_out * self.config.basis_count

    def bind(self, params: np.ndarray):
        # coeffs[j, i, m]: basis m of the edge from input i to output j
        self.coeffs = params.reshape(self.n_out, self.n_in, self.config.basis_count)

    def edge(self, j: int, i: int) -> EdgeFunction:
        """Edge from input ``i`` to output ``j``; shares storage with the layer."""
        e = EdgeFunction(self.config)
        e.coeffs = self.coeffs[j, i]
        return e

    def forward(self, x: np.ndarray):
        basis = basis_values(self.config, x)  # (batch, n_in, nb)
        flat = basis.reshape(len(x), -1)
        y = flat @ self.coeffs.reshape(self.n_out, -1).T
        return y, (x, flat)

    def backward(self, cache, grad_y, grad_view, need_input_grad=True):
        x, flat = cache
        c2 = self.coeffs.reshape(self.n_out, -1)
        grad_view += (grad_y.T @ flat).ravel()
        if not need_input_grad:
            return None
        dbasis = basis_derivatives(self.config, x)
        upstream = (grad_y @ c2).reshape(dbasis.shape)
        return (upstream * dbasis).sum(axis=-1)

    def describe(self) -> dict:
        return {"type": "kan", "n_in": self.n_in, "n_out": self.n_out, "spline": self.config.to_dict()}


def _layer_from_dict(d: dict):
    if d["type"] == "dense":
        return DenseLayer(d["n_in"], d["n_out"], d.get("activation", "tanh"))
    if d["type"] == "kan":
        return KANLayer(d["n_in"], d["n_out"], SplineConfig.from_dict(d["spline"]))
    raise ValueError(f"unknown layer type {d['type']!r}")


class Network:
    """A chain of layers sharing one flat parameter vector."""

    def __init__(self, layers, kind: str | None = None):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer dimensions do not chain: {a.n_out} outputs feed {b.n_in} inputs")
        self.layers = layers
        if kind is None:
            kinds = {"kan" if isinstance(l, KANLayer) else "mlp" for l in layers}
            kind = kinds.pop() if len(kinds) == 1 else "mixed"
        self.kind = kind
        self._offsets = np.cumsum([0] + [l.param_count for l in layers])
        self.bind(np.zeros(self.param_count))

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def param_count(self) -> int:
        return int(self._offsets[-1])

    def bind(self, params: np.ndarray):
        """Point the layers at ``params`` (a float64 vector of ``param_count`` values)."""
        if params.shape != (self.param_count,):
            raise ValueError(f"parameter vector has shape {params.shape}, expected ({self.param_count},)")
        self.params = params
        for layer, lo, hi in zip(self.layers, self._offsets[:-1], self._offsets[1:]):
            layer.bind(params[lo:hi])

    def zero_grads(self) -> np.ndarray:
        return np.zeros(self.param_count)

    def forward(self, x):
        """Returns ``(y, cache)``.  A 1-D input gives a 1-D output."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.n_in:
            raise ValueError(f"network expects inputs of width {self.n_in}, got shape {x.shape}")
        caches = []
        h = xb
        for layer in self.layers:
            h, c = layer.forward(h)
            caches.append(c)
        cache = (id(self), single, caches)
        return (h[0] if single else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_y, grads: np.ndarray, need_input_grad: bool = True):
        """Accumulate d(loss)/d(params) into ``grads`` and return d(loss)/d(x)."""
        owner, single, caches = cache
        if owner != id(self) or len(caches) != len(self.layers):
            raise ValueError("cache was not produced by this network's forward pass")
        if grads.shape != (self.param_count,):
            raise ValueError(f"gradient buffer has shape {grads.shape}, expected ({self.param_count},)")
        g = np.asarray(grad_y, dtype=np.float64)
        g = g[None, :] if single else g
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            lo, hi = self._offsets[idx], self._offsets[idx + 1]
            g = layer.backward(caches[idx], g, grads[lo:hi], need_input_grad or idx > 0)
        if g is None:
            return None
        return g[0] if single else g

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layers": [l.describe() for l in self.layers],
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        net = cls([_layer_from_dict(l) for l in d["layers"]], kind=d.get("kind"))
        params = np.array(d["params"], dtype=np.float64)
        if params.shape != (net.param_count,):
            raise ValueError(f"checkpoint holds {params.size} parameters, layout needs {net.param_count}")
        net.params[:] = params
        return net


def count_params(net: Network) -> int:
    return net.param_count


@dataclass
class InitScheme:
    """Initialisation recipe.

    Dense weights use ``dense="fan_in"`` (Gaussian, variance ``gain**2 / n_in``)
    or ``"orthogonal"`` (scaled orthogonal matrix); biases start at zero.
    The last layer uses ``output_gain``.  KAN coefficients are drawn from
    ``N(0, kan_sigma**2)``.
    """

    dense: str = "fan_in"
    hidden_gain: float = 1.0
    output_gain: float = 1.0
    kan_sigma: float = 0.1


def init_params(net: Network, rng: Rng, scheme: InitScheme | None = None) -> Network:
    scheme = scheme or InitScheme()
    last = len(net.layers) - 1
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, KANLayer):
            if scheme.kan_sigma > 0:
                layer.coeffs[...] = rng.normal(layer.coeffs.shape, std=scheme.kan_sigma)
            else:
                layer.coeffs[...] = 0.0
            continue
        gain = scheme.output_gain if idx == last else scheme.hidden_gain
        shape = layer.weights.shape
        if scheme.dense == "fan_in":
            layer.weights[...] = rng.normal(shape, std=gain / np.sqrt(layer.n_in))
        elif scheme.dense == "orthogonal":
            a = rng.normal((max(shape), min(shape)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            layer.weights[...] = gain * (q if shape[0] >= shape[1] else q.T)
        else:
            raise ValueError(f"unknown dense init scheme {scheme.dense!r}")
        layer.biases[...] = 0.0
    return net


def mlp(n_in: int, hidden, n_out: int) -> Network:
    """tanh hidden layers, identity output."""
    sizes = [n_in, *hidden, n_out]
    layers = [DenseLayer(a, b, "tanh") for a, b in zip(sizes[:-2], sizes[1:-1])]
    layers.append(DenseLayer(sizes[-2], sizes[-1], "identity"))
    return Network(layers, kind="mlp")


def kan(n_in: int, hidden, n_out: int, config: SplineConfig | None = None) -> Network:
    sizes = [n_in, *hidden, n_out]
    return Network([KANLayer(a, b, config) for a, b in zip(sizes[:-1], sizes[1:])], kind="kan")
