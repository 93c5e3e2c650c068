"""Dense numeric core: the five layer kinds used by the autoencoders and Adam.

Tensors are plain :class:`numpy.ndarray` objects. Per-point features use the
``[B, C, N]`` layout (batch, channels, points), flat features use ``[B, C]``.
Every layer caches what it needs during ``forward`` and consumes that cache
in ``backward``; gradients accumulate into ``layer.grads``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVarianceError,
    DimensionError,
    EmptyInputError,
    NonFiniteError,
    ProtocolError,
)

DEFAULT_DTYPE = np.float32


def check_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def _take_cache(self):
        if self._cache is None:
            raise ProtocolError(f"{self.kind}.backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def __repr__(self):
        return f"{self.kind}({self.describe()})"

    def describe(self):
        return ""


class _Affine(Layer):
    """Shared storage for the two linear layer kinds."""

    def __init__(self, in_features, out_features, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.params["weight"] = np.zeros((self.out_features, self.in_features), dtype=dtype)
        self.params["bias"] = np.zeros(self.out_features, dtype=dtype)
        self.zero_grad()

    def describe(self):
        return f"{self.in_features} -> {self.out_features}"


class PointwiseLinear(_Affine):
    """Kernel-size-1 convolution: one weight matrix applied to every point.

    Input ``[B, Cin, N]``, output ``[B, Cout, N]``.
    """

    kind = "PointwiseLinear"

    def forward(self, x, train=True):
        if x.ndim != 3 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"PointwiseLinear expects [B, {self.in_features}, N], got {list(x.shape)}"
            )
        w, b = self.params["weight"], self.params["bias"]
        self._cache = x
        return np.matmul(w, x) + b[None, :, None]

    def backward(self, g):
        x = self._take_cache()
        w = self.params["weight"]
        self.grads["weight"] += np.tensordot(g, x, axes=([0, 2], [0, 2])).astype(w.dtype)
        self.grads["bias"] += g.sum(axis=(0, 2), dtype=np.float64).astype(w.dtype)
        return np.matmul(w.T, g)


class Dense(_Affine):
    """Fully connected layer on ``[B, Cin]`` inputs."""

    kind = "Dense"

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"Dense expects [B, {self.in_features}], got {list(x.shape)}")
        w, b = self.params["weight"], self.params["bias"]
        self._cache = x
        return x @ w.T + b

    def backward(self, g):
        x = self._take_cache()
        w = self.params["weight"]
        self.grads["weight"] += (g.T @ x).astype(w.dtype)
        self.grads["bias"] += g.sum(axis=0, dtype=np.float64).astype(w.dtype)
        return g @ w


class BatchNorm(Layer):
    """Batch normalization over the batch (and point) axes.

    Works on ``[B, C]`` and ``[B, C, N]``. Statistics are accumulated in
    float64. Running variance is tracked with the unbiased estimator.
    """

    kind = "BatchNorm"

    def __init__(self, num_features, momentum=0.1, eps=1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        if eps <= 0:
            raise ValueError("BatchNorm eps must be positive")
        self.num_features = int(num_features)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.params["weight"] = np.ones(self.num_features, dtype=dtype)
        self.params["bias"] = np.zeros(self.num_features, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(self.num_features, dtype=dtype)
        self.buffers["running_var"] = np.ones(self.num_features, dtype=dtype)
        self.zero_grad()

    def describe(self):
        return str(self.num_features)

    def _axes(self, x):
        if x.ndim not in (2, 3) or x.shape[1] != self.num_features:
            raise DimensionError(
                f"BatchNorm({self.num_features}) got input of shape {list(x.shape)}"
            )
        return (0,) if x.ndim == 2 else (0, 2)

    @staticmethod
    def _bcast(v, ndim):
        return v[None, :] if ndim == 2 else v[None, :, None]

    def forward(self, x, train=True):
        axes = self._axes(x)
        gamma = self._bcast(self.params["weight"].astype(np.float64), x.ndim)
        beta = self._bcast(self.params["bias"].astype(np.float64), x.ndim)
        x64 = x.astype(np.float64)
        if train:
            m = int(np.prod([x.shape[a] for a in axes]))
            if m < 2:
                raise DegenerateVarianceError(
                    "BatchNorm in training mode needs more than one value per feature"
                )
            mean = x64.mean(axis=axes, keepdims=True)
            centered = x64 - mean
            var = (centered * centered).mean(axis=axes, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = centered * inv_std
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            unbiased = var.reshape(-1) * (m / (m - 1))
            rm[...] = (1 - mom) * rm + mom * mean.reshape(-1)
            rv[...] = (1 - mom) * rv + mom * unbiased
            self._cache = (xhat, inv_std, axes, m)
        else:
            mean = self._bcast(self.buffers["running_mean"].astype(np.float64), x.ndim)
            var = self._bcast(self.buffers["running_var"].astype(np.float64), x.ndim)
            xhat = (x64 - mean) / np.sqrt(var + self.eps)
            self._cache = None
        return (gamma * xhat + beta).astype(x.dtype)

    def backward(self, g):
        cache = self._take_cache()
        xhat, inv_std, axes, m = cache
        g64 = g.astype(np.float64)
        dtype = self.params["weight"].dtype
        self.grads["weight"] += (g64 * xhat).sum(axis=axes).astype(dtype)
        self.grads["bias"] += g64.sum(axis=axes).astype(dtype)
        gamma = self._bcast(self.params["weight"].astype(np.float64), g.ndim)
        dxhat = g64 * gamma
        dx = (inv_std / m) * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx.astype(g.dtype)


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=True):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, g):
        mask = self._take_cache()
        return np.where(mask, g, np.zeros((), dtype=g.dtype))


class MaxPoolPoints(Layer):
    """Global max over the point axis: ``[B, C, N] -> [B, C]``.

    Ties go to the lowest point index.
    """

    kind = "MaxPoolPoints"

    def forward(self, x, train=True):
        pooled, argmax = max_pool_points(x)
        self._cache = (argmax, x.shape)
        return pooled

    def backward(self, g):
        argmax, shape = self._take_cache()
        out = np.zeros(shape, dtype=g.dtype)
        b, c = np.indices(argmax.shape)
        out[b, c, argmax] = g
        return out


def max_pool_points(x):
    """Return ``(pooled, argmax)`` over the last axis of a ``[B, C, N]`` tensor."""
    if x.ndim != 3:
        raise DimensionError(f"max_pool_points expects [B, C, N], got {list(x.shape)}")
    if x.shape[2] == 0:
        raise EmptyInputError("cannot pool over zero points")
    argmax = np.argmax(x, axis=2)
    pooled = np.take_along_axis(x, argmax[..., None], axis=2)[..., 0]
    return pooled, argmax


class Sequential:
    """Ordered chain of layers with finite-value checks after every pass."""

    def __init__(self, layers, name="net"):
        self.layers = list(layers)
        self.name = name

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def forward(self, x, train=True):
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train=train)
            check_finite(x, f"{self.name}[{i}] {layer.kind} output")
        return x

    def backward(self, g):
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g)
            check_finite(g, f"{self.name}[{i}] {self.layers[i].kind} gradient")
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self, prefix=None):
        prefix = self.name if prefix is None else prefix
        for i, layer in enumerate(self.layers):
            for pname, p in layer.params.items():
                yield f"{prefix}.{i}.{pname}", p, layer, pname

    def named_buffers(self, prefix=None):
        prefix = self.name if prefix is None else prefix
        for i, layer in enumerate(self.layers):
            for bname, b in layer.buffers.items():
                yield f"{prefix}.{i}.{bname}", b

    def n_params(self):
        return sum(layer.n_params() for layer in self.layers)


def backward(net, upstream_grad):
    """Backpropagate ``upstream_grad`` through ``net`` using its cached forward state.

    Parameter gradients are accumulated into each layer's ``grads``; the
    gradient with respect to the network input is returned.
    """
    return net.backward(upstream_grad)


def he_init(layer, rng):
    fan_in = layer.in_features
    std = np.sqrt(2.0 / fan_in)
    w = layer.params["weight"]
    w[...] = rng.normal(0.0, std, size=w.shape)
    layer.params["bias"][...] = 0


def xavier_uniform_init(layer, rng):
    limit = np.sqrt(6.0 / (layer.in_features + layer.out_features))
    w = layer.params["weight"]
    w[...] = rng.uniform(-limit, limit, size=w.shape)
    layer.params["bias"][...] = 0


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("Adam epsilon must be positive")


def adam_step(param, grad, state):
    """One bias-corrected Adam update, applied to ``param`` in place."""
    if param.shape != grad.shape:
        raise DimensionError(f"parameter {param.shape} and gradient {grad.shape} differ")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("NaN/Inf gradient passed to adam_step")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * (grad * grad)
    mhat = state.m / (1 - b1 ** state.step)
    vhat = state.v / (1 - b2 ** state.step)
    param -= (state.lr * mhat / (np.sqrt(vhat) + state.epsilon)).astype(param.dtype)
    return param, state


@dataclass
class Adam:
    """Adam over a dict of named parameters; one :class:`AdamState` per name."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, named):
        """``named`` yields ``(name, param, grad)`` triples."""
        for name, param, grad in named:
            st = self.states.get(name)
            if st is None:
                st = AdamState(self.lr, self.beta1, self.beta2, self.epsilon)
                self.states[name] = st
            try:
                adam_step(param, grad, st)
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite gradient for {name}") from exc
