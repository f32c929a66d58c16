"""Minimal dense-tensor layer stack with reverse-mode gradients.

Tensors are C-contiguous float32 numpy arrays; every operation returns a
fresh array and never mutates its inputs. The layer set is closed: conv,
transposed conv, batch norm, relu, leaky relu, tanh, sigmoid, fully
connected and reshape. That is everything the bundled generator,
discriminator and encoder architectures need, and it keeps exhaustive
gradient checking tractable.

A :class:`Graph` is an ordered list of layers evaluated sequentially. The
forward pass caches per-layer activations; the matching backward pass
consumes exactly those caches, so a graph instance must not be shared
between interleaved forward/backward pairs (clone it instead, which shares
parameter storage but not caches).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


class GraphError(ValueError):
    """Structural problem: shape mismatch, unknown tensor, bad mode."""


class GraphStateError(RuntimeError):
    """Sequencing problem: backward requested without a prior forward."""


def as_tensor(x) -> np.ndarray:
    """Coerce to a fresh-enough C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=DTYPE)


# ---------------------------------------------------------------------------
# conv primitives (im2col / col2im)
# ---------------------------------------------------------------------------

def _out_extent(h: int, k: int, s: int, p: int) -> int:
    return (h + 2 * p - k) // s + 1


def _im2col(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """(n,c,h,w) -> (n*ho*wo, c*k*k) patch matrix."""
    n, c, h, w = x.shape
    ho, wo = _out_extent(h, k, s, p), _out_extent(w, k, s, p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, ho, wo, c, k, k), (sn, sh * s, sw * s, sc, sh, sw)
    )
    return view.reshape(n * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, x_shape, k: int, s: int, p: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to (n,c,h,w)."""
    n, c, h, w = x_shape
    ho, wo = _out_extent(h, k, s, p), _out_extent(w, k, s, p)
    cols6 = cols.reshape(n, ho, wo, c, k, k)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    # channel-last view lets the scatter run over naturally ordered slabs
    xt = xp.transpose(0, 2, 3, 1)
    for i in range(k):
        for j in range(k):
            xt[:, i : i + s * ho : s, j : j + s * wo : s, :] += cols6[:, :, :, :, i, j]
    return np.ascontiguousarray(xp[:, :, p : p + h, p : p + w])


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    """Base layer: named, with optional parameters, gradients and buffers."""

    def __init__(self, name: str):
        self.name = name
        self._cache = None

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def buffers(self) -> dict:
        return {}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def clone_shared(self) -> "Layer":
        """New instance sharing parameter/buffer arrays but not caches."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone._cache = None
        return clone

    def _fail(self, msg: str):
        raise GraphError(f"{self.name}: {msg}")


class Conv2d(Layer):
    """Strided convolution, NCHW layout."""

    def __init__(self, name, c_in, c_out, rng, kernel=4, stride=2, pad=1):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.weight = rng.normal(0.0, 0.02, (c_out, c_in, kernel, kernel)).astype(DTYPE)
        self.bias = np.zeros(c_out, DTYPE)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.dweight, "bias": self.dbias}

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            self._fail(f"expected (n,{self.c_in},h,w) input, got {x.shape}")
        n, _, h, w = x.shape
        ho, wo = _out_extent(h, self.kernel, self.stride, self.pad), _out_extent(
            w, self.kernel, self.stride, self.pad
        )
        cols = _im2col(x, self.kernel, self.stride, self.pad)
        y = cols @ self.weight.reshape(self.c_out, -1).T + self.bias
        self._cache = (cols, x.shape)
        return np.ascontiguousarray(
            y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)
        )

    def backward(self, g):
        cols, x_shape = self._cache
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.dweight = (gmat.T @ cols).reshape(self.weight.shape)
        self.dbias = gmat.sum(axis=0)
        dcols = gmat @ self.weight.reshape(self.c_out, -1)
        return _col2im(dcols, x_shape, self.kernel, self.stride, self.pad)


class ConvTranspose2d(Layer):
    """Transposed convolution (gradient of Conv2d); doubles H and W at
    the default kernel 4 / stride 2 / pad 1 geometry."""

    def __init__(self, name, c_in, c_out, rng, kernel=4, stride=2, pad=1):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.weight = rng.normal(0.0, 0.02, (c_in, c_out, kernel, kernel)).astype(DTYPE)
        self.bias = np.zeros(c_out, DTYPE)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.dweight, "bias": self.dbias}

    def _out_hw(self, h, w):
        ho = (h - 1) * self.stride - 2 * self.pad + self.kernel
        wo = (w - 1) * self.stride - 2 * self.pad + self.kernel
        return ho, wo

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            self._fail(f"expected (n,{self.c_in},h,w) input, got {x.shape}")
        n, _, h, w = x.shape
        ho, wo = self._out_hw(h, w)
        xmat = x.transpose(0, 2, 3, 1).reshape(-1, self.c_in)
        cols = xmat @ self.weight.reshape(self.c_in, -1)
        y = _col2im(cols, (n, self.c_out, ho, wo), self.kernel, self.stride, self.pad)
        y += self.bias[None, :, None, None]
        self._cache = (xmat, x.shape)
        return y

    def backward(self, g):
        xmat, x_shape = self._cache
        n, _, h, w = x_shape
        gcols = _im2col(g, self.kernel, self.stride, self.pad)
        self.dweight = (xmat.T @ gcols).reshape(self.weight.shape)
        self.dbias = g.sum(axis=(0, 2, 3))
        dxmat = gcols @ self.weight.reshape(self.c_in, -1).T
        return np.ascontiguousarray(
            dxmat.reshape(n, h, w, self.c_in).transpose(0, 3, 1, 2)
        )


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (n,h,w).

    Train mode normalizes with batch statistics and decays the running
    statistics with factor 0.9; inference mode is a per-channel affine map
    built from the stored running statistics.
    """

    EPS = 1e-5
    DECAY = 0.9

    def __init__(self, name, channels, rng):
        super().__init__(name)
        self.channels = channels
        self.gamma = rng.normal(1.0, 0.02, channels).astype(DTYPE)
        self.beta = np.zeros(channels, DTYPE)
        self.running_mean = np.zeros(channels, DTYPE)
        self.running_var = np.ones(channels, DTYPE)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.channels:
            self._fail(f"expected (n,{self.channels},h,w) input, got {x.shape}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv = 1.0 / np.sqrt(var + self.EPS)
            xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
            self.running_mean = (
                self.DECAY * self.running_mean + (1 - self.DECAY) * mean
            ).astype(DTYPE)
            self.running_var = (
                self.DECAY * self.running_var + (1 - self.DECAY) * var
            ).astype(DTYPE)
            self._cache = ("train", xhat, inv.astype(DTYPE))
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.EPS)
            xhat = (x - self.running_mean[None, :, None, None]) * inv[None, :, None, None]
            self._cache = ("inference", xhat, inv.astype(DTYPE))
        return (self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]).astype(DTYPE)

    def backward(self, g):
        mode, xhat, inv = self._cache
        self.dgamma = (g * xhat).sum(axis=(0, 2, 3))
        self.dbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * self.gamma[None, :, None, None]
        if mode == "inference":
            return (gxhat * inv[None, :, None, None]).astype(DTYPE)
        n = g.shape[0] * g.shape[2] * g.shape[3]
        s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv[None, :, None, None] / n) * (n * gxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, train):
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, g):
        return np.where(self._cache, g, 0).astype(DTYPE)


class LeakyReLU(Layer):
    def __init__(self, name, slope=0.2):
        super().__init__(name)
        self.slope = slope

    def forward(self, x, train):
        self._cache = x > 0
        return np.where(self._cache, x, self.slope * x).astype(DTYPE)

    def backward(self, g):
        return np.where(self._cache, g, self.slope * g).astype(DTYPE)


class Tanh(Layer):
    def forward(self, x, train):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._cache
        return (g * (1.0 - y * y)).astype(DTYPE)


class Sigmoid(Layer):
    def forward(self, x, train):
        y = 1.0 / (1.0 + np.exp(-x))
        self._cache = y
        return y.astype(DTYPE)

    def backward(self, g):
        y = self._cache
        return (g * y * (1.0 - y)).astype(DTYPE)


class FullyConnected(Layer):
    def __init__(self, name, d_in, d_out, rng):
        super().__init__(name)
        self.d_in, self.d_out = d_in, d_out
        self.weight = rng.normal(0.0, 0.02, (d_out, d_in)).astype(DTYPE)
        self.bias = np.zeros(d_out, DTYPE)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.dweight, "bias": self.dbias}

    def forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            self._fail(f"expected (n,{self.d_in}) input, got {x.shape}")
        self._cache = x
        return x @ self.weight.T + self.bias

    def backward(self, g):
        x = self._cache
        self.dweight = g.T @ x
        self.dbias = g.sum(axis=0)
        return np.ascontiguousarray(g @ self.weight)


class Reshape(Layer):
    """Per-sample reshape; batch extent is untouched."""

    def __init__(self, name, target):
        super().__init__(name)
        self.target = tuple(target)

    def forward(self, x, train):
        n = x.shape[0]
        if int(np.prod(x.shape[1:])) != int(np.prod(self.target)):
            self._fail(f"cannot reshape per-sample {x.shape[1:]} to {self.target}")
        self._cache = x.shape
        return x.reshape((n,) + self.target).copy()

    def backward(self, g):
        return g.reshape(self._cache).copy()


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------

MODES = ("train", "inference")


class Graph:
    """Fixed sequential stack of layers with cached-activation backward."""

    def __init__(self, layers, input_shape=None, name="graph"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.name = name
        self._ready = False
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise GraphError(f"{name}: duplicate layer names")

    def forward(self, x, mode="inference"):
        if mode not in MODES:
            raise GraphError(f"{self.name}: unknown mode {mode!r}")
        x = as_tensor(x)
        if x.ndim < 1:
            raise GraphError(f"{self.name}: input must have a batch dimension")
        if self.input_shape is not None and tuple(x.shape[1:]) != self.input_shape:
            raise GraphError(
                f"{self.name}: expected per-sample input shape {self.input_shape}, got {tuple(x.shape[1:])}"
            )
        train = mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train)
        self._ready = True
        self._out_shape = x.shape
        return x

    def _check_ready(self, upstream):
        if not self._ready:
            raise GraphStateError(f"{self.name}: backward called before forward")
        upstream = as_tensor(upstream)
        if upstream.shape != self._out_shape:
            raise GraphError(
                f"{self.name}: upstream gradient shape {upstream.shape} != output shape {self._out_shape}"
            )
        return upstream

    def backward(self, upstream):
        """Gradient w.r.t. the input plus per-parameter gradients."""
        g = self._check_ready(upstream)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        grads = {}
        for layer in self.layers:
            for key, val in layer.grads().items():
                grads[f"{layer.name}.{key}"] = val
        return g, grads

    def backward_input(self, upstream):
        return self.backward(upstream)[0]

    def backward_params(self, upstream):
        return self.backward(upstream)[1]

    def parameters(self) -> dict:
        out = {}
        for layer in self.layers:
            for key, val in layer.params().items():
                out[f"{layer.name}.{key}"] = val
        return out

    def buffers(self) -> dict:
        out = {}
        for layer in self.layers:
            for key, val in layer.buffers().items():
                out[f"{layer.name}.{key}"] = val
        return out

    def state_dict(self) -> dict:
        return {**self.parameters(), **self.buffers()}

    def load_state(self, tensors: dict):
        """Copy named tensors into the graph; names and shapes must match."""
        own = self.state_dict()
        for name, current in own.items():
            if name not in tensors:
                raise GraphError(f"{self.name}: missing tensor {name!r}")
            new = tensors[name]
            if tuple(new.shape) != tuple(current.shape):
                raise GraphError(
                    f"{self.name}: tensor {name!r} has shape {tuple(new.shape)}, expected {tuple(current.shape)}"
                )
        for layer in self.layers:
            for key in list(layer.params()) + list(layer.buffers()):
                full = f"{layer.name}.{key}"
                setattr(layer, key, as_tensor(tensors[full]).copy())

    def clone_shared(self) -> "Graph":
        """Graph with fresh caches over the same parameter arrays."""
        g = Graph([l.clone_shared() for l in self.layers], self.input_shape, self.name)
        return g

    def prefix(self, upto: int) -> "Graph":
        """Independent sub-graph of layers [0, upto] sharing parameters."""
        layers = [l.clone_shared() for l in self.layers[: upto + 1]]
        return Graph(layers, self.input_shape, f"{self.name}[:{upto + 1}]")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_update(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected adaptive-moment update on a single array.

    Returns fresh (value, m, v); inputs are untouched.
    """
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    value = value - lr * mhat / (np.sqrt(vhat) + eps)
    return value.astype(DTYPE), m.astype(DTYPE), v.astype(DTYPE)


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def init_like(cls, params: dict) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """Adaptive-moment step over a named tensor bundle.

    Functional: returns (new_params, new_state) and leaves the inputs
    untouched. Keys and shapes of params/grads/state must agree.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise GraphError("adam_step: params/grads/state key mismatch")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for key, p in params.items():
        if p.shape != grads[key].shape:
            raise GraphError(f"adam_step: shape mismatch for {key!r}")
        new_params[key], new_m[key], new_v[key] = adam_update(
            p, grads[key], state.m[key], state.v[key], t, lr, beta1, beta2, eps
        )
    return new_params, AdamState(step=t, m=new_m, v=new_v)
