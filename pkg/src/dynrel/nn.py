"""Minimal differentiable core: layers with explicit backward passes.

Every layer caches what it needs during ``forward`` and, on ``backward``,
accumulates parameter gradients and returns the gradient with respect to its
input. Graphs are static, so models call ``backward`` on their layers in
reverse order by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Raised when an input does not have the shape a layer expects."""


class Parameter:
    """A trainable array with its gradient and Adam moment slots."""

    __slots__ = ("value", "grad", "m", "v", "name")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot_uniform(shape: Sequence[int], rng: np.random.Generator,
                   fan_in: int | None = None, fan_out: int | None = None,
                   dtype=np.float64) -> np.ndarray:
    """Sample uniformly from +/- sqrt(6 / (fan_in + fan_out)).

    For 2-D ``(out, in)`` shapes the fans are read from the shape; for
    convolution filters ``(filters, window, channels)`` the receptive field
    multiplies both fans.
    """
    shape = tuple(int(s) for s in shape)
    if fan_in is None or fan_out is None:
        if len(shape) == 1:
            fi = fo = shape[0]
        elif len(shape) == 2:
            fo, fi = shape
        else:
            receptive = int(np.prod(shape[1:-1]))
            fo, fi = shape[0] * receptive, shape[-1] * receptive
        fan_in = fi if fan_in is None else fan_in
        fan_out = fo if fan_out is None else fan_out
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# -- activations ------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTIVATIONS = ("relu", "sigmoid", "linear")


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return relu(z)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


# -- layers -----------------------------------------------------------------

class Layer:
    """Base class; subclasses override forward/backward."""

    training: bool = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive a checkpoint."""
        return {}

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        return self

    def eval(self) -> "Layer":
        return self.train(False)


class Dense(Layer):
    """Fully connected layer ``activation(x @ W.T + b)`` with W of shape (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng: np.random.Generator | None = None, dtype=np.float64,
                 name: str = "dense"):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = Parameter(glorot_uniform((out_dim, in_dim), rng, dtype=dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype), f"{name}.bias")
        self._cache = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"Dense expects (batch, {self.in_dim}), got {x.shape}")
        z = x @ self.weight.value.T + self.bias.value
        a = _activate(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, grad):
        x, z, a = self._cache
        gz = grad * _activation_grad(self.activation, z, a)
        self.weight.grad += gz.T @ x
        self.bias.grad += gz.sum(axis=0)
        return gz @ self.weight.value

    def parameters(self):
        return [self.weight, self.bias]


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class Sigmoid(Layer):
    def forward(self, x):
        self._out = sigmoid(x)
        return self._out

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)


class Dropout(Layer):
    """Inverted dropout; identity outside training mode or at rate 0."""

    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Conv1d(Layer):
    """Valid (unpadded, stride 1) convolution along the time axis.

    Input ``(batch, channels, T)``, filters ``(num_filters, window, channels)``,
    output ``(batch, num_filters, T - window + 1)``.
    """

    def __init__(self, channels: int, num_filters: int, window: int,
                 rng: np.random.Generator | None = None, dtype=np.float64,
                 name: str = "conv"):
        if window < 1:
            raise ValueError("window must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.num_filters, self.window = channels, num_filters, window
        self.weight = Parameter(
            glorot_uniform((num_filters, window, channels), rng, dtype=dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(num_filters, dtype=dtype), f"{name}.bias")

    def output_length(self, T: int) -> int:
        if T < self.window:
            raise DimensionError(f"series length {T} shorter than window {self.window}")
        return T - self.window + 1

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise DimensionError(f"Conv1d expects (batch, {self.channels}, T), got {x.shape}")
        self.output_length(x.shape[2])
        windows = sliding_window_view(x, self.window, axis=2)  # (N, D, T', w)
        self._cache = (x.shape, windows)
        out = np.einsum("ndtj,fjd->nft", windows, self.weight.value, optimize=True)
        return out + self.bias.value[None, :, None]

    def backward(self, grad):
        shape, windows = self._cache
        self.weight.grad += np.einsum("nft,ndtj->fjd", grad, windows, optimize=True)
        self.bias.grad += grad.sum(axis=(0, 2))
        dx = np.zeros(shape, dtype=grad.dtype)
        L = grad.shape[2]
        for j in range(self.window):
            dx[:, :, j:j + L] += np.einsum("nft,fd->ndt", grad, self.weight.value[:, j, :],
                                           optimize=True)
        return dx

    def parameters(self):
        return [self.weight, self.bias]


class BatchNorm(Layer):
    """Batch normalization over the batch (and time, for 3-D input) axes."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64, name: str = "bn"):
        self.num_features = num_features
        self.eps, self.momentum = eps, momentum
        self.scale = Parameter(np.ones(num_features, dtype=dtype), f"{name}.scale")
        self.shift = Parameter(np.zeros(num_features, dtype=dtype), f"{name}.shift")
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.name = name

    def _view(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x):
        if x.ndim not in (2, 3) or x.shape[1] != self.num_features:
            raise DimensionError(f"BatchNorm expects (batch, {self.num_features}[, T]), got {x.shape}")
        axes = (0,) if x.ndim == 2 else (0, 2)
        gamma, beta = self._view(self.scale.value, x.ndim), self._view(self.shift.value, x.ndim)
        if self.training:
            if x.shape[0] < 2:
                raise DimensionError("batch norm in training mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.num_features
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            unbiased = var * count / max(count - 1, 1)
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._view(mean, x.ndim)) * self._view(inv_std, x.ndim)
        self._cache = (xhat, inv_std, axes, self.training)
        return gamma * xhat + beta

    def backward(self, grad):
        xhat, inv_std, axes, training = self._cache
        nd = grad.ndim
        self.scale.grad += (grad * xhat).sum(axis=axes)
        self.shift.grad += grad.sum(axis=axes)
        dxhat = grad * self._view(self.scale.value, nd)
        if not training:
            return dxhat * self._view(inv_std, nd)
        count = grad.size // self.num_features
        s1 = self._view(dxhat.sum(axis=axes), nd)
        s2 = self._view((dxhat * xhat).sum(axis=axes), nd)
        return self._view(inv_std, nd) / count * (count * dxhat - s1 - xhat * s2)

    def parameters(self):
        return [self.scale, self.shift]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        self.running_mean = np.array(buffers[f"{self.name}.running_mean"])
        self.running_var = np.array(buffers[f"{self.name}.running_var"])


class EmbeddingTable(Layer):
    """Row lookup into a ``(vocab, dim)`` table; backward scatter-adds rows."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator | None = None,
                 dtype=np.float64, name: str = "embedding"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.table = Parameter(glorot_uniform((vocab_size, dim), rng, dtype=dtype), f"{name}.table")

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    def forward(self, indices):
        indices = np.asarray(indices)
        if indices.size and (indices.min() < 0 or indices.max() >= self.vocab_size):
            raise IndexError("embedding index out of range")
        self._indices = indices
        return self.table.value[indices]

    def backward(self, grad):
        np.add.at(self.table.grad, self._indices.ravel(),
                  grad.reshape(-1, self.table.shape[1]))
        return None

    def parameters(self):
        return [self.table]


class Sequential(Layer):
    def __init__(self, layers: Iterable[Layer]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def train(self, mode=True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self


def mlp(in_dim: int, hidden: Sequence[int], dropout: float = 0.0,
        rng: np.random.Generator | None = None, dtype=np.float64,
        name: str = "mlp") -> Sequential:
    """ReLU hidden stack followed by a linear scalar head."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers: list[Layer] = []
    width = in_dim
    for i, h in enumerate(hidden):
        layers.append(Dense(width, h, "relu", rng, dtype, name=f"{name}.{i}"))
        if dropout > 0:
            layers.append(Dropout(dropout, np.random.default_rng(rng.integers(2**63))))
        width = h
    layers.append(Dense(width, 1, "linear", rng, dtype, name=f"{name}.out"))
    return Sequential(layers)


# -- optimizer --------------------------------------------------------------

class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            p.m *= self.beta1
            p.m += (1.0 - self.beta1) * g
            p.v *= self.beta2
            p.v += (1.0 - self.beta2) * g * g
            if self.lr != 0.0:
                p.value -= self.lr * (p.m / c1) / (np.sqrt(p.v / c2) + self.eps)
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# -- finite-difference verification ------------------------------------------

@dataclass
class GradCheckReport:
    rows: list[tuple[str, float]] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e for _, e in self.rows), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error <= tol

    def table(self, tol: float = 1e-4) -> str:
        lines = [f"{'tensor':<40} {'rel_error':>12}  status"]
        for name, err in self.rows:
            lines.append(f"{name:<40} {err:12.3e}  {'ok' if err <= tol else 'FAIL'}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error. The floor keeps tensors whose true gradient
    is exactly zero (a conv bias ahead of batch norm) from dividing
    central-difference round-off by a vanishing norm."""
    diff = np.linalg.norm((analytic - numeric).ravel())
    return float(diff / max(np.linalg.norm(analytic.ravel()) + np.linalg.norm(numeric.ravel()), floor))


def grad_check(forward: Callable[[], np.ndarray],
               backward: Callable[[np.ndarray], Sequence[np.ndarray | None] | np.ndarray | None],
               params: Sequence[Parameter],
               inputs: Sequence[np.ndarray] = (),
               input_names: Sequence[str] | None = None,
               eps: float = 1e-5, seed: int = 0,
               max_entries: int | None = None) -> GradCheckReport:
    """Compare backprop gradients against central differences.

    ``forward()`` must recompute the output from the current parameter values
    and the (mutable) ``inputs`` arrays. ``backward(upstream)`` must populate
    parameter grads and return the input gradients in ``inputs`` order. The
    scalar being differentiated is a fixed random projection of the output.
    With ``max_entries`` only that many randomly chosen entries per tensor
    are perturbed, and the error compares those entries.
    """
    out = forward()
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(out.shape)

    def scalar() -> float:
        return float(np.sum(proj * forward()))

    for p in params:
        p.zero_grad()
    forward()
    in_grads = backward(proj.astype(out.dtype))
    if isinstance(in_grads, np.ndarray) or in_grads is None:
        in_grads = [in_grads]
    analytic = [p.grad.copy() for p in params]

    report = GradCheckReport()
    targets = [(p.name or f"param{i}", p.value, a) for i, (p, a) in enumerate(zip(params, analytic))]
    names = list(input_names) if input_names else [f"input{i}" for i in range(len(inputs))]
    for name, x, g in zip(names, inputs, in_grads):
        if g is not None:
            targets.append((name, x, g))

    for name, arr, a in targets:
        if not arr.flags.c_contiguous:
            raise ValueError(f"{name} must be C-contiguous to be perturbed in place")
        flat = arr.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.zeros(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = scalar()
            flat[i] = old - eps
            down = scalar()
            flat[i] = old
            numeric[j] = (up - down) / (2 * eps)
        picked = np.asarray(a, dtype=np.float64).reshape(-1)[idx]
        report.rows.append((name, relative_error(picked, numeric)))
    for p in params:
        p.zero_grad()
    return report


def check_layer(layer: Layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Gradient-check a single layer w.r.t. its parameters and input."""
    return grad_check(lambda: layer.forward(x), layer.backward, layer.parameters(),
                      inputs=[x], input_names=["input"], eps=eps, seed=seed)


def assert_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict) -> None:
    """Write named arrays plus a JSON config into one ``.npz`` container."""
    import json

    payload = {f"a/{k}": np.asarray(v) for k, v in arrays.items()}
    payload["__config__"] = np.array(json.dumps(config, sort_keys=True))
    payload["__version__"] = np.array(CHECKPOINT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    import json

    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = json.loads(str(data["__config__"]))
        arrays = {k[2:]: data[k].copy() for k in data.files if k.startswith("a/")}
    return arrays, config
