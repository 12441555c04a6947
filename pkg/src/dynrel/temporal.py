"""Time channel: convolutional series encoder with polynomial-decay attention."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import BatchNorm, Conv1d, Dense, DimensionError, Parameter, ReLU, Sequential, mlp

CONVENTIONS = ("standard", "window_end")


def decay_weights(T: int, window: int, alpha: float, convention: str = "standard") -> np.ndarray:
    """Recency weights ``A[k] = 1 / (delta_k ** alpha + 1)`` for k = 1..T-w+1.

    ``standard`` measures column k as ``T - k + w`` months from the studied time;
    ``window_end`` uses the distance of the window's last month,
    ``T - k - w + 1``.
    """
    if alpha <= 0:
        raise ValueError(f"decay rate must be positive, got {alpha}")
    if T < window:
        raise DimensionError(f"T={T} shorter than window {window}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown decay convention {convention!r}")
    k = np.arange(1, T - window + 2, dtype=np.float64)
    delta = T - k + window if convention == "standard" else T - k - window + 1
    return 1.0 / (delta ** alpha + 1.0)


class TimeEncoder:
    """Conv1d + BatchNorm + ReLU blocks, decay attention on the last block,
    then a fully connected ReLU layer producing a ``dim``-wide embedding."""

    def __init__(self, channels: int = 1, length: int = 27, filters: Sequence[int] = (20, 25),
                 windows: Sequence[int] = (5, 4), alpha: float = 2.0, dim: int = 64,
                 attention: bool = True, convention: str = "standard",
                 rng: np.random.Generator | None = None, dtype=np.float64):
        if len(filters) != len(windows) or not filters:
            raise ValueError("filters and windows must be non-empty and of equal length")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.length = channels, length
        self.alpha, self.convention = alpha, convention
        layers = []
        width, T = channels, length
        for i, (f, w) in enumerate(zip(filters, windows)):
            if T < w:
                raise DimensionError(
                    f"series length {length} shorter than the receptive field of windows {tuple(windows)}")
            last_in = T
            layers += [Conv1d(width, f, w, rng, dtype, name=f"time.conv{i}"),
                       BatchNorm(f, dtype=dtype, name=f"time.bn{i}"), ReLU()]
            width, T = f, T - w + 1
        self.blocks = Sequential(layers)
        self.out_filters, self.out_length = width, T
        if attention:
            self.attention = decay_weights(last_in, windows[-1], alpha, convention).astype(dtype)
        else:
            self.attention = np.ones(T, dtype=dtype)
        self.use_attention = attention
        self.dense = Dense(width * T, dim, "relu", rng, dtype, name="time.embed")
        self.dim = dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1:] != (self.channels, self.length):
            raise DimensionError(f"expected (batch, {self.channels}, {self.length}), got {x.shape}")
        fc = self.blocks.forward(x)
        fh = fc * self.attention[None, None, :]
        return self.dense.forward(fh.reshape(x.shape[0], -1))

    def feature_map(self, x: np.ndarray) -> np.ndarray:
        """Re-weighted final feature map, shape (batch, filters, T')."""
        return self.blocks.forward(x) * self.attention[None, None, :]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = self.dense.backward(grad).reshape(-1, self.out_filters, self.out_length)
        return self.blocks.backward(g * self.attention[None, None, :])

    def parameters(self) -> list[Parameter]:
        return self.blocks.parameters() + self.dense.parameters()

    def buffers(self) -> dict:
        return self.blocks.buffers()

    def batchnorms(self) -> list[BatchNorm]:
        return [l for l in self.blocks.layers if isinstance(l, BatchNorm)]

    def train(self, mode: bool = True) -> None:
        self.blocks.train(mode)
        self.dense.train(mode)


def encode_series(encoder: TimeEncoder, series: np.ndarray) -> np.ndarray:
    """Embed one ``(D, T)`` series or a ``(batch, D, T)`` stack.

    A single series is always encoded with batch norm in inference mode;
    the encoder's previous mode is restored afterwards.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2:
        return encoder.forward(x)
    was_training = any(bn.training for bn in encoder.batchnorms())
    encoder.train(False)
    try:
        return encoder.forward(x[None])[0]
    finally:
        encoder.train(was_training)


def time_score(net: "TimeNet", x_s: np.ndarray, x_pos: np.ndarray, x_neg: np.ndarray) -> float:
    """Score a single ``(s, +, -)`` series triple in inference mode."""
    was_training = any(bn.training for bn in net.encoder.batchnorms())
    net.train(False)
    try:
        return float(net.forward(np.stack([x_s, x_pos, x_neg]).astype(np.float64))[0])
    finally:
        net.train(was_training)


class TimeNet:
    """phi_time: shared encoder on X_s, X_+, X_-; MLP over the ordered concatenation."""

    def __init__(self, encoder: TimeEncoder, hidden: Sequence[int] = (128, 128), dropout: float = 0.0,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        self.encoder = encoder
        self.scorer: Sequential = mlp(3 * encoder.dim, hidden, dropout, rng, dtype, name="time.mlp")

    def forward(self, series: np.ndarray) -> np.ndarray:
        """``series`` stacks the s, +, - blocks: shape (3N, D, T)."""
        n = series.shape[0] // 3
        emb = self.encoder.forward(series)
        z = emb.reshape(3, n, -1).transpose(1, 0, 2).reshape(n, -1)
        return self.scorer.forward(z)[:, 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n = grad.shape[0]
        gz = self.scorer.backward(grad[:, None])
        gemb = gz.reshape(n, 3, -1).transpose(1, 0, 2).reshape(3 * n, -1)
        return self.encoder.backward(gemb)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.scorer.parameters()

    def buffers(self) -> dict:
        out = dict(self.encoder.buffers())
        out.update(self.scorer.buffers())
        return out

    def train(self, mode: bool = True) -> None:
        self.encoder.train(mode)
        self.scorer.train(mode)

    def output_head(self):
        return self.scorer.layers[-1]
