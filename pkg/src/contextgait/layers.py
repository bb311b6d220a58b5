"""Neural network building blocks on top of the autodiff core.

Layers register their parameters in a stable order (module registration
order, then row-major within each tensor) so that flattened parameter
indices are deterministic across runs.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, concat, conv2d, softmax, stack

ACTIVATIONS = ("relu", "tanh", "identity")


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Module:
    """Base class: ordered parameter and submodule registry."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def register(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for mname, mod in self._modules.items():
            yield from mod.named_parameters(prefix + mname + ".")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    """Fully connected layer with optional activation."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.in_dim, self.out_dim, self.activation = in_dim, out_dim, activation
        self.weight = self.register("weight", _glorot(rng, (out_dim, in_dim)))
        self.bias = self.register("bias", np.zeros(out_dim))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"dense expects input dim {self.in_dim}, got shape {x.shape}"
            )
        y = x @ self.weight.transpose() + self.bias
        if self.activation == "relu":
            return y.relu()
        if self.activation == "tanh":
            return y.tanh()
        return y


class Conv2d(Module):
    """Valid 2-D cross-correlation layer (no padding)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 activation: str = "identity",
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.activation = kernel, stride, activation
        self.weight = self.register(
            "weight", _glorot(rng, (out_ch, in_ch, kernel, kernel))
        )
        self.bias = self.register("bias", np.zeros(out_ch))

    def forward(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.stride) + self.bias.reshape(1, self.out_ch, 1, 1)
        if self.activation == "relu":
            return y.relu()
        if self.activation == "tanh":
            return y.tanh()
        return y


class _RecurrentCell(Module):
    """Single-direction LSTM or GRU cell over a (B, T, d) sequence."""

    def __init__(self, kind: str, in_dim: int, hidden: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if kind not in ("lstm", "gru"):
            raise ValueError(f"unknown cell kind {kind!r}")
        rng = rng or np.random.default_rng(0)
        self.kind, self.in_dim, self.hidden = kind, in_dim, hidden
        gates = 4 if kind == "lstm" else 3
        self.w_ih = self.register("w_ih", _glorot(rng, (gates * hidden, in_dim)))
        self.w_hh = self.register("w_hh", _glorot(rng, (gates * hidden, hidden)))
        self.bias = self.register("bias", np.zeros(gates * hidden))

    def forward(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        H = self.hidden
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        for t in range(T):
            xt = x[:, t, :]
            z = xt @ self.w_ih.transpose() + h @ self.w_hh.transpose() + self.bias
            if self.kind == "lstm":
                i = z[:, 0:H].sigmoid()
                f = z[:, H : 2 * H].sigmoid()
                g = z[:, 2 * H : 3 * H].tanh()
                o = z[:, 3 * H : 4 * H].sigmoid()
                c = f * c + i * g
                h = o * c.tanh()
            else:  # gru
                r = z[:, 0:H].sigmoid()
                u = z[:, H : 2 * H].sigmoid()
                n = (
                    xt @ self.w_ih.transpose()[:, 2 * H : 3 * H]
                    + r * (h @ self.w_hh.transpose()[:, 2 * H : 3 * H])
                    + self.bias[2 * H : 3 * H]
                ).tanh()
                h = (1.0 - u) * n + u * h
        return h


class BiRecurrent(Module):
    """Bidirectional recurrent encoder; returns concatenated final states."""

    def __init__(self, in_dim: int, hidden: int, cell: str = "lstm",
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        self.fwd = _RecurrentCell(cell, in_dim, hidden, rng)
        self.bwd = _RecurrentCell(cell, in_dim, hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] < 1:
            raise ShapeError(f"birnn expects non-empty (B, T, d), got {x.shape}")
        rev = x[:, ::-1, :]
        return concat([self.fwd(x), self.bwd(rev)], axis=-1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head projections."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator | None = None):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        rng = rng or np.random.default_rng(0)
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.w_q = self.register("w_q", _glorot(rng, (dim, dim)))
        self.w_k = self.register("w_k", _glorot(rng, (dim, dim)))
        self.w_v = self.register("w_v", _glorot(rng, (dim, dim)))
        self.w_o = self.register("w_o", _glorot(rng, (dim, dim)))
        self.last_weights: np.ndarray | None = None

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        B, n, d = queries.shape
        m = keys.shape[1]
        if d != self.dim or keys.shape[-1] != self.dim or values.shape[-1] != self.dim:
            raise ShapeError(f"attention expects dim {self.dim}")
        h, hd = self.heads, self.head_dim

        def split(t, w, length):
            p = t @ w.transpose()
            return p.reshape(B, length, h, hd).transpose(0, 2, 1, 3)

        q = split(queries, self.w_q, n)
        k = split(keys, self.w_k, m)
        v = split(values, self.w_v, m)
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        w = softmax(logits, axis=-1)
        self.last_weights = w.data.copy()
        out = (w @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
        return out @ self.w_o.transpose()


# -- functional single-sample wrappers ---------------------------------------

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                  activation: str = "identity") -> np.ndarray:
    """out[j] = act(sum_k W[j,k] x[k] + b[j])."""
    x, weights, bias = np.asarray(x, float), np.asarray(weights, float), np.asarray(bias, float)
    if weights.ndim != 2 or weights.shape[1] != x.shape[-1]:
        raise ShapeError(
            f"dense_forward: weights {weights.shape} incompatible with input {x.shape}"
        )
    y = weights @ x + bias
    if activation == "relu":
        return np.maximum(y, 0.0)
    if activation == "tanh":
        return np.tanh(y)
    if activation == "identity":
        return y
    raise ValueError(f"unknown activation {activation!r}")


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of a (C,H,W) input with (K,C,kh,kw) kernels."""
    x = np.asarray(x, float)
    out = conv2d(Tensor(x[None]), Tensor(np.asarray(kernels, float)), stride)
    return out.data[0]


def birnn_forward(seq: np.ndarray, cell: str = "lstm", hidden: int = 8,
                  rnn: BiRecurrent | None = None) -> np.ndarray:
    """Bidirectional encoding of a (T, d) sequence into a 2*hidden vector."""
    seq = np.asarray(seq, float)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"birnn_forward expects non-empty (T, d), got {seq.shape}")
    if rnn is None:
        rnn = BiRecurrent(seq.shape[1], hidden, cell)
    return rnn(Tensor(seq[None])).data[0]


def multihead_attention(queries: np.ndarray, keys: np.ndarray, values: np.ndarray,
                        heads: int, attn: MultiHeadAttention | None = None) -> np.ndarray:
    """Multi-head attention over single (n,d)/(m,d) sequences."""
    queries = np.asarray(queries, float)
    if attn is None:
        attn = MultiHeadAttention(queries.shape[-1], heads)
    out = attn(Tensor(queries[None]), Tensor(np.asarray(keys, float)[None]),
               Tensor(np.asarray(values, float)[None]))
    return out.data[0]
