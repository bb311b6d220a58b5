"""Minimal reverse-mode automatic differentiation over numpy arrays.

Covers exactly the operation set the controller needs (dense algebra,
2-D cross-correlation, elementwise nonlinearities, reductions, slicing
and concatenation).  Everything is float64 and deterministic.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        out = _make(self.data + other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(-g)

        out._backward = bwd
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = _make(self.data * other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = _make(self.data / other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.data.shape)
                )

        out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p: float):
        out = _make(self.data**p, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * p * self.data ** (p - 1))

        out._backward = bwd
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.shape[-1] != other.data.shape[-2 if other.data.ndim > 1 else 0]:
            raise ShapeError(
                f"matmul mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out = _make(self.data @ other.data, (self, other))

        def bwd(g):
            a, b = self.data, other.data
            if self.requires_grad:
                if b.ndim == 1:
                    self._accumulate(_unbroadcast(np.multiply.outer(g, b), a.shape)
                                     if g.ndim else np.outer(g, b).reshape(a.shape))
                else:
                    self._accumulate(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            if other.requires_grad:
                if b.ndim == 1:
                    ga = (a.reshape(-1, a.shape[-1]).T @ np.asarray(g).reshape(-1))
                    other._accumulate(ga)
                elif a.ndim == 1:
                    other._accumulate(_unbroadcast(np.outer(a, g), b.shape))
                else:
                    other._accumulate(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))

        out._backward = bwd
        return out

    # -- elementwise ----------------------------------------------------------
    def exp(self):
        out = _make(np.exp(self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * out.data)

        out._backward = bwd
        return out

    def log(self):
        out = _make(np.log(self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        out._backward = bwd
        return out

    def tanh(self):
        out = _make(np.tanh(self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out.data**2))

        out._backward = bwd
        return out

    def sigmoid(self):
        out = _make(1.0 / (1.0 + np.exp(-self.data)), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * out.data * (1.0 - out.data))

        out._backward = bwd
        return out

    def relu(self):
        out = _make(np.maximum(self.data, 0.0), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > 0.0))

        out._backward = bwd
        return out

    def sqrt(self):
        out = _make(np.sqrt(self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / out.data)

        out._backward = bwd
        return out

    # -- reductions / reshaping ----------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bwd(g):
            if not self.requires_grad:
                return
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / n

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.data.shape))

        out._backward = bwd
        return out

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = _make(self.data.transpose(axes), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inv))

        out._backward = bwd
        return out

    def __getitem__(self, idx):
        out = _make(self.data[idx], (self,))

        def bwd(g):
            if self.requires_grad:
                # Basic slicing only (no repeated indices), so += is exact.
                full = np.zeros_like(self.data)
                full[idx] += g
                self._accumulate(full)

        out._backward = bwd
        return out

    # -- autodiff driver ------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(p for p in parents if isinstance(p, Tensor))
    return out


# -- free functions -----------------------------------------------------------

def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        for t, a, b in zip(tensors, offs[:-1], offs[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(a, b)
                t._accumulate(g[tuple(sl)])

    out._backward = bwd
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    out._backward = bwd
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # Max-shift uses a detached constant; gradient is exact either way.
    shift = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shift.exp()
    return e / e.sum(axis=axis, keepdims=True)


def norm2(x: Tensor, axis=None, eps: float = 0.0) -> Tensor:
    """Euclidean norm; ``eps`` guards the gradient at zero."""
    s = (x * x).sum(axis=axis)
    if eps:
        s = s + eps
    return s.sqrt()


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D cross-correlation: (B,C,H,W) * (K,C,kh,kw) -> (B,K,H',W')."""
    B, C, H, W = x.data.shape
    K, Cw, kh, kw = w.data.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {C} vs kernel {Cw}")
    if kh > H or kw > W:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than input {H}x{W}"
        )
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1

    cols = np.empty((B, C * kh * kw, Ho * Wo))
    idx = 0
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                patch = x.data[:, c, i : i + stride * Ho : stride,
                               j : j + stride * Wo : stride]
                cols[:, idx, :] = patch.reshape(B, -1)
                idx += 1
    wf = w.data.reshape(K, -1)
    out = _make((wf @ cols).reshape(B, K, Ho, Wo), (x, w))

    def bwd(g):
        gf = g.reshape(B, K, -1)
        if w.requires_grad:
            dw = np.einsum("bkp,bcp->kc", gf, cols).reshape(w.data.shape)
            w._accumulate(dw)
        if x.requires_grad:
            dcols = np.einsum("kc,bkp->bcp", wf, gf)
            dx = np.zeros_like(x.data)
            idx2 = 0
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        dx[:, c, i : i + stride * Ho : stride,
                           j : j + stride * Wo : stride] += dcols[:, idx2, :].reshape(
                            B, Ho, Wo
                        )
                        idx2 += 1
            x._accumulate(dx)

    out._backward = bwd
    return out
