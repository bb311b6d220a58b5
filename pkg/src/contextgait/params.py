"""Flat parameter vectors, checkpoint files, and gradient evaluation.

Checkpoint format: one JSON header line (format version, layout
descriptors, optional metadata) followed by raw little-endian float64
values in flattening order.  Round-trips bitwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


@dataclass
class ParamVector:
    """Flattened parameters plus the (name, shape, offset) layout."""

    values: np.ndarray
    layout: list[LayoutEntry]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        total = sum(e.size for e in self.layout)
        if total != self.values.size:
            raise ValueError(
                f"layout covers {total} values but vector has {self.values.size}"
            )
        off = 0
        for e in self.layout:
            if e.offset != off:
                raise ValueError(f"non-contiguous layout at {e.name}")
            off += e.size

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.layout), dict(self.meta))

    def slices(self):
        for e in self.layout:
            yield e, self.values[e.offset : e.offset + e.size].reshape(e.shape)


@dataclass
class Gradient:
    """Per-parameter derivative aligned index-for-index with a ParamVector."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("gradient contains non-finite entries")


def flatten(module) -> ParamVector:
    """Flatten a module's parameters in registration order."""
    layout, chunks, off = [], [], 0
    for name, t in module.named_parameters():
        layout.append(LayoutEntry(name, tuple(t.data.shape), off))
        chunks.append(t.data.ravel())
        off += t.data.size
    return ParamVector(np.concatenate(chunks) if chunks else np.empty(0), layout)


def load_flat(module, vec: ParamVector) -> None:
    """Write a flat vector back into a module's parameter tensors."""
    entries = {e.name: e for e in vec.layout}
    for name, t in module.named_parameters():
        e = entries.get(name)
        if e is None or e.shape != tuple(t.data.shape):
            raise ValueError(layout_diff(vec, flatten(module)))
        t.data[...] = vec.values[e.offset : e.offset + e.size].reshape(e.shape)


def layout_diff(a: ParamVector, b: ParamVector) -> str:
    la = {e.name: e.shape for e in a.layout}
    lb = {e.name: e.shape for e in b.layout}
    lines = ["incompatible parameter layouts:"]
    for name in sorted(set(la) | set(lb)):
        if la.get(name) != lb.get(name):
            lines.append(f"  {name}: {la.get(name)} vs {lb.get(name)}")
    return "\n".join(lines)


def collect_gradient(module) -> Gradient:
    chunks = []
    for name, t in module.named_parameters():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        chunks.append(np.asarray(g).ravel())
    return Gradient(np.concatenate(chunks) if chunks else np.empty(0))


def gradient_of(loss_fn, at: ParamVector) -> Gradient:
    """Gradient of a scalar loss with respect to a flat parameter vector.

    ``loss_fn`` receives a dict mapping layout names to leaf Tensors and
    must return a scalar Tensor built from them.
    """
    leaves = {}
    for e, arr in at.slices():
        leaves[e.name] = Tensor(arr.copy(), requires_grad=True)
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor):
        raise TypeError("loss_fn must return a Tensor")
    if not np.isfinite(loss.data):
        raise ValueError(f"non-finite loss {loss.data!r} at evaluation point")
    loss.backward()
    out = np.zeros_like(at.values)
    for e in at.layout:
        g = leaves[e.name].grad
        if g is not None:
            out[e.offset : e.offset + e.size] = g.ravel()
    return Gradient(out)


# -- checkpoint IO ------------------------------------------------------------

def save_checkpoint(path, vec: ParamVector) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "layout": [[e.name, list(e.shape), e.offset] for e in vec.layout],
        "meta": vec.meta,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(vec.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ParamVector:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    layout = [LayoutEntry(n, tuple(s), o) for n, s, o in header["layout"]]
    values = np.frombuffer(raw[nl + 1 :], dtype="<f8").copy()
    return ParamVector(values, layout, header.get("meta", {}))
