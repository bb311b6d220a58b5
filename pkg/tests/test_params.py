"""Flat-parameter plumbing: layouts, gradients, checkpoints."""
import numpy as np
import pytest

from contextgait.autodiff import Tensor
from contextgait.layers import Dense, Module
from contextgait.params import (
    Gradient,
    LayoutEntry,
    ParamVector,
    flatten,
    gradient_of,
    layout_diff,
    load_checkpoint,
    load_flat,
    save_checkpoint,
)


class TinyNet(Module):
    def __init__(self, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.a = Dense(3, 4, "tanh", rng)
        self.b = Dense(4, 2, "identity", rng)

    def forward(self, x):
        return self.b(self.a(x))


class TestParamVector:
    def test_flatten_round_trip_bitwise(self):
        net = TinyNet()
        vec = flatten(net)
        net2 = TinyNet(seed=99)
        load_flat(net2, vec)
        assert np.array_equal(flatten(net2).values, vec.values)

    def test_layout_contiguous_enforced(self):
        with pytest.raises(ValueError, match="non-contiguous"):
            ParamVector(np.zeros(4), [LayoutEntry("a", (2,), 0),
                                      LayoutEntry("b", (2,), 3)])

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError, match="layout covers"):
            ParamVector(np.zeros(5), [LayoutEntry("a", (2, 2), 0)])

    def test_layout_names_follow_registration_order(self):
        vec = flatten(TinyNet())
        assert [e.name for e in vec.layout] == [
            "a.weight", "a.bias", "b.weight", "b.bias"]

    def test_incompatible_layout_diff_message(self):
        net = TinyNet()
        other = Dense(3, 5)
        msg = layout_diff(flatten(net), flatten(other))
        assert "incompatible" in msg
        assert "a.weight" in msg


class TestGradient:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            Gradient(np.array([1.0, np.inf]))

    def test_quadratic_gradient_is_theta(self):
        net = TinyNet()
        vec = flatten(net)
        g = gradient_of(
            lambda leaves: sum(((t * t).sum() for t in leaves.values()),
                               Tensor(0.0)) * 0.5,
            vec)
        assert np.allclose(g.values, vec.values)

    def test_constant_loss_zero_gradient(self):
        vec = flatten(TinyNet())
        g = gradient_of(lambda leaves: Tensor(3.0) * 1.0, vec)
        assert np.array_equal(g.values, np.zeros_like(vec.values))

    def test_non_finite_loss_rejected(self):
        vec = flatten(TinyNet())
        with pytest.raises(ValueError, match="non-finite loss"):
            gradient_of(lambda leaves: Tensor(np.inf) * 1.0, vec)

    def test_small_net_fd_property(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            net = TinyNet(seed=seed)
            vec = flatten(net)
            x = rng.standard_normal((2, 3))

            def loss(values):
                v2 = vec.copy()
                v2.values = values
                load_flat(net, v2)
                return float(net(Tensor(x)).tanh().sum().data)

            g = gradient_of(
                lambda leaves: _forward_from_leaves(leaves, x), vec).values
            eps = 1e-5
            for i in rng.choice(len(vec), 5, replace=False):
                up = vec.values.copy()
                down = vec.values.copy()
                up[i] += eps
                down[i] -= eps
                fd = (loss(up) - loss(down)) / (2 * eps)
                assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), abs(g[i]), 1e-6)


def _forward_from_leaves(leaves, x):
    h = Tensor(x) @ leaves["a.weight"].transpose() + leaves["a.bias"]
    h = h.tanh()
    out = h @ leaves["b.weight"].transpose() + leaves["b.bias"]
    return out.tanh().sum()


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        vec = flatten(TinyNet())
        vec.meta = {"modalities": ["proprio"], "seed": 3}
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, vec)
        back = load_checkpoint(path)
        assert np.array_equal(back.values, vec.values)
        assert back.layout == vec.layout
        assert back.meta == vec.meta

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"version": 999, "layout": [], "meta": {}}\n')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)
