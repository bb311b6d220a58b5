"""Multimodal observation types and the context-state encoder stack.

One observation bundles an RGB-D image, a terrain-geometry feature
vector, and a window of proprioceptive states.  The encoder stack maps
it to three 256-d latents, an attention-fused exteroceptive context,
and the concatenated 512-d context state used by the command policy
and by segment scoring.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, concat, stack
from .layers import BiRecurrent, Conv2d, Dense, Module, MultiHeadAttention

LEG_ORDER = ("FR", "FL", "HR", "HL")
PROPRIO_DIM = 40  # 12 torques + 12 joint velocities + 12 slip + 4 stance flags


@dataclass
class ModelConfig:
    """Architecture and normalization settings for the encoder stack."""

    image_shape: tuple = (4, 36, 64)     # desk scale; full scale is (4, 360, 640)
    latent: int = 256
    conv_channels: tuple = (8, 16, 16)
    conv_kernel: int = 3
    conv_stride: int = 2
    pool: tuple = (4, 4)
    mesh_dim: int = 128
    mesh_hidden: int = 128
    mesh_activation: str = "relu"
    proprio_window: int = 16
    heads: int = 4
    head_hidden: int = 128
    depth_max_range: float = 10.0
    zero_mean_input: bool = True
    v_max: float = 1.6
    h_min: float = 0.1
    h_max: float = 0.7

    @property
    def context_dim(self) -> int:
        return 2 * self.latent


def reduced_config() -> ModelConfig:
    """Small configuration for gradient checks (under 5k parameters)."""
    return ModelConfig(
        image_shape=(4, 16, 16), latent=12, conv_channels=(4, 4, 4),
        pool=(1, 1), mesh_dim=16, mesh_hidden=8, proprio_window=4,
        heads=2, head_hidden=8,
    )


@dataclass
class ProprioState:
    """One timestep of proprioceptive feedback."""

    joint_torques: np.ndarray       # (12,) N*m
    joint_velocities: np.ndarray    # (12,) rad/s
    foot_slip: np.ndarray           # (4,3) m, robot frame, leg order FR FL HR HL
    stance_flags: np.ndarray        # (4,) bool

    def __post_init__(self):
        self.joint_torques = np.asarray(self.joint_torques, float).reshape(12)
        self.joint_velocities = np.asarray(self.joint_velocities, float).reshape(12)
        self.foot_slip = np.asarray(self.foot_slip, float).reshape(4, 3)
        self.stance_flags = np.asarray(self.stance_flags, bool).reshape(4)
        for name in ("joint_torques", "joint_velocities", "foot_slip"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([
            self.joint_torques, self.joint_velocities,
            self.foot_slip.ravel(), self.stance_flags.astype(float),
        ])

    @staticmethod
    def from_vector(v: np.ndarray) -> "ProprioState":
        v = np.asarray(v, float).reshape(PROPRIO_DIM)
        return ProprioState(v[:12], v[12:24], v[24:36].reshape(4, 3), v[36:] > 0.5)

    @staticmethod
    def zeros() -> "ProprioState":
        return ProprioState(np.zeros(12), np.zeros(12), np.zeros((4, 3)),
                            np.zeros(4, bool))


@dataclass
class Observation:
    """One timestep's multimodal sensor bundle."""

    rgbd: np.ndarray            # (4,H,W), RGB in [0,1], depth in meters
    mesh_features: np.ndarray   # (128,) terrain-geometry features, meters
    proprio_window: np.ndarray  # (T, 40)

    def __post_init__(self):
        self.rgbd = np.asarray(self.rgbd, float)
        self.mesh_features = np.asarray(self.mesh_features, float).ravel()
        self.proprio_window = np.atleast_2d(np.asarray(self.proprio_window, float))
        if self.rgbd.ndim != 3 or self.rgbd.shape[0] != 4:
            raise ShapeError(f"rgbd must be (4,H,W), got {self.rgbd.shape}")
        if np.any(self.rgbd[3] < 0):
            raise ValueError("depth channel must be non-negative")
        if self.proprio_window.shape[0] < 1 or self.proprio_window.shape[1] != PROPRIO_DIM:
            raise ShapeError(
                f"proprio window must be (T,{PROPRIO_DIM}), got {self.proprio_window.shape}"
            )


@dataclass
class ContextState:
    """Encoder latents and the concatenated context representation."""

    z_v: np.ndarray
    z_m: np.ndarray
    z_p: np.ndarray
    c: np.ndarray
    s_hat: np.ndarray


def adaptive_avg_pool(x: Tensor, out_hw: tuple) -> Tensor:
    """Average-pool (B,C,H,W) down to (B,C,ph,pw) with near-equal bins."""
    _, _, H, W = x.shape
    ph, pw = out_hw
    rows = []
    for i in range(ph):
        h0, h1 = (i * H) // ph, -((-(i + 1) * H) // ph)
        cells = []
        for j in range(pw):
            w0, w1 = (j * W) // pw, -((-(j + 1) * W) // pw)
            cells.append(x[:, :, h0:h1, w0:w1].mean(axis=(-1)).mean(axis=-1))
        rows.append(stack(cells, axis=-1))
    return stack(rows, axis=-2)


class VisualEncoder(Module):
    """Three strided ReLU convolutions, adaptive pooling, linear projection."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c_in = 4
        for i, c_out in enumerate(cfg.conv_channels):
            setattr(self, f"conv{i}", Conv2d(c_in, c_out, cfg.conv_kernel,
                                             cfg.conv_stride, "relu", rng))
            c_in = c_out
        flat = cfg.conv_channels[-1] * cfg.pool[0] * cfg.pool[1]
        self.proj = Dense(flat, cfg.latent, "identity", rng)

    def normalize(self, rgbd: np.ndarray) -> np.ndarray:
        x = np.array(rgbd, float)
        x[..., 3, :, :] /= self.cfg.depth_max_range
        if self.cfg.zero_mean_input:
            x -= x.mean(axis=(-1, -2), keepdims=True)
        return x

    def forward(self, rgbd: Tensor) -> Tensor:
        if rgbd.shape[1] != 4:
            raise ShapeError(f"visual input must have 4 channels, got {rgbd.shape}")
        h = rgbd
        for i in range(len(self.cfg.conv_channels)):
            h = getattr(self, f"conv{i}")(h)
        h = adaptive_avg_pool(h, self.cfg.pool)
        return self.proj(h.reshape(h.shape[0], -1))

    def encode(self, rgbd: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(self.normalize(rgbd)[None])).data[0]


class MeshEncoder(Module):
    """Two-layer MLP over terrain-geometry features."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.fc1 = Dense(cfg.mesh_dim, cfg.mesh_hidden, cfg.mesh_activation, rng)
        self.fc2 = Dense(cfg.mesh_hidden, cfg.latent, "identity", rng)

    def forward(self, mesh: Tensor) -> Tensor:
        if mesh.shape[-1] != self.cfg.mesh_dim:
            raise ShapeError(
                f"mesh features must have length {self.cfg.mesh_dim}, got {mesh.shape}"
            )
        return self.fc2(self.fc1(mesh))

    def encode(self, mesh: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(np.asarray(mesh, float)[None])).data[0]


class ProprioEncoder(Module):
    """Bidirectional LSTM over a proprioceptive window.

    Channel statistics are frozen after training-data ingestion and are
    not trainable parameters.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.rnn = BiRecurrent(PROPRIO_DIM, cfg.latent // 2, "lstm", rng)
        self.chan_mean = np.zeros(PROPRIO_DIM)
        self.chan_std = np.ones(PROPRIO_DIM)

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.chan_mean = np.asarray(mean, float).reshape(PROPRIO_DIM)
        self.chan_std = np.maximum(np.asarray(std, float).reshape(PROPRIO_DIM), 1e-8)

    def normalize(self, window: np.ndarray) -> np.ndarray:
        return (np.asarray(window, float) - self.chan_mean) / self.chan_std

    def forward(self, window: Tensor) -> Tensor:
        return self.rnn(window)

    def encode(self, window: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(self.normalize(window)[None])).data[0]


class ContextFusion(Module):
    """Multi-head attention over the (visual, mesh) latent pair.

    The two latents form a 2-token sequence attended against itself;
    aggregation is the mean over the two query positions, which makes
    the fused vector invariant to the input order.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.latent, cfg.heads, rng)

    def forward(self, z_v: Tensor, z_m: Tensor) -> Tensor:
        pair = stack([z_v, z_m], axis=1)  # (B, 2, latent)
        return self.attn(pair, pair, pair).mean(axis=1)


class ContextEncoder(Module):
    """Full observation-to-context-state pipeline."""

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0,
                 modalities: tuple = ("visual", "mesh", "proprio")):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.modalities = tuple(modalities)
        rng = np.random.default_rng(seed)
        self.visual = VisualEncoder(self.cfg, rng)
        self.mesh = MeshEncoder(self.cfg, rng)
        self.proprio = ProprioEncoder(self.cfg, rng)
        self.fusion = ContextFusion(self.cfg, rng)

    def _mask(self, rgbd, mesh, window):
        if "visual" not in self.modalities:
            rgbd = np.zeros_like(rgbd)
        if "mesh" not in self.modalities:
            mesh = np.zeros_like(mesh)
        if "proprio" not in self.modalities:
            window = np.zeros_like(window)
        return rgbd, mesh, window

    def forward_batch(self, rgbd: np.ndarray, mesh: np.ndarray,
                      window: np.ndarray) -> Tensor:
        """Batched context state (B, 2*latent); inputs are raw arrays."""
        rgbd = self.visual.normalize(rgbd)
        window = self.proprio.normalize(window)
        rgbd, mesh, window = self._mask(rgbd, np.asarray(mesh, float), window)
        z_v = self.visual(Tensor(rgbd))
        z_m = self.mesh(Tensor(mesh))
        z_p = self.proprio(Tensor(window))
        c = self.fusion(z_v, z_m)
        return concat([c, z_p], axis=-1)

    def build_context_state(self, obs: Observation) -> ContextState:
        rgbd = self.visual.normalize(obs.rgbd)
        window = self.proprio.normalize(obs.proprio_window)
        rgbd, mesh, window = self._mask(rgbd, obs.mesh_features, window)
        z_v = self.visual(Tensor(rgbd[None])).data[0]
        z_m = self.mesh(Tensor(mesh[None])).data[0]
        z_p = self.proprio(Tensor(window[None])).data[0]
        c = self.fusion(Tensor(z_v[None]), Tensor(z_m[None])).data[0]
        return ContextState(z_v, z_m, z_p, c, np.concatenate([c, z_p]))
