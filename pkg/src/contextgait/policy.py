"""Base-command policy: context encoder plus a small command head."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat
from .encoders import ContextEncoder, ModelConfig, Observation
from .layers import Dense, Module
from .objective import BaseCommand
from .params import ParamVector, flatten, load_flat


class CommandPolicy(Module):
    """Maps an observation to [v_x, v_y, v_z, h] within command bounds.

    The head is dense(context -> hidden, tanh) -> dense(hidden -> 4);
    raw outputs are squashed by scaled tanh onto the command box.
    """

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0,
                 modalities: tuple = ("visual", "mesh", "proprio")):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.encoder = ContextEncoder(self.cfg, seed=seed, modalities=modalities)
        rng = np.random.default_rng(seed + 1)
        self.fc1 = Dense(self.cfg.context_dim, self.cfg.head_hidden, "tanh", rng)
        self.fc2 = Dense(self.cfg.head_hidden, 4, "identity", rng)

    def head_forward(self, s_hat: Tensor) -> Tensor:
        u = self.fc2(self.fc1(s_hat))
        v = u[:, :3].tanh() * self.cfg.v_max
        mid = 0.5 * (self.cfg.h_min + self.cfg.h_max)
        half = 0.5 * (self.cfg.h_max - self.cfg.h_min)
        h = u[:, 3:4].tanh() * half + mid
        return concat([v, h], axis=1)

    def forward_batch(self, rgbd: np.ndarray, mesh: np.ndarray,
                      window: np.ndarray) -> Tensor:
        return self.head_forward(self.encoder.forward_batch(rgbd, mesh, window))

    def command(self, obs: Observation) -> BaseCommand:
        out = self.forward_batch(obs.rgbd[None], obs.mesh_features[None],
                                 obs.proprio_window[None]).data[0]
        return BaseCommand(*out)

    def command_from_context(self, s_hat: np.ndarray) -> BaseCommand:
        out = self.head_forward(Tensor(np.asarray(s_hat, float)[None])).data[0]
        return BaseCommand(*out)

    # -- flat-parameter plumbing ---------------------------------------------
    def get_params(self) -> ParamVector:
        vec = flatten(self)
        vec.meta = {"modalities": list(self.encoder.modalities)}
        return vec

    def set_params(self, vec: ParamVector) -> None:
        load_flat(self, vec)

    def head_layout_prefixes(self) -> tuple:
        """Layout-name prefixes of the command head (segment-library scope)."""
        return ("fc1.", "fc2.")
