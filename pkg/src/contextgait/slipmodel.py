"""Desk-scale stance-slip response model.

Maps commanded body height and local terrain roughness to an expected
per-step stance slip magnitude.  The simulator uses it to inject foot
perturbations during policy rollouts, and training uses the same
(differentiable) expression so the policy can learn to command heights
that minimize induced slip.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class SlipModel:
    gain: float = 0.25        # m slip per unit roughness at the quadratic floor
    base: float = 0.3         # residual slip factor at the optimal height
    h_scale: float = 0.1      # m; height-mismatch scale of the quadratic term
    h_nominal: float = 0.55   # m; optimal height on perfectly smooth ground
    h_gain: float = 4.0       # height drop per unit roughness
    h_floor: float = 0.15     # m; lowest useful body height

    def optimal_height(self, roughness):
        return np.clip(self.h_nominal - self.h_gain * np.asarray(roughness, float),
                       self.h_floor, self.h_nominal)

    def expected_slip(self, height, roughness):
        """Expected per-step slip magnitude (m) summed over stance legs."""
        h_opt = self.optimal_height(roughness)
        mismatch = (np.asarray(height, float) - h_opt) / self.h_scale
        return self.gain * np.asarray(roughness, float) * (self.base + mismatch**2)

    def expected_slip_t(self, height: Tensor, roughness: np.ndarray) -> Tensor:
        """Differentiable-in-height version for training."""
        r = np.asarray(roughness, float)
        h_opt = self.optimal_height(r)
        mismatch = (height - Tensor(h_opt)) * (1.0 / self.h_scale)
        return Tensor(self.gain * r) * (self.base + mismatch * mismatch)


def roughness_from_mesh(mesh_features: np.ndarray) -> np.ndarray:
    """Local roughness estimate: std of the terrain-geometry samples.

    Works on a single 128-vector or a batch (B, 128).
    """
    m = np.asarray(mesh_features, float)
    return m.std(axis=-1)
