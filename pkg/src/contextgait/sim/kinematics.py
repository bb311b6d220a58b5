"""Quadruped leg geometry: forward and inverse kinematics.

Legs are 3-DOF (hip roll, hip pitch, knee) with two equal-importance
links.  The knee angle is the deviation from a straight leg, so a fully
extended leg has knee angle zero.  Leg order is FR, FL, HR, HL.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ReachError(ValueError):
    """Target outside the leg workspace."""


@dataclass
class RobotModel:
    body_length: float = 1.1
    body_width: float = 0.5
    upper: float = 0.35
    lower: float = 0.35
    mass: float = 30.0
    hip_offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.upper <= 0 or self.lower <= 0:
            raise ValueError("link lengths must be positive")
        if self.hip_offsets is None:
            hx, hy = 0.41 * self.body_length, 0.5 * self.body_width
            self.hip_offsets = np.array([
                [hx, -hy, 0.0],   # FR
                [hx, hy, 0.0],    # FL
                [-hx, -hy, 0.0],  # HR
                [-hx, hy, 0.0],   # HL
            ])
        self.hip_offsets = np.asarray(self.hip_offsets, float).reshape(4, 3)

    @property
    def reach(self) -> float:
        return self.upper + self.lower


def fk_leg(angles: np.ndarray, leg: int, model: RobotModel) -> np.ndarray:
    """Body-frame foot position for (hip_roll, hip_pitch, knee)."""
    roll, pitch, knee = np.asarray(angles, float)
    l1, l2 = model.upper, model.lower
    # planar chain in the leg's x-z plane; knee bends backward
    x = l1 * np.sin(pitch) + l2 * np.sin(pitch - knee)
    zp = -(l1 * np.cos(pitch) + l2 * np.cos(pitch - knee))
    # hip roll about +x maps (x, 0, zp) out of the sagittal plane
    y = -np.sin(roll) * zp
    z = np.cos(roll) * zp
    return model.hip_offsets[leg] + np.array([x, y, z])


def ik_leg(foot_target: np.ndarray, leg: int, model: RobotModel) -> np.ndarray:
    """Joint angles reaching a body-frame foot target.

    Raises ReachError (with the deficit) for targets beyond full
    extension.
    """
    p = np.asarray(foot_target, float) - model.hip_offsets[leg]
    r = np.linalg.norm(p)
    if r > model.reach + 1e-12:
        raise ReachError(
            f"target at {r:.6f} m exceeds reach {model.reach:.6f} m "
            f"(deficit {r - model.reach:.6f} m)"
        )
    l1, l2 = model.upper, model.lower
    rho = np.hypot(p[1], p[2])
    roll = np.arctan2(p[1], -p[2]) if rho > 1e-12 else 0.0
    # planar target (p_x, -rho)
    cos_int = np.clip((l1**2 + l2**2 - r**2) / (2 * l1 * l2), -1.0, 1.0)
    interior = np.arccos(cos_int)
    knee = np.pi - interior
    gamma = np.arctan2(p[0], rho)
    cos_b = np.clip((l1**2 + r**2 - l2**2) / (2 * l1 * max(r, 1e-12)), -1.0, 1.0)
    pitch = gamma + np.arccos(cos_b)
    return np.array([roll, pitch, knee])


def ik_leg_clamped(foot_target: np.ndarray, leg: int, model: RobotModel,
                   margin: float = 1e-6) -> np.ndarray:
    """IK with the target radially clamped into the workspace."""
    p = np.asarray(foot_target, float) - model.hip_offsets[leg]
    r = np.linalg.norm(p)
    limit = model.reach - margin
    if r > limit:
        p = p * (limit / r)
    return ik_leg(model.hip_offsets[leg] + p, leg, model)
