"""Kinematic quadruped simulator: terrain, leg kinematics, trot gait."""
from .terrain import TerrainSpec, Heightfield, generate_terrain, TERRAIN_KINDS
from .kinematics import RobotModel, ReachError, fk_leg, ik_leg, ik_leg_clamped
from .gait import (
    SimConfig,
    RolloutTrace,
    GaitEngine,
    ConstantController,
    ReferenceController,
    PolicyController,
    run_rollout,
    rms_vibration,
    deltaq_vibration_sweep,
)

__all__ = [
    "TerrainSpec", "Heightfield", "generate_terrain", "TERRAIN_KINDS",
    "RobotModel", "ReachError", "fk_leg", "ik_leg", "ik_leg_clamped",
    "SimConfig", "RolloutTrace", "GaitEngine", "ConstantController",
    "ReferenceController", "PolicyController", "run_rollout",
    "rms_vibration", "deltaq_vibration_sweep",
]
