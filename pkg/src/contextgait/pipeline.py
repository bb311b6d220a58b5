"""End-to-end workflows: data collection, checkpoint training, library
construction, head training, and policy-versus-baseline evaluation.

These are the pieces the command-line entry points and the integration
tests share.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import ModelConfig, Observation
from .io import load_dataset, save_run
from .objective import ObjectiveConfig, train_policy
from .params import ParamVector
from .policy import CommandPolicy
from .selection import (
    ScoringHead,
    SegmentLibrary,
    SelectionConfig,
    build_library,
    select_segment,
    train_scoring_head,
)
from .sim.gait import (
    ConstantController,
    PolicyController,
    ReferenceController,
    RolloutTrace,
    SimConfig,
    rms_vibration,
    run_rollout,
)
from .sim.terrain import TerrainSpec, generate_terrain
from .objective import BaseCommand

LIBRARY_SCOPE_PREFIX = "fc2."


def head_scope(vec: ParamVector, prefix: str = LIBRARY_SCOPE_PREFIX) -> tuple:
    """(offset, length) of the segment-library scope in a flat vector."""
    entries = [e for e in vec.layout if e.name.startswith(prefix)]
    if not entries:
        raise ValueError(f"no layout entries under prefix {prefix!r}")
    offset = entries[0].offset
    length = sum(e.size for e in entries)
    if any(e.offset != offset + sum(x.size for x in entries[:i])
           for i, e in enumerate(entries)):
        raise ValueError(f"scope {prefix!r} is not contiguous")
    return offset, length


def scope_values(vec: ParamVector, prefix: str = LIBRARY_SCOPE_PREFIX) -> np.ndarray:
    offset, length = head_scope(vec, prefix)
    return vec.values[offset : offset + length].copy()


def collect_runs(out_dir, n_runs: int, seed: int,
                 cfg: ModelConfig | None = None,
                 sim_cfg: SimConfig | None = None,
                 duration: float = 4.0, goal_distance: float = 8.0) -> list:
    """Record run logs on a mix of terrains for offline training.

    Each run walks straight toward a +x goal under a fixed command while
    the slip-response model injects terrain-dependent slip, so the logs
    pair every observation with the reference velocity and the measured
    proprioceptive outcome.
    """
    cfg = cfg or ModelConfig()
    sim_cfg = sim_cfg or SimConfig()
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    kinds = ("flat", "rough", "rough", "box", "slope_up")
    run_dirs = []
    for i in range(n_runs):
        kind = kinds[i % len(kinds)]
        difficulty = 0.0 if kind == "flat" else float(rng.uniform(0.3, 1.0))
        spec = TerrainSpec(kind, difficulty, int(rng.integers(0, 2**31)))
        terrain = generate_terrain(spec)
        height = float(rng.uniform(cfg.h_min + 0.05, cfg.h_max))
        ctrl = ConstantController(
            BaseCommand(sim_cfg.nominal_speed, 0.0, 0.0, height))
        goal = (goal_distance, 0.0)
        trace = run_rollout(ctrl, terrain, goal, timeout=duration,
                            deltaq_target=None, seed=seed + i, cfg=sim_cfg)
        run_dir = out / f"run_{i:03d}"
        save_run(run_dir, trace, terrain, goal, image_shape=cfg.image_shape,
                 command_every=max(1, int(round(sim_cfg.control_rate
                                                / sim_cfg.command_rate))),
                 nominal_speed=sim_cfg.nominal_speed)
        run_dirs.append(run_dir)
    return run_dirs


def train_checkpoint(dataset_dir, modalities: tuple, seed: int,
                     cfg: ModelConfig | None = None,
                     objective: ObjectiveConfig | None = None,
                     epochs: int = 20, lr: float = 1e-3,
                     batch_size: int = 32):
    """Train a command policy on a run-log dataset.

    Returns (policy, flat parameters, training report).
    """
    if isinstance(modalities, str):
        modalities = (("proprio",) if modalities == "proprio-only"
                      else ("visual", "mesh", "proprio"))
    cfg = cfg or ModelConfig()
    objective = objective or ObjectiveConfig()
    samples = load_dataset(dataset_dir, proprio_window=cfg.proprio_window)
    policy = CommandPolicy(cfg, seed=seed, modalities=modalities)
    vec, report = train_policy(policy, samples, objective, epochs=epochs,
                               seed=seed, lr=lr, batch_size=batch_size)
    vec.meta = {"modalities": list(modalities), "seed": seed}
    return policy, vec, report


def two_source_library(vec_full: ParamVector, vec_proprio: ParamVector,
                       sel_cfg: SelectionConfig | None = None) -> SegmentLibrary:
    """Segment library cut from the two checkpoints' head scopes."""
    sel_cfg = sel_cfg or SelectionConfig()
    return build_library(
        [("full", scope_values(vec_full)),
         ("proprio-only", scope_values(vec_proprio))],
        sel_cfg,
    )


def context_dataset(policy: CommandPolicy, dataset_dir,
                    cfg: ModelConfig | None = None) -> tuple:
    """Labeled context states for scoring-head training.

    Every logged observation yields two contexts: the full observation
    (label 0, matching the all-modality checkpoint) and the same
    observation with the exteroceptive channels blanked (label 1,
    matching the proprioception-only checkpoint).
    """
    cfg = cfg or ModelConfig()
    samples = load_dataset(dataset_dir, proprio_window=cfg.proprio_window)
    contexts, labels = [], []
    for s in samples:
        obs = s.observation
        contexts.append(policy.encoder.build_context_state(obs).s_hat)
        labels.append(0)
        blank = Observation(rgbd=np.zeros_like(obs.rgbd),
                            mesh_features=np.zeros_like(obs.mesh_features),
                            proprio_window=obs.proprio_window)
        contexts.append(policy.encoder.build_context_state(blank).s_hat)
        labels.append(1)
    return np.array(contexts), np.array(labels)


def fit_scoring_head(library: SegmentLibrary, contexts: np.ndarray,
                     labels: np.ndarray, seed: int = 0,
                     epochs: int = 100) -> tuple:
    """Train a scoring head so each context family prefers its source."""
    head = ScoringHead(library.cfg, seed=seed)
    order = [library.source_ids.index(s) for s in ("full", "proprio-only")]
    source_labels = np.array([order[l] for l in labels])
    report = train_scoring_head(head, library, contexts, source_labels,
                                epochs=epochs, seed=seed)
    return head, report


def selection_source_rate(library: SegmentLibrary, head: ScoringHead,
                          contexts: np.ndarray, source_id: str) -> float:
    """Fraction of contexts whose argmax segment comes from ``source_id``."""
    hits = 0
    for ctx in contexts:
        seg, _ = select_segment(library, ctx, head)
        hits += seg.source_id == source_id
    return hits / len(contexts)


@dataclass
class ComparisonResult:
    """Policy-versus-baseline rollout statistics on one terrain family."""

    policy_rms: list = field(default_factory=list)
    baseline_rms: list = field(default_factory=list)
    policy_speed: list = field(default_factory=list)
    baseline_speed: list = field(default_factory=list)
    policy_elapsed: list = field(default_factory=list)
    baseline_elapsed: list = field(default_factory=list)

    def summary(self) -> dict:
        p, b = np.mean(self.policy_rms), np.mean(self.baseline_rms)
        return {
            "policy_rms_mean": float(p),
            "baseline_rms_mean": float(b),
            "rms_reduction_pct": float((b - p) / b * 100.0) if b else 0.0,
            "policy_speed_mean": float(np.mean(self.policy_speed)),
            "baseline_speed_mean": float(np.mean(self.baseline_speed)),
            "policy_elapsed_mean": float(np.mean(self.policy_elapsed)),
            "baseline_elapsed_mean": float(np.mean(self.baseline_elapsed)),
            "seeds": len(self.policy_rms),
        }


def forward_speed(trace: RolloutTrace) -> float:
    span = trace.time[-1] - trace.time[0]
    if span <= 0:
        return 0.0
    return float((trace.base_position[-1, 0] - trace.base_position[0, 0]) / span)


def compare_on_terrain(policy: CommandPolicy, library, head,
                       scope_offset: int, seeds, difficulty: float = 0.7,
                       kind: str = "rough", goal_distance: float = 4.0,
                       baseline_height: float = 0.5,
                       sim_cfg: SimConfig | None = None,
                       timeout: float = 10.0) -> ComparisonResult:
    """Matched-seed rollouts of the adaptive policy against a fixed-command
    reference controller; both track the same goal."""
    sim_cfg = sim_cfg or SimConfig()
    result = ComparisonResult()
    goal = (goal_distance, 0.0)
    for seed in seeds:
        terrain = generate_terrain(TerrainSpec(kind, difficulty, seed))
        pc = PolicyController(policy, library, head, scope_offset,
                              selection_period=sim_cfg.selection_period)
        tp = run_rollout(pc, terrain, goal, timeout=timeout,
                         deltaq_target=None, seed=seed, cfg=sim_cfg,
                         image_shape=policy.cfg.image_shape,
                         proprio_window=policy.cfg.proprio_window)
        bc = ReferenceController(baseline_height)
        tb = run_rollout(bc, terrain, goal, timeout=timeout,
                         deltaq_target=None, seed=seed, cfg=sim_cfg)
        result.policy_rms.append(rms_vibration(tp)["total"])
        result.baseline_rms.append(rms_vibration(tb)["total"])
        result.policy_speed.append(forward_speed(tp))
        result.baseline_speed.append(forward_speed(tb))
        result.policy_elapsed.append(tp.elapsed)
        result.baseline_elapsed.append(tb.elapsed)
    return result
