"""Vibrational-stability objective and policy training.

The per-timestep objective sums a velocity-tracking shaping term, a
stance-slip penalty, and an actuation-effort penalty; training performs
minibatch gradient descent on the negated objective with global
gradient-norm clipping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, norm2
from .encoders import Observation, ProprioState
from .params import ParamVector, collect_gradient, flatten
from .slipmodel import SlipModel, roughness_from_mesh


@dataclass
class ObjectiveConfig:
    beta_v: float = 1.0       # velocity-tracking weight
    sigma_v: float = 0.25     # (m/s)^2 tracking bandwidth
    beta_s: float = 5.0       # 1/m slip penalty weight
    beta_e: float = 0.005     # 1/(N*m) effort penalty weight
    clip_norm: float = 1.0    # global gradient-norm clip
    beta_a: float = 0.0       # optional command-smoothness weight (off by default)
    lateral_only: bool = False  # restrict slip norm to the ground-plane components

    def validate(self) -> None:
        if self.sigma_v <= 0:
            raise ValueError("sigma_v must be > 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        for name in ("beta_v", "beta_s", "beta_e", "beta_a"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class BaseCommand:
    """High-level action: base linear velocities (m/s) and body height (m)."""

    v_x: float
    v_y: float
    v_z: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.v_z, self.h], float)

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.v_z], float)

    def check_bounds(self, v_max: float = 1.6, h_min: float = 0.1,
                     h_max: float = 0.7) -> None:
        if np.any(np.abs(self.velocity) > v_max + 1e-9):
            raise ValueError(f"velocity {self.velocity} exceeds bound {v_max}")
        if not (h_min - 1e-9 <= self.h <= h_max + 1e-9):
            raise ValueError(f"height {self.h} outside [{h_min}, {h_max}]")


@dataclass
class StepSample:
    """One logged step: observation, executed command, and outcome pair."""

    observation: Observation
    command: BaseCommand
    reference_velocity: np.ndarray          # (3,) m/s
    proprio_prev: ProprioState
    proprio_curr: ProprioState

    def __post_init__(self):
        self.reference_velocity = np.asarray(self.reference_velocity, float).reshape(3)
        if not np.all(np.isfinite(self.reference_velocity)):
            raise ValueError("non-finite reference velocity")


def velocity_term(command: BaseCommand, reference: np.ndarray,
                  cfg: ObjectiveConfig) -> float:
    err = command.velocity - np.asarray(reference, float).reshape(3)
    return cfg.beta_v * np.exp(-float(err @ err) / cfg.sigma_v)


def delta_q(prev: ProprioState, curr: ProprioState,
            lateral_only: bool = False) -> float:
    """Stance-masked summed change in per-leg slip displacement."""
    diff = curr.foot_slip - prev.foot_slip
    if lateral_only:
        diff = diff[:, :2]
    return float(np.sum(curr.stance_flags * np.linalg.norm(diff, axis=1)))


def slip_term(prev: ProprioState, curr: ProprioState, cfg: ObjectiveConfig) -> float:
    return -cfg.beta_s * delta_q(prev, curr, cfg.lateral_only)


def effort_term(torques: np.ndarray, cfg: ObjectiveConfig) -> float:
    return -cfg.beta_e * float(np.linalg.norm(np.asarray(torques, float)))


def total_objective(sample: StepSample, cfg: ObjectiveConfig) -> float:
    terms = {
        "velocity": velocity_term(sample.command, sample.reference_velocity, cfg),
        "slip": slip_term(sample.proprio_prev, sample.proprio_curr, cfg),
        "effort": effort_term(sample.proprio_curr.joint_torques, cfg),
    }
    for name, value in terms.items():
        if not np.isfinite(value):
            raise ValueError(f"non-finite objective term: {name} = {value}")
    return sum(terms.values())


# -- training -----------------------------------------------------------------

@dataclass
class TrainingReport:
    epoch_loss: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    aborted: bool = False

    def as_dict(self) -> dict:
        return {
            "epoch_loss": self.epoch_loss,
            "grad_norms": self.grad_norms,
            "config": self.config,
            "aborted": self.aborted,
        }


def _batch_arrays(samples):
    rgbd = np.stack([s.observation.rgbd for s in samples])
    mesh = np.stack([s.observation.mesh_features for s in samples])
    window = np.stack([s.observation.proprio_window for s in samples])
    refs = np.stack([s.reference_velocity for s in samples])
    return rgbd, mesh, window, refs


def batch_loss(policy, samples, cfg: ObjectiveConfig,
               differentiable_slip: bool = True,
               slip_model: SlipModel | None = None) -> Tensor:
    """Mean negated objective over a sample batch, as an autodiff scalar.

    The velocity term is evaluated at the policy's own command.  With
    ``differentiable_slip`` the slip penalty uses the slip-response
    model at the policy's commanded height (the logged slip carries no
    gradient); otherwise the logged slip enters as a constant.
    """
    rgbd, mesh, window, refs = _batch_arrays(samples)
    cmd = policy.forward_batch(rgbd, mesh, window)  # (B,4) Tensor
    err = cmd[:, :3] - Tensor(refs)
    j_v = Tensor(cfg.beta_v) * ((err * err).sum(axis=1) * (-1.0 / cfg.sigma_v)).exp()
    if differentiable_slip:
        model = slip_model or SlipModel()
        rough = roughness_from_mesh(mesh)
        j_s = Tensor(-cfg.beta_s) * model.expected_slip_t(cmd[:, 3], rough)
    else:
        j_s = Tensor(np.array([
            slip_term(s.proprio_prev, s.proprio_curr, cfg) for s in samples
        ]))
    j_e = Tensor(np.array([
        effort_term(s.proprio_curr.joint_torques, cfg) for s in samples
    ]))
    return -(j_v + j_s + j_e).mean()


def clip_gradients(policy, clip_norm: float) -> float:
    """Scale all gradients so the global norm is at most ``clip_norm``."""
    total = 0.0
    grads = []
    for p in policy.parameters():
        if p.grad is not None:
            grads.append(p)
            total += float(np.sum(p.grad**2))
    total = np.sqrt(total)
    if total > clip_norm:
        scale = clip_norm / total
        for p in grads:
            p.grad *= scale
    return total


def train_policy(policy, dataset, cfg: ObjectiveConfig, epochs: int, seed: int,
                 lr: float = 1e-3, momentum: float = 0.9, batch_size: int = 32,
                 differentiable_slip: bool = True,
                 slip_model: SlipModel | None = None):
    """Minibatch gradient descent on the mean negated objective.

    Returns the trained flat parameter vector and a per-epoch report.
    On divergence the last finite parameters are returned with the
    report marked aborted.
    """
    cfg.validate()
    if not dataset:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(seed)
    report = TrainingReport(config={
        "epochs": epochs, "seed": seed, "lr": lr, "momentum": momentum,
        "batch_size": batch_size, "differentiable_slip": differentiable_slip,
        "objective": vars(cfg).copy(),
    })
    velocity = {name: np.zeros_like(t.data) for name, t in policy.named_parameters()}
    last_good = flatten(policy)
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        losses, norms = [], []
        for lo in range(0, len(dataset), batch_size):
            batch = [dataset[i] for i in order[lo : lo + batch_size]]
            policy.zero_grad()
            loss = batch_loss(policy, batch, cfg, differentiable_slip, slip_model)
            if not np.isfinite(loss.data):
                report.aborted = True
                return last_good, report
            loss.backward()
            norm = clip_gradients(policy, cfg.clip_norm)
            if not np.isfinite(norm):
                report.aborted = True
                return last_good, report
            norms.append(norm)
            if lr > 0:
                for name, t in policy.named_parameters():
                    g = t.grad if t.grad is not None else 0.0
                    v = velocity[name]
                    v *= momentum
                    v -= lr * g
                    t.data += v
            losses.append(loss.item())
        report.epoch_loss.append(float(np.mean(losses)))
        report.grad_norms.append(float(np.mean(norms)))
        last_good = flatten(policy)
    return last_good, report
