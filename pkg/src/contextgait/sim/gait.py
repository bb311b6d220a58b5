"""Kinematic trot-gait engine with controlled stance-slip perturbation.

The base follows commanded velocity and height exactly; base orientation
follows a second-order (spring-damper) response toward the plane fitted
through the support contacts.  Stance feet receive lateral slip
displacements whose per-step summed magnitude equals a requested target,
and each slip event perturbs that foot's effective support height, which
is how slip excites base vibration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..encoders import Observation, ProprioState, PROPRIO_DIM
from ..objective import BaseCommand
from ..slipmodel import SlipModel
from .kinematics import RobotModel, ik_leg_clamped
from .terrain import Heightfield, TerrainSpec, generate_terrain

GRAVITY = 9.81
TROT_PHASE_OFFSETS = np.array([0.0, 0.5, 0.5, 0.0])  # FR, FL, HR, HL


@dataclass
class SimConfig:
    control_rate: float = 100.0      # Hz
    command_rate: float = 10.0       # Hz; command/observation update rate
    selection_period: float = 0.4    # s between segment selections
    gait_cycle: float = 0.6          # s
    duty_factor: float = 0.5
    swing_height: float = 0.08       # m
    response_freq: float = 8.0       # Hz natural frequency of the base response
    damping: float = 0.7
    slip_height_gain: float = 5.0    # support-height noise per meter of slip
    yaw_slip_gain: float = 0.4       # yaw disturbance per meter of slip moment
    base_z_bandwidth: float = 5.0    # Hz first-order tracking of support+height
    goal_radius: float = 0.3         # m
    tipover_rad: float = 0.6         # |roll| or |pitch| beyond this is a failure
    nominal_speed: float = 1.0       # m/s reference traversal speed
    default_height: float = 0.5      # m fixed-command body height

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate


@dataclass
class RolloutTrace:
    """Uniformly sampled rollout record; everything metrics need."""

    time: np.ndarray              # (T,)
    base_position: np.ndarray     # (T,3)
    base_orientation: np.ndarray  # (T,3) roll/pitch/yaw
    orientation_rates: np.ndarray # (T,3)
    proprio: np.ndarray           # (T,40)
    commands: np.ndarray          # (T,4)
    goal_reached: bool
    elapsed: float
    dt: float
    meta: dict = field(default_factory=dict)

    def proprio_state(self, i: int) -> ProprioState:
        return ProprioState.from_vector(self.proprio[i])


class GaitEngine:
    """Steps the kinematic quadruped one control tick at a time."""

    def __init__(self, terrain: Heightfield, cfg: SimConfig | None = None,
                 model: RobotModel | None = None, seed: int = 0,
                 start: tuple = (0.0, 0.0)):
        self.terrain = terrain
        self.cfg = cfg or SimConfig()
        self.model = model or RobotModel()
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        self.pos = np.array([start[0], start[1], 0.0])
        self.rpy = np.zeros(3)
        self.rpy_rate = np.zeros(3)
        hips = self.model.hip_offsets
        self.foot_world = hips.copy()
        self.foot_world[:, 0] += self.pos[0]
        self.foot_world[:, 1] += self.pos[1]
        self.foot_world[:, 2] = self.terrain.sample(self.foot_world[:, 0],
                                                    self.foot_world[:, 1])
        self.contact_h = self.foot_world[:, 2].copy()
        self.slip_accum = np.zeros((4, 3))
        self.was_stance = np.ones(4, bool)
        self.liftoff_pos = self.foot_world.copy()
        self.pos[2] = self.contact_h.mean() + self.cfg.default_height
        self.prev_angles = np.zeros(12)

    # -- internals ------------------------------------------------------------
    def _phases(self, t: float) -> np.ndarray:
        return (t / self.cfg.gait_cycle + TROT_PHASE_OFFSETS) % 1.0

    def stance_mask(self, t: float | None = None) -> np.ndarray:
        return self._phases(self.t if t is None else t) < self.cfg.duty_factor

    def _plane_fit(self) -> tuple:
        """Least-squares support plane through the four contact estimates."""
        rel = self.foot_world[:, :2] - self.pos[None, :2]
        A = np.column_stack([rel, np.ones(4)])
        h = self.contact_h
        AtA = A.T @ A + np.diag([1e-9, 1e-9, 0.0])
        sx, sy, c = np.linalg.solve(AtA, A.T @ h)
        return np.arctan(sx), np.arctan(sy), c

    def step(self, command: BaseCommand, perturbation: float) -> ProprioState:
        """Advance one control tick under a command and a slip target.

        ``perturbation`` is the requested per-step summed stance-slip
        magnitude (the quantity the slip penalty measures).
        """
        cmd = command.as_array()
        if not np.all(np.isfinite(cmd)):
            raise ValueError(f"non-finite command {cmd}")
        cfg, dt = self.cfg, self.cfg.dt
        t_next = self.t + dt
        phases = self._phases(t_next)
        stance = phases < cfg.duty_factor

        # base translation follows the commanded planar velocity exactly
        self.pos[0] += command.v_x * dt
        self.pos[1] += command.v_y * dt

        stance_dur = cfg.gait_cycle * cfg.duty_factor
        v_xy = np.array([command.v_x, command.v_y])
        slip_step = np.zeros((4, 2))

        for leg in range(4):
            hip_w = self.pos[:2] + self.model.hip_offsets[leg, :2]
            if stance[leg]:
                if not self.was_stance[leg]:
                    # touchdown: plant ahead of the hip by half a stance travel
                    xy = hip_w + v_xy * (stance_dur / 2)
                    self.foot_world[leg, :2] = xy
                    self.foot_world[leg, 2] = self.terrain.sample(*xy)
                    self.contact_h[leg] = self.foot_world[leg, 2]
                    self.slip_accum[leg] = 0.0
                if perturbation > 0.0:
                    n_st = max(1, int(stance.sum()))
                    m = perturbation / n_st
                    ang = self.rng.uniform(0.0, 2 * np.pi)
                    d = m * np.array([np.cos(ang), np.sin(ang)])
                    self.foot_world[leg, :2] += d
                    self.slip_accum[leg, :2] += d
                    slip_step[leg] = d
                    self.contact_h[leg] = (
                        self.terrain.sample(*self.foot_world[leg, :2])
                        + cfg.slip_height_gain * m * self.rng.choice((-1.0, 1.0))
                    )
            else:
                if self.was_stance[leg]:
                    self.liftoff_pos[leg] = self.foot_world[leg].copy()
                    self.slip_accum[leg] = 0.0
                sw = (phases[leg] - cfg.duty_factor) / (1.0 - cfg.duty_factor)
                target_xy = hip_w + v_xy * (stance_dur / 2)
                xy = self.liftoff_pos[leg, :2] + sw * (target_xy - self.liftoff_pos[leg, :2])
                ground = self.terrain.sample(*xy)
                self.foot_world[leg, :2] = xy
                self.foot_world[leg, 2] = ground + cfg.swing_height * np.sin(np.pi * sw)
        self.was_stance = stance

        # orientation: second-order response toward the support plane
        pitch_t, roll_t, support = self._plane_fit()
        rel = self.foot_world[:, :2] - self.pos[None, :2]
        yaw_moment = np.sum(rel[:, 0] * slip_step[:, 1] - rel[:, 1] * slip_step[:, 0])
        target = np.array([roll_t, pitch_t, cfg.yaw_slip_gain * yaw_moment])
        wn = 2 * np.pi * cfg.response_freq
        acc = wn**2 * (target - self.rpy) - 2 * cfg.damping * wn * self.rpy_rate
        self.rpy_rate += acc * dt
        self.rpy += self.rpy_rate * dt

        # base height: first-order tracking of support plane + commanded height
        z_target = support + command.h
        self.pos[2] += (z_target - self.pos[2]) * min(1.0, cfg.base_z_bandwidth * dt)

        self.t = t_next
        return self._proprio(stance, dt)

    def _proprio(self, stance: np.ndarray, dt: float) -> ProprioState:
        angles = np.empty(12)
        for leg in range(4):
            p_body = self.foot_world[leg] - self.pos
            angles[3 * leg : 3 * leg + 3] = ik_leg_clamped(p_body, leg, self.model)
        joint_vel = (angles - self.prev_angles) / dt
        self.prev_angles = angles

        load = self.model.mass * GRAVITY / max(1, int(stance.sum()))
        asym = 1.0 + 2.0 * (abs(self.rpy[0]) + abs(self.rpy[1]))
        pattern = np.array([0.2, 0.6, 0.5])
        torques = np.concatenate([
            (load * 0.1 * asym * pattern) if stance[leg] else 0.05 * pattern
            for leg in range(4)
        ])
        return ProprioState(torques, joint_vel, self.slip_accum.copy(), stance)


# -- controllers ---------------------------------------------------------------

class ConstantController:
    """Fixed command; no observation needed."""

    needs_observation = False

    def __init__(self, command: BaseCommand):
        self.command = command

    def __call__(self, obs, ref_v, t=0.0):
        return self.command


class ReferenceController:
    """Tracks the reference velocity at a fixed body height."""

    needs_observation = False

    def __init__(self, height: float):
        self.height = height

    def __call__(self, obs, ref_v, t=0.0):
        return BaseCommand(ref_v[0], ref_v[1], ref_v[2], self.height)


class PolicyController:
    """Wraps a command policy, optionally with segment selection."""

    needs_observation = True

    def __init__(self, policy, library=None, head=None, scope_offset: int = 0,
                 selection_period: float = 0.4):
        self.policy = policy
        self.library = library
        self.head = head
        self.scope_offset = scope_offset
        self.selection_period = selection_period
        self._next_selection = 0.0
        self._held = None
        self.selection_log: list = []

    def __call__(self, obs: Observation, ref_v, t: float = 0.0):
        from ..selection import act_with_selection

        if self.library is None:
            return self.policy.command(obs)
        if t + 1e-9 >= self._next_selection or self._held is None:
            cmd, seg, score = act_with_selection(
                self.policy, self.library, obs, self.head, self.scope_offset)
            self.selection_log.append({
                "time": float(t), "source_id": seg.source_id,
                "start": seg.start, "length": seg.length, "score": score,
            })
            self._held = (seg, score)
            self._next_selection = t + self.selection_period
            return cmd
        # between selections, re-apply the held segment
        from ..selection import apply_segment, restore_segment

        seg, _ = self._held
        vec = self.policy.get_params()
        prior = apply_segment(vec.values, seg, self.scope_offset)
        try:
            self.policy.set_params(vec)
            cmd = self.policy.command(obs)
        finally:
            restore_segment(vec.values, seg, prior, self.scope_offset)
            self.policy.set_params(vec)
        return cmd


# -- rollout driver ------------------------------------------------------------

def run_rollout(controller, terrain: TerrainSpec | Heightfield, goal,
                timeout: float = 20.0, deltaq_target: float | None = 0.0,
                seed: int = 0, cfg: SimConfig | None = None,
                model: RobotModel | None = None, start: tuple = (0.0, 0.0),
                slip_model: SlipModel | None = None,
                image_shape: tuple = (4, 36, 64),
                proprio_window: int = 16) -> RolloutTrace:
    """Run one point-to-goal rollout at the control rate.

    ``deltaq_target`` fixes the per-step slip magnitude; ``None``
    activates the slip-response model driven by the commanded height and
    local terrain roughness.
    """
    cfg = cfg or SimConfig()
    spec_dict = None
    if isinstance(terrain, TerrainSpec):
        spec_dict = vars(terrain).copy()
        terrain = generate_terrain(terrain)
    goal = np.asarray(goal, float).reshape(2)
    engine = GaitEngine(terrain, cfg, model, seed=seed, start=start)
    smodel = slip_model or SlipModel()
    dt = cfg.dt
    n_max = int(round(timeout / dt))
    cmd_every = max(1, int(round(cfg.control_rate / cfg.command_rate)))

    times, poss, rpys, rates, proprios, cmds = [], [], [], [], [], []
    history = [np.zeros(PROPRIO_DIM)] * proprio_window
    command = BaseCommand(0.0, 0.0, 0.0, cfg.default_height)
    perturb = 0.0
    goal_reached = bool(np.linalg.norm(engine.pos[:2] - goal) <= cfg.goal_radius)
    elapsed = 0.0
    failed = False

    def record(p: ProprioState | None):
        times.append(engine.t)
        poss.append(engine.pos.copy())
        rpys.append(engine.rpy.copy())
        rates.append(engine.rpy_rate.copy())
        proprios.append(p.as_vector() if p else np.zeros(PROPRIO_DIM))
        cmds.append(command.as_array())

    record(None)
    for k in range(n_max):
        if goal_reached or failed:
            break
        if k % cmd_every == 0:
            to_goal = goal - engine.pos[:2]
            dist = np.linalg.norm(to_goal)
            direction = to_goal / dist if dist > 1e-9 else np.zeros(2)
            ref_v = np.array([direction[0], direction[1], 0.0]) * cfg.nominal_speed
            obs = None
            if controller.needs_observation:
                obs = Observation(
                    rgbd=terrain.synth_rgbd(*engine.pos[:2], shape=image_shape),
                    mesh_features=terrain.mesh_features(*engine.pos[:2]),
                    proprio_window=np.stack(history[-proprio_window:]),
                )
            command = controller(obs, ref_v, t=engine.t)
            if deltaq_target is None:
                rough = terrain.local_roughness(*engine.pos[:2])
                perturb = float(smodel.expected_slip(command.h, rough))
            else:
                perturb = float(deltaq_target)
        p = engine.step(command, perturb)
        history.append(p.as_vector())
        record(p)
        if abs(engine.rpy[0]) > cfg.tipover_rad or abs(engine.rpy[1]) > cfg.tipover_rad:
            failed = True
        if np.linalg.norm(engine.pos[:2] - goal) <= cfg.goal_radius:
            goal_reached = True
            elapsed = engine.t

    if not goal_reached:
        elapsed = engine.t
    meta = {"seed": seed, "terrain": spec_dict, "goal": goal.tolist(),
            "deltaq_target": deltaq_target, "tipped_over": failed}
    if isinstance(controller, PolicyController):
        meta["selections"] = controller.selection_log
    return RolloutTrace(
        np.array(times), np.array(poss), np.array(rpys), np.array(rates),
        np.array(proprios), np.array(cmds), goal_reached, float(elapsed), dt, meta,
    )


def rms_vibration(trace: RolloutTrace) -> dict:
    """Per-axis RMS of the orientation-rate signal plus the 3-D total."""
    r = trace.orientation_rates
    per_axis = np.sqrt(np.mean(r**2, axis=0))
    total = float(np.sqrt(np.mean(np.sum(r**2, axis=1))))
    return {"roll": float(per_axis[0]), "pitch": float(per_axis[1]),
            "yaw": float(per_axis[2]), "total": total}


def deltaq_vibration_sweep(speeds, deltaq_grid, seeds, duration: float = 5.0,
                           cfg: SimConfig | None = None) -> list:
    """Fixed-command flat-terrain sweep of slip magnitude versus vibration."""
    if not len(speeds) or not len(deltaq_grid) or not len(seeds):
        raise ValueError("speeds, deltaq_grid, and seeds must be non-empty")
    cfg = cfg or SimConfig()
    terrain = generate_terrain(TerrainSpec("flat", 0.0, 0))
    rows = []
    for speed in speeds:
        for dq in deltaq_grid:
            totals, per_axis = [], []
            for seed in seeds:
                ctrl = ConstantController(
                    BaseCommand(speed, 0.0, 0.0, cfg.default_height))
                trace = run_rollout(ctrl, terrain, goal=(1e6, 0.0),
                                    timeout=duration, deltaq_target=dq,
                                    seed=seed, cfg=cfg)
                v = rms_vibration(trace)
                totals.append(v["total"])
                per_axis.append([v["roll"], v["pitch"], v["yaw"]])
            per_axis = np.array(per_axis)
            rows.append({
                "speed": float(speed), "deltaq": float(dq),
                "rms_roll": float(per_axis[:, 0].mean()),
                "rms_pitch": float(per_axis[:, 1].mean()),
                "rms_yaw": float(per_axis[:, 2].mean()),
                "rms_total": float(np.mean(totals)),
                "std_total": float(np.std(totals)),
            })
    return rows
