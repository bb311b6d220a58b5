"""File formats: rollout traces, run-log datasets, sweep tables.

All writers use fixed numeric formatting (`%.17g`, which round-trips
float64 exactly) and sorted JSON keys, so identical inputs produce
identical bytes.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .encoders import PROPRIO_DIM, Observation, ProprioState
from .objective import BaseCommand, StepSample
from .sim.gait import RolloutTrace, rms_vibration
from .sim.terrain import Heightfield

FMT = "%.17g"

TRACE_COLUMNS = (
    ["time", "pos_x", "pos_y", "pos_z", "roll", "pitch", "yaw",
     "rate_roll", "rate_pitch", "rate_yaw"]
    + [f"proprio_{i}" for i in range(PROPRIO_DIM)]
    + ["cmd_vx", "cmd_vy", "cmd_vz", "cmd_h"]
)

SWEEP_COLUMNS = ("speed", "deltaq", "rms_roll", "rms_pitch", "rms_yaw",
                 "rms_total", "std_total")


def _fmt_row(values) -> list:
    return [FMT % v for v in values]


def save_trace(path, trace: RolloutTrace) -> None:
    """Trace CSV (one row per control step) plus a JSON summary sidecar."""
    path = Path(path)
    block = np.column_stack([
        trace.time, trace.base_position, trace.base_orientation,
        trace.orientation_rates, trace.proprio, trace.commands,
    ])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for row in block:
            w.writerow(_fmt_row(row))
    summary = {
        "version": 1,
        "goal_reached": bool(trace.goal_reached),
        "elapsed": trace.elapsed,
        "dt": trace.dt,
        "steps": int(len(trace.time)),
        "rms_vibration": rms_vibration(trace),
        "meta": trace.meta,
    }
    path.with_suffix(".json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n")


def load_trace(path) -> RolloutTrace:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns in {path}")
        block = np.array([[float(v) for v in row] for row in reader])
    if block.ndim != 2 or block.shape[1] != len(TRACE_COLUMNS):
        raise ValueError(f"malformed trace {path}")
    summary_path = path.with_suffix(".json")
    summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
    return RolloutTrace(
        time=block[:, 0], base_position=block[:, 1:4],
        base_orientation=block[:, 4:7], orientation_rates=block[:, 7:10],
        proprio=block[:, 10:10 + PROPRIO_DIM],
        commands=block[:, 10 + PROPRIO_DIM:],
        goal_reached=bool(summary.get("goal_reached", False)),
        elapsed=float(summary.get("elapsed", block[-1, 0])),
        dt=float(summary.get("dt", block[1, 0] - block[0, 0])),
        meta=summary.get("meta", {}),
    )


def save_sweep(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(_fmt_row(r[c] for c in SWEEP_COLUMNS))


def load_sweep(path) -> list:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != SWEEP_COLUMNS:
            raise ValueError(f"unexpected sweep columns in {path}")
        return [dict(zip(SWEEP_COLUMNS, map(float, row))) for row in reader]


# -- run-log datasets ----------------------------------------------------------
#
# One directory per run:
#   manifest.json   schema version, shapes, rates, command-step indices
#   proprio.csv     control-rate rows: time + 40 proprio columns
#   mesh.csv        command-rate rows: 128 feature columns
#   commands.csv    command-rate rows: step, time, 4 command, 3 reference
#   frames/NNNNNN.bin  float64 RGB-D tensor per command step


def save_run(out_dir, trace: RolloutTrace, terrain: Heightfield, goal,
             image_shape: tuple = (4, 36, 64), command_every: int = 10,
             nominal_speed: float = 1.0) -> None:
    """Write a rollout as a run log, synthesizing frames from the terrain."""
    out = Path(out_dir)
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    goal = np.asarray(goal, float).reshape(2)
    cmd_steps = list(range(0, len(trace.time), command_every))

    with open(out / "proprio.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time"] + [f"c{i}" for i in range(PROPRIO_DIM)])
        for t, p in zip(trace.time, trace.proprio):
            w.writerow(_fmt_row([t, *p]))

    with open(out / "mesh.csv", "w", newline="") as fm, \
            open(out / "commands.csv", "w", newline="") as fc:
        wm = csv.writer(fm)
        wc = csv.writer(fc)
        wm.writerow([f"m{i}" for i in range(128)])
        wc.writerow(["step", "time", "cmd_vx", "cmd_vy", "cmd_vz", "cmd_h",
                     "ref_vx", "ref_vy", "ref_vz"])
        for j, k in enumerate(cmd_steps):
            x, y = trace.base_position[k, :2]
            wm.writerow(_fmt_row(terrain.mesh_features(x, y)))
            to_goal = goal - trace.base_position[k, :2]
            dist = np.linalg.norm(to_goal)
            d = to_goal / dist if dist > 1e-9 else np.zeros(2)
            ref = np.array([d[0], d[1], 0.0]) * nominal_speed
            wc.writerow([str(k)] + _fmt_row([trace.time[k], *trace.commands[k], *ref]))
            rgbd = terrain.synth_rgbd(x, y, shape=image_shape)
            (frames / f"{j:06d}.bin").write_bytes(
                np.ascontiguousarray(rgbd, dtype="<f8").tobytes())

    manifest = {
        "version": 1,
        "image_shape": list(image_shape),
        "proprio_dim": PROPRIO_DIM,
        "n_control_steps": int(len(trace.time)),
        "command_steps": [int(k) for k in cmd_steps],
        "dt": trace.dt,
        "goal": goal.tolist(),
        "meta": trace.meta,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _read_csv(path, expect_cols: int):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows) if rows else np.empty((0, expect_cols))
    if arr.shape[1] != expect_cols:
        raise ValueError(f"{path}: expected {expect_cols} columns, got {arr.shape[1]}")
    return arr


def load_run(run_dir, proprio_window: int = 16) -> list:
    """Parse one run log into StepSamples.

    Command steps too early for a full proprioceptive window, or whose
    following control step is missing, are dropped.
    """
    run = Path(run_dir)
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} missing")
    manifest = json.loads(manifest_path.read_text())
    shape = tuple(manifest["image_shape"])
    proprio = _read_csv(run / "proprio.csv", 1 + PROPRIO_DIM)[:, 1:]
    mesh = _read_csv(run / "mesh.csv", 128)
    cmds = _read_csv(run / "commands.csv", 9)
    if len(mesh) != len(cmds) or len(cmds) != len(manifest["command_steps"]):
        raise ValueError(f"{run}: command-rate tables disagree in length")

    samples = []
    n_vals = int(np.prod(shape))
    for j, k in enumerate(manifest["command_steps"]):
        if k < proprio_window or k + 1 >= len(proprio):
            continue
        raw = (run / "frames" / f"{j:06d}.bin").read_bytes()
        rgbd = np.frombuffer(raw, dtype="<f8", count=n_vals).reshape(shape)
        obs = Observation(rgbd=rgbd, mesh_features=mesh[j],
                          proprio_window=proprio[k - proprio_window : k])
        samples.append(StepSample(
            observation=obs,
            command=BaseCommand(*cmds[j, 2:6]),
            reference_velocity=cmds[j, 6:9],
            proprio_prev=ProprioState.from_vector(proprio[k]),
            proprio_curr=ProprioState.from_vector(proprio[k + 1]),
        ))
    return samples


def load_dataset(root, proprio_window: int = 16) -> list:
    """All StepSamples under a directory of run logs, with per-run errors."""
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"dataset path {root} does not exist")
    run_dirs = sorted(d for d in root.iterdir() if (d / "manifest.json").exists())
    if not run_dirs:
        run_dirs = [root] if (root / "manifest.json").exists() else []
    if not run_dirs:
        raise ValueError(f"no run logs (manifest.json) found under {root}")
    samples, errors = [], []
    for d in run_dirs:
        try:
            samples.extend(load_run(d, proprio_window))
        except Exception as exc:  # collect per-file diagnostics
            errors.append(f"{d}: {exc}")
    if errors:
        raise ValueError("dataset parse failures:\n" + "\n".join(errors))
    if not samples:
        raise ValueError(f"dataset under {root} produced no usable samples")
    return samples
