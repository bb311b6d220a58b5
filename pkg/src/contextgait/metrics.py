"""Quantitative rollout metrics: jerk, stability statistics, success
rates, traveled distance, and relative-improvement summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sim.gait import RolloutTrace

AXES = ("roll", "pitch", "yaw")


@dataclass
class StabilityReport:
    """Per-axis magnitude and dispersion of base orientation and rates."""

    mean_angle: dict       # axis -> mean |angle| (rad)
    var_angle: dict        # axis -> variance of the de-meaned signal (rad^2)
    mean_rate: dict        # axis -> mean |rate| (rad/s)
    var_rate: dict         # axis -> rate variance ((rad/s)^2)
    pooling: str = "concatenate"

    def as_dict(self) -> dict:
        return {"mean_angle": self.mean_angle, "var_angle": self.var_angle,
                "mean_rate": self.mean_rate, "var_rate": self.var_rate,
                "pooling": self.pooling}


@dataclass
class PerformanceReport:
    mean_jerk: float
    time_to_goal: float | None
    distance_10s: float | None
    success: bool

    def as_dict(self) -> dict:
        return {"mean_jerk": self.mean_jerk, "time_to_goal": self.time_to_goal,
                "distance_10s": self.distance_10s, "success": self.success}


def mean_jerk(trace: RolloutTrace) -> float:
    """Mean norm of the third central difference of base position / dt^3."""
    p = trace.base_position
    if len(p) < 5:
        raise ValueError(f"need at least 5 samples for jerk, got {len(p)}")
    d3 = (p[4:] - 2 * p[3:-1] + 2 * p[1:-3] - p[:-4]) / (2 * trace.dt**3)
    return float(np.mean(np.linalg.norm(d3, axis=1)))


def _pool(traces, attr):
    return np.concatenate([getattr(t, attr) for t in traces], axis=0)


def stability_report(traces, pooling: str = "concatenate") -> StabilityReport:
    """Angle/rate statistics pooled over traces.

    Pitch is de-meaned before the magnitude statistic (its equilibrium
    tracks the terrain slope); roll and yaw use equilibrium zero.
    Variances are of the signed, de-meaned signal.
    """
    if not traces:
        raise ValueError("no traces")
    if pooling == "concatenate":
        groups = [traces]
    elif pooling == "per-run":
        groups = [[t] for t in traces]
    else:
        raise ValueError(f"unknown pooling {pooling!r}")

    accs = []
    for grp in groups:
        ang = _pool(grp, "base_orientation")
        rate = _pool(grp, "orientation_rates")
        ang = ang.copy()
        ang[:, 1] -= ang[:, 1].mean()  # pitch equilibrium offset
        accs.append((
            np.mean(np.abs(ang), axis=0),
            np.var(ang - ang.mean(axis=0), axis=0),
            np.mean(np.abs(rate), axis=0),
            np.var(rate - rate.mean(axis=0), axis=0),
        ))
    ma, va, mr, vr = (np.mean([a[i] for a in accs], axis=0) for i in range(4))
    return StabilityReport(
        dict(zip(AXES, ma.tolist())), dict(zip(AXES, va.tolist())),
        dict(zip(AXES, mr.tolist())), dict(zip(AXES, vr.tolist())),
        pooling,
    )


def success_rate(traces) -> float:
    if not traces:
        raise ValueError("no traces")
    return float(np.mean([bool(t.goal_reached) for t in traces]))


def avg_improvement(baseline_means, target_mean: float) -> float:
    """Mean percent reduction of ``target_mean`` relative to each baseline."""
    baseline_means = np.asarray(baseline_means, float)
    if baseline_means.size == 0:
        raise ValueError("no baselines")
    if np.any(baseline_means == 0.0):
        raise ValueError("zero baseline mean")
    return float(np.mean((baseline_means - target_mean) / baseline_means) * 100.0)


def distance_within(trace: RolloutTrace, window: float) -> float:
    """Arc length of the base path over the first ``window`` seconds."""
    if trace.time[-1] + 1e-9 < window:
        raise ValueError(
            f"trace spans {trace.time[-1]:.3f} s, shorter than window {window} s"
        )
    mask = trace.time <= window + 1e-9
    p = trace.base_position[mask]
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def performance_report(trace: RolloutTrace, window: float = 10.0) -> PerformanceReport:
    dist = distance_within(trace, window) if trace.time[-1] + 1e-9 >= window else None
    return PerformanceReport(
        mean_jerk=mean_jerk(trace),
        time_to_goal=trace.elapsed if trace.goal_reached else None,
        distance_10s=dist,
        success=bool(trace.goal_reached),
    )
