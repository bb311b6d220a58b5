"""Command-line entry points: train, infer, build-library, bench-tss,
sweep-deltaq, eval, plot.

Configuration is a plain INI file; every run's JSON report echoes the
fully resolved configuration.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import ModelConfig
from .io import load_sweep, load_trace, save_sweep, save_trace
from .metrics import avg_improvement, mean_jerk, stability_report, success_rate
from .objective import ObjectiveConfig
from .params import layout_diff, load_checkpoint, save_checkpoint
from .pipeline import (
    LIBRARY_SCOPE_PREFIX,
    compare_on_terrain,
    context_dataset,
    fit_scoring_head,
    head_scope,
    scope_values,
    train_checkpoint,
)
from .policy import CommandPolicy
from .selection import (
    ScoringHead,
    SegmentLibrary,
    SelectionConfig,
    benchmark_selection,
    build_library,
)
from .sim.gait import (
    PolicyController,
    RolloutTrace,
    SimConfig,
    deltaq_vibration_sweep,
    run_rollout,
)
from .sim.terrain import TERRAIN_KINDS, TerrainSpec, generate_terrain

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    seed: int = 0
    terrain: TerrainSpec = field(default_factory=lambda: TerrainSpec("rough", 0.7, 0))
    goal: tuple = (4.0, 0.0)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    epochs: int = 20
    lr: float = 2e-3
    batch_size: int = 32
    timeout: float = 10.0
    sweep_speeds: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    sweep_deltaq: tuple = (0.0, 0.0125, 0.025, 0.0375, 0.05)
    sweep_seeds: tuple = (0, 1, 2, 3, 4)
    sweep_duration: float = 5.0

    def as_dict(self) -> dict:
        d = {}
        for key, value in vars(self).items():
            if hasattr(value, "__dataclass_fields__"):
                d[key] = asdict(value)
            elif isinstance(value, tuple):
                d[key] = list(value)
            else:
                d[key] = value
        return d

    def validate(self) -> None:
        self.terrain.validate()
        self.objective.validate()
        self.selection.validate()
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.timeout <= 0 or self.sweep_duration <= 0:
            raise ConfigError("timeout and sweep_duration must be positive")


def _set_fields(obj, section, caster_overrides=None):
    casters = caster_overrides or {}
    for key, raw in section.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown option {key!r} in [{section.name}]")
        current = getattr(obj, key)
        cast = casters.get(key)
        try:
            if cast is not None:
                value = cast(raw)
            elif isinstance(current, bool):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            elif isinstance(current, tuple):
                value = tuple(type(current[0])(v) for v in raw.split(","))
            else:
                value = raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
        setattr(obj, key, value)


def load_config(path=None, seed=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for name in parser.sections():
            if name == "run":
                _set_fields(cfg, parser[name])
            elif name == "terrain":
                sec = parser[name]
                cfg.terrain = TerrainSpec(
                    kind=sec.get("kind", cfg.terrain.kind),
                    difficulty=sec.getfloat("difficulty", cfg.terrain.difficulty),
                    seed=sec.getint("seed", cfg.terrain.seed),
                    extent=cfg.terrain.extent,
                    resolution=sec.getfloat("resolution", cfg.terrain.resolution),
                )
            elif name == "model":
                _set_fields(cfg.model, parser[name])
            elif name == "objective":
                _set_fields(cfg.objective, parser[name])
            elif name == "tss":
                _set_fields(cfg.selection, parser[name])
            elif name == "sim":
                _set_fields(cfg.sim, parser[name])
            else:
                raise ConfigError(f"unknown config section [{name}]")
    if seed is not None:
        cfg.seed = seed
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _write_report(out_dir: Path, name: str, payload: dict, cfg: RunConfig) -> Path:
    payload = dict(payload)
    payload["config"] = cfg.as_dict()
    path = out_dir / name
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return path


def _load_policy(checkpoint_path, cfg: RunConfig) -> tuple:
    vec = load_checkpoint(checkpoint_path)
    meta = vec.meta or {}
    modalities = tuple(meta.get("modalities", ("visual", "mesh", "proprio")))
    policy = CommandPolicy(cfg.model, seed=int(meta.get("seed", cfg.seed)),
                           modalities=modalities)
    expected = policy.get_params()
    if [e.name for e in expected.layout] != [e.name for e in vec.layout] or \
            any(a.shape != b.shape for a, b in zip(expected.layout, vec.layout)):
        raise DataError(layout_diff(vec, expected))
    policy.set_params(vec)
    return policy, vec


# -- subcommands ---------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = Path(args.dataset)
    if not dataset.exists():
        raise DataError(f"dataset path {dataset} does not exist")
    modalities = (("proprio",) if args.modality == "proprio-only"
                  else ("visual", "mesh", "proprio"))
    try:
        policy, vec, report = train_checkpoint(
            dataset, modalities, seed=cfg.seed, cfg=cfg.model,
            objective=cfg.objective, epochs=cfg.epochs, lr=cfg.lr,
            batch_size=cfg.batch_size)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if report.aborted:
        print("training aborted on divergence; last finite parameters kept",
              file=sys.stderr)
    ckpt = out / f"policy_{args.modality}.ckpt"
    save_checkpoint(ckpt, vec)
    _write_report(out, f"train_report_{args.modality}.json",
                  {"report": report.as_dict(), "checkpoint": ckpt.name,
                   "modalities": list(modalities)}, cfg)
    print(f"wrote {ckpt}")
    return EXIT_RUNTIME if report.aborted else EXIT_OK


def cmd_infer(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policy, vec = _load_policy(args.checkpoints[0], cfg)
    if args.no_tss:
        controller = PolicyController(policy)
    else:
        sources = [(f"src{i}", scope_values(load_checkpoint(p)))
                   for i, p in enumerate(args.checkpoints)]
        library = build_library(sources, cfg.selection)
        head = ScoringHead(cfg.selection, seed=cfg.seed)
        offset, _ = head_scope(vec)
        controller = PolicyController(policy, library, head, offset,
                                      selection_period=cfg.sim.selection_period)
    trace = run_rollout(controller, cfg.terrain, cfg.goal, timeout=cfg.timeout,
                        deltaq_target=None, seed=cfg.seed, cfg=cfg.sim,
                        image_shape=cfg.model.image_shape,
                        proprio_window=cfg.model.proprio_window)
    save_trace(out / "trace.csv", trace)
    report = {"goal_reached": bool(trace.goal_reached), "elapsed": trace.elapsed,
              "tss": not args.no_tss}
    if not args.no_tss:
        (out / "selections.json").write_text(
            json.dumps(controller.selection_log, sort_keys=True, indent=1) + "\n")
        report["selections"] = len(controller.selection_log)
    _write_report(out, "infer_report.json", report, cfg)
    print(f"wrote {out / 'trace.csv'}")
    return EXIT_OK


def cmd_build_library(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sources = []
    for path in args.checkpoints:
        if not Path(path).exists():
            raise DataError(f"checkpoint {path} does not exist")
        vec = load_checkpoint(path)
        sid = (vec.meta or {}).get("source_id", Path(path).stem)
        sources.append((sid, scope_values(vec)))
    library = build_library(sources, cfg.selection)
    lib_path = out / "library.bin"
    library.save(lib_path)
    _write_report(out, "library_report.json",
                  {"segments": len(library), "sources": library.source_ids,
                   "skipped": library.skipped_sources,
                   "scope_prefix": LIBRARY_SCOPE_PREFIX}, cfg)
    print(f"wrote {lib_path} ({len(library)} segments)")
    return EXIT_OK


def cmd_bench_tss(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.segments < 1 or args.trials < 1:
        raise ConfigError("--segments and --trials must be positive")
    result = benchmark_selection(args.segments, args.trials, cfg.selection,
                                 seed=cfg.seed)
    _write_report(out, "bench_tss.json", result, cfg)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_sweep_deltaq(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = deltaq_vibration_sweep(cfg.sweep_speeds, cfg.sweep_deltaq,
                                  cfg.sweep_seeds, duration=cfg.sweep_duration,
                                  cfg=cfg.sim)
    csv_path = out / "sweep.csv"
    save_sweep(csv_path, rows)
    svg = out / "sweep.svg"
    _plot_sweep(rows, svg)
    _write_report(out, "sweep_report.json", {"rows": len(rows)}, cfg)
    print(f"wrote {csv_path} and {svg}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces_dir = Path(args.traces)
    if not traces_dir.exists():
        raise DataError(f"traces dir {traces_dir} does not exist")
    paths = sorted(traces_dir.glob("*.csv"))
    if not paths:
        raise DataError(f"no trace CSVs under {traces_dir}")
    groups: dict[str, list[RolloutTrace]] = {}
    dts = set()
    for p in paths:
        trace = load_trace(p)
        dts.add(round(trace.dt, 9))
        groups.setdefault(p.stem.split("_")[0], []).append(trace)
    if len(dts) > 1:
        raise DataError(f"mixed timesteps across traces: {sorted(dts)}")

    perf_rows, stab_rows = [], []
    for label in sorted(groups):
        traces = groups[label]
        jerks = [mean_jerk(t) for t in traces]
        stab = stability_report(traces)
        perf_rows.append({
            "label": label, "runs": len(traces),
            "mean_jerk": float(np.mean(jerks)),
            "success_rate": success_rate(traces),
            "mean_elapsed": float(np.mean([t.elapsed for t in traces])),
        })
        stab_rows.append({"label": label, **{
            f"{k}_{ax}": v for k, d in stab.as_dict().items()
            if isinstance(d, dict) for ax, v in d.items()}})

    summary = {"performance": perf_rows, "stability": stab_rows}
    labels = [r["label"] for r in perf_rows]
    if "cart" in labels and len(labels) > 1:
        cart = next(r for r in perf_rows if r["label"] == "cart")
        baselines = [r for r in perf_rows if r["label"] != "cart"]
        summary["improvement"] = {
            "mean_jerk_pct": avg_improvement(
                [r["mean_jerk"] for r in baselines], cart["mean_jerk"]),
            "baselines": [r["label"] for r in baselines],
        }
    _write_report(out, "eval_report.json", summary, cfg)
    _write_tables(out, perf_rows, stab_rows, summary.get("improvement"))
    print(f"wrote {out / 'eval_report.json'}")
    return EXIT_OK


def _write_tables(out: Path, perf_rows, stab_rows, improvement) -> None:
    lines = ["| label | runs | mean jerk | success rate | mean elapsed |",
             "|---|---|---|---|---|"]
    for r in perf_rows:
        lines.append("| {label} | {runs} | {mean_jerk:.4g} | {success_rate:.3g} "
                     "| {mean_elapsed:.4g} |".format(**r))
    if improvement:
        lines += ["", f"Average improvement (mean jerk) vs "
                      f"{', '.join(improvement['baselines'])}: "
                      f"{improvement['mean_jerk_pct']:.1f}%"]
    lines += ["", "| label | " + " | ".join(k for k in stab_rows[0] if k != "label")
              + " |", "|" + "---|" * len(stab_rows[0])]
    for r in stab_rows:
        lines.append("| " + r["label"] + " | " + " | ".join(
            f"{v:.4g}" for k, v in r.items() if k != "label") + " |")
    (out / "eval_tables.md").write_text("\n".join(lines) + "\n")


def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "contextgait"
    import matplotlib.pyplot as plt
    return plt


def _plot_sweep(rows, path) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 4))
    speeds = sorted({r["speed"] for r in rows})
    for speed in speeds:
        pts = sorted((r["deltaq"], r["rms_total"]) for r in rows
                     if r["speed"] == speed)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"{speed:.1f} m/s")
    ax.set_xlabel("per-step slip magnitude (m)")
    ax.set_ylabel("total RMS vibration (rad/s)")
    ax.legend(title="speed")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _plot_success(report_path, path) -> None:
    plt = _matplotlib()
    payload = json.loads(Path(report_path).read_text())
    rows = payload.get("performance", [])
    if not rows:
        raise DataError(f"{report_path} has no performance rows")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([r["label"] for r in rows], [r["success_rate"] for r in rows])
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.sweep and not args.success:
        raise ConfigError("plot needs --sweep and/or --success inputs")
    if args.sweep:
        if not Path(args.sweep).exists():
            raise DataError(f"sweep file {args.sweep} does not exist")
        _plot_sweep(load_sweep(args.sweep), out / "sweep.svg")
        print(f"wrote {out / 'sweep.svg'}")
    if args.success:
        if not Path(args.success).exists():
            raise DataError(f"eval report {args.success} does not exist")
        _plot_success(args.success, out / "success.svg")
        print(f"wrote {out / 'success.svg'}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contextgait",
        description="Context-aware quadruped locomotion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override seed")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("train", help="train a command policy on run logs")
    common(p)
    p.add_argument("dataset", help="directory of run logs")
    p.add_argument("--modality", choices=("full", "proprio-only"),
                   default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a goal rollout from checkpoints")
    common(p)
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--no-tss", action="store_true",
                   help="disable segment selection")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("build-library", help="cut a segment library")
    common(p)
    p.add_argument("checkpoints", nargs="+")
    p.set_defaults(func=cmd_build_library)

    p = sub.add_parser("bench-tss", help="selection latency benchmark")
    common(p)
    p.add_argument("--segments", type=int, default=132775)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_bench_tss)

    p = sub.add_parser("sweep-deltaq", help="slip-versus-vibration sweep")
    common(p)
    p.set_defaults(func=cmd_sweep_deltaq)

    p = sub.add_parser("eval", help="metric tables from trace CSVs")
    common(p)
    p.add_argument("traces", help="directory of trace CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="SVG plots from sweep/eval outputs")
    common(p)
    p.add_argument("--sweep", default=None, help="sweep CSV to plot")
    p.add_argument("--success", default=None, help="eval report JSON to plot")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
