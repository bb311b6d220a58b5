"""End-to-end acceptance criteria for the locomotion controller.

Each test covers one numbered acceptance criterion and records a
PASS/FAIL line (echoed in the terminal summary by conftest.py) before
asserting.  The heavyweight trained-pipeline artifacts used by criteria
7 and 8 are built once per session.
"""
import time

import numpy as np
import pytest

from contextgait.encoders import PROPRIO_DIM, Observation, ProprioState, reduced_config
from contextgait.metrics import avg_improvement, distance_within, mean_jerk
from contextgait.objective import (
    BaseCommand,
    ObjectiveConfig,
    StepSample,
    batch_loss,
    delta_q,
    effort_term,
    slip_term,
    total_objective,
    train_policy,
    velocity_term,
)
from contextgait.params import collect_gradient, flatten, load_flat
from contextgait.pipeline import (
    compare_on_terrain,
    context_dataset,
    collect_runs,
    fit_scoring_head,
    head_scope,
    scope_values,
    selection_source_rate,
    train_checkpoint,
    two_source_library,
)
from contextgait.policy import CommandPolicy
from contextgait.selection import (
    ScoringHead,
    SelectionConfig,
    act_with_selection,
    apply_segment,
    benchmark_selection,
    build_library,
    restore_segment,
    select_segment,
)
from contextgait.io import save_sweep
from contextgait.sim.gait import (
    ConstantController,
    RolloutTrace,
    deltaq_vibration_sweep,
    run_rollout,
)
from contextgait.sim.terrain import TerrainSpec, generate_terrain

RESULTS = []


def report(num, name, ok, detail):
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} -- {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def proprio(slip=None, stance=(1, 1, 1, 1), torques=None):
    return ProprioState(
        torques if torques is not None else np.zeros(12),
        np.zeros(12),
        slip if slip is not None else np.zeros((4, 3)),
        np.asarray(stance, bool),
    )


def make_sample(cfg, seed=0, ref=(0.0, 0.0, 0.0)):
    rng = np.random.default_rng(seed)
    obs = Observation(
        rgbd=np.abs(rng.standard_normal(cfg.image_shape)),
        mesh_features=rng.standard_normal(cfg.mesh_dim) * 0.05,
        proprio_window=rng.standard_normal((cfg.proprio_window, PROPRIO_DIM)) * 0.1,
    )
    return StepSample(obs, BaseCommand(0.0, 0.0, 0.0, 0.5),
                      np.asarray(ref, float), proprio(), proprio())


def spearman(x, y):
    def ranks(v):
        r = np.empty(len(v))
        r[np.argsort(v, kind="stable")] = np.arange(len(v))
        return r
    return float(np.corrcoef(ranks(np.asarray(x)), ranks(np.asarray(y)))[0, 1])


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Full offline pipeline: runs -> two checkpoints -> library -> head."""
    td = tmp_path_factory.mktemp("accept_runs")
    collect_runs(td, n_runs=6, seed=3)
    pol_full, vec_full, _ = train_checkpoint(td, "full", seed=0, epochs=40)
    _, vec_prop, _ = train_checkpoint(td, "proprio-only", seed=1, epochs=40)
    library = two_source_library(vec_full, vec_prop)
    contexts, labels = context_dataset(pol_full, td)
    pair = np.arange(len(labels)) // 2   # contexts come in (full, blanked) pairs
    train_mask = pair % 2 == 0
    head, _ = fit_scoring_head(library, contexts[train_mask], labels[train_mask])
    offset, _ = head_scope(vec_full)
    held_contexts = contexts[~train_mask]
    held_labels = labels[~train_mask]
    return {
        "policy": pol_full, "library": library, "head": head,
        "offset": offset, "held_contexts": held_contexts,
        "held_labels": held_labels,
    }


class TestCriterion1:
    def test_deltaq_vibration_ranking(self):
        # [DERIVED] injected slip is the only stochastic disturbance on flat
        # ground, so commanded slip magnitude must rank monotonically with
        # measured orientation vibration at every speed.
        speeds = [0.2, 0.5, 0.8, 1.1, 1.4]
        grid = [0.0, 0.01, 0.02, 0.04, 0.08]
        t0 = time.perf_counter()
        rows = deltaq_vibration_sweep(speeds, grid, range(5))
        elapsed = time.perf_counter() - t0
        rho = spearman([r["deltaq"] for r in rows],
                       [r["rms_total"] for r in rows])
        min_ok = all(
            min((r for r in rows if r["speed"] == s),
                key=lambda r: r["rms_total"])["deltaq"] == 0.0
            for s in speeds)
        ok = rho >= 0.9 and min_ok and elapsed <= 120.0
        report(1, "slip-vibration ranking", ok,
               f"spearman={rho:.3f} (>=0.9), min-at-zero={min_ok}, "
               f"elapsed={elapsed:.1f}s (<=120s)")


class TestCriterion2:
    def test_selection_latency(self):
        # [DERIVED] selection over the full-size library must stay real-time.
        stats = benchmark_selection(132775, trials=20)
        ok = stats["mean_ms"] <= 400.0
        report(2, "selection latency", ok,
               f"library=132775, mean={stats['mean_ms']:.2f}ms (<=400ms), "
               f"p95={stats['p95_ms']:.2f}ms")


class TestCriterion3:
    def test_gradients_match_finite_differences(self):
        # [DERIVED] analytic gradients of the training loss agree with
        # central finite differences at 1e-4 relative tolerance.
        cfg = reduced_config()
        policy = CommandPolicy(cfg, seed=0)
        vec = flatten(policy)
        samples = [make_sample(cfg, seed=s, ref=(0.4, 0.0, 0.0))
                   for s in range(6)]
        obj = ObjectiveConfig()

        def loss_at(values):
            v2 = vec.copy()
            v2.values = values
            load_flat(policy, v2)
            return float(batch_loss(policy, samples, obj).data)

        t0 = time.perf_counter()
        policy.zero_grad()
        batch_loss(policy, samples, obj).backward()
        grad = collect_gradient(policy).values
        rng = np.random.default_rng(42)
        probes = rng.choice(vec.values.size, 20, replace=False)
        h = 1e-6
        errs = []
        for i in probes:
            up, dn = vec.values.copy(), vec.values.copy()
            up[i] += h
            dn[i] -= h
            fd = (loss_at(up) - loss_at(dn)) / (2 * h)
            errs.append(abs(fd - grad[i]) / max(1.0, abs(grad[i])))
        load_flat(policy, vec)
        elapsed = time.perf_counter() - t0
        worst = max(errs)
        ok = (vec.values.size <= 5000 and worst <= 1e-4
              and elapsed <= 60.0)
        report(3, "gradient check", ok,
               f"params={vec.values.size} (<=5000), max-rel-err={worst:.2e} "
               f"(<=1e-4), probes=20, elapsed={elapsed:.1f}s (<=60s)")


class TestCriterion4:
    def test_segment_counts_and_apply_restore(self):
        # [DERIVED] with stride floor(l/2), a source of n values yields
        # floor((n-l)/floor(l/2)) + 1 segments of length l (0 if l > n).
        cfg = SelectionConfig()
        ok = True
        details = []
        rng = np.random.default_rng(0)
        for n in (10, 50, 200):
            lib = build_library([("src", rng.standard_normal(n))], cfg)
            total = 0
            for length in range(cfg.l_min, cfg.l_max + 1):
                if length > n:
                    expect = 0
                else:
                    expect = (n - length) // (length // 2) + 1
                got = int(np.sum(lib.seg_len == length))
                ok = ok and got == expect
                total += got
            ok = ok and total == len(lib)
            details.append(f"n={n}:{len(lib)}")

        lib = build_library([("src", rng.standard_normal(200))], cfg)
        flat = rng.standard_normal(320)
        before = flat.tobytes()
        cycles_ok = True
        for i in rng.integers(0, len(lib), 100):
            seg = lib.segment(int(i))
            prior = apply_segment(flat, seg, offset=40)
            a = 40 + seg.start
            cycles_ok = cycles_ok and np.array_equal(
                flat[a:a + seg.length], seg.values)
            restore_segment(flat, seg, prior, offset=40)
        cycles_ok = cycles_ok and flat.tobytes() == before
        ok = ok and cycles_ok
        report(4, "segment library", ok,
               f"counts[{', '.join(details)}], 100 apply/restore cycles "
               f"bitwise={cycles_ok}")


class TestCriterion5:
    def test_objective_identities(self):
        cfg = ObjectiveConfig()
        # [DERIVED] exact tracking makes the shaping term exp(0) * beta_v.
        jv = velocity_term(BaseCommand(0.3, -0.2, 0.1, 0.5),
                           (0.3, -0.2, 0.1), cfg)
        ok_v = jv == cfg.beta_v
        # [DERIVED] one stance leg slipping (0.03, 0.04, 0) gives the
        # 3-4-5 norm 0.05.
        slip = np.zeros((4, 3))
        slip[0] = (0.03, 0.04, 0.0)
        dq = delta_q(proprio(), proprio(slip=slip, stance=(1, 0, 0, 0)))
        ok_q = abs(dq - 0.05) < 1e-12
        # [DERIVED] swing legs are masked out entirely.
        dq_swing = delta_q(proprio(), proprio(slip=slip, stance=(0, 0, 0, 0)))
        ok_s = dq_swing == 0.0
        # [DERIVED] the total objective is the plain sum of its three terms.
        sample = make_sample(reduced_config(), seed=1, ref=(0.2, 0.0, 0.0))
        sample = StepSample(sample.observation,
                            BaseCommand(0.5, 0.1, 0.0, 0.4),
                            sample.reference_velocity,
                            proprio(),
                            proprio(slip=slip, torques=np.full(12, 2.0)))
        total = total_objective(sample, cfg)
        parts = (velocity_term(sample.command, sample.reference_velocity, cfg)
                 + slip_term(sample.proprio_prev, sample.proprio_curr, cfg)
                 + effort_term(sample.proprio_curr.joint_torques, cfg))
        ok_t = total == parts
        ok = ok_v and ok_q and ok_s and ok_t
        report(5, "objective identities", ok,
               f"J_v=beta_v:{ok_v}, 3-4-5 dq=0.05:{ok_q}, "
               f"all-swing dq=0:{ok_s}, sum-of-terms:{ok_t}")


class TestCriterion6:
    def test_metric_oracles(self):
        def trace(t, pos):
            n = len(t)
            return RolloutTrace(t, pos, np.zeros((n, 3)), np.zeros((n, 3)),
                                np.zeros((n, 40)), np.zeros((n, 4)),
                                False, float(t[-1]), float(t[1] - t[0]))
        # [DERIVED] x = sin(t) has jerk -cos(t); mean |cos| over whole
        # periods is 2/pi.
        t = np.arange(0, 4 * np.pi, 0.01)
        pos = np.zeros((len(t), 3))
        pos[:, 0] = np.sin(t)
        jerk = mean_jerk(trace(t, pos))
        target = 2.0 / np.pi
        ok_j = abs(jerk - target) / target <= 0.01
        # [DERIVED] constant velocity has zero jerk.
        pos_lin = np.zeros((len(t), 3))
        pos_lin[:, 0] = 0.7 * t
        ok_c = mean_jerk(trace(t, pos_lin)) <= 1e-9
        # [PAPER] improvement of 45.5 over baselines {180.3, 201.2, 73.3}.
        imp = avg_improvement([180.3, 201.2, 73.3], 45.5)
        ok_i = abs(imp - 63.4) <= 0.1
        # [DERIVED] arc length of a unit circle parameterised by arc length.
        tc = np.arange(0, 10.0 + 0.01, 0.01)
        pc = np.zeros((len(tc), 3))
        pc[:, 0] = np.cos(tc)
        pc[:, 1] = np.sin(tc)
        dist = distance_within(trace(tc, pc), 10.0)
        ok_d = abs(dist - 10.0) / 10.0 <= 0.005
        ok = ok_j and ok_c and ok_i and ok_d
        report(6, "metric oracles", ok,
               f"sin-jerk={jerk:.4f} vs 2/pi={target:.4f} (1%), "
               f"const-vel-jerk=0:{ok_c}, improvement={imp:.2f} (63.4+-0.1), "
               f"circle-10m={dist:.4f} (0.5%)")


class TestCriterion7:
    def test_rough_terrain_comparison(self, trained):
        # [DERIVED] on rough 0.7 terrain the adaptive policy must cut RMS
        # orientation vibration by >= 20% versus a fixed-command baseline
        # at matched speed (+-10%) without arriving > 10% later.
        t0 = time.perf_counter()
        result = compare_on_terrain(trained["policy"], trained["library"],
                                    trained["head"], trained["offset"],
                                    seeds=range(20))
        elapsed = time.perf_counter() - t0
        s = result.summary()
        speed_ratio = s["policy_speed_mean"] / s["baseline_speed_mean"]
        time_ratio = s["policy_elapsed_mean"] / s["baseline_elapsed_mean"]
        ok = (s["rms_reduction_pct"] >= 20.0
              and abs(speed_ratio - 1.0) <= 0.10
              and time_ratio <= 1.10
              and elapsed <= 600.0)
        report(7, "rough-terrain vibration", ok,
               f"rms-reduction={s['rms_reduction_pct']:.1f}% (>=20%), "
               f"speed-ratio={speed_ratio:.3f} (+-10%), "
               f"time-ratio={time_ratio:.3f} (<=1.10), seeds=20, "
               f"elapsed={elapsed:.0f}s (<=600s)")


class TestCriterion8:
    def test_heldout_source_selection(self, trained):
        # [DERIVED] blanked-exteroception contexts held out from head
        # training must still select proprio-only segments >= 80% of the
        # time.
        held = trained["held_contexts"][trained["held_labels"] == 1]
        rate = selection_source_rate(trained["library"], trained["head"],
                                     held, "proprio-only")
        ok = rate >= 0.8
        report(8, "held-out source selection", ok,
               f"proprio-only rate={rate:.2f} (>=0.8) over {len(held)} "
               f"held-out contexts")


class TestCriterion9:
    def test_bitwise_determinism(self, tmp_path):
        # [DERIVED] same seeds, same bytes: training, rollouts, sweeps,
        # and segment selection are all bitwise repeatable.
        cfg = reduced_config()
        samples = [make_sample(cfg, seed=s, ref=(0.4, 0.0, 0.0))
                   for s in range(8)]
        obj = ObjectiveConfig()
        vecs = []
        for _ in range(2):
            policy = CommandPolicy(cfg, seed=5)
            vec, _ = train_policy(policy, samples, obj, epochs=2, seed=5,
                                  batch_size=4)
            vecs.append(vec.values.tobytes())
        ok_ckpt = vecs[0] == vecs[1]

        terrain = generate_terrain(TerrainSpec("rough", 0.5, 11))
        traces = [run_rollout(ConstantController(BaseCommand(0.6, 0, 0, 0.5)),
                              terrain, goal=(3.0, 0.0), timeout=4.0,
                              deltaq_target=0.02, seed=11)
                  for _ in range(2)]
        ok_trace = all(
            getattr(traces[0], f).tobytes() == getattr(traces[1], f).tobytes()
            for f in ("time", "base_position", "base_orientation",
                      "orientation_rates", "proprio", "commands"))

        paths = []
        for k in range(2):
            rows = deltaq_vibration_sweep([0.5], [0.0, 0.02], [0], duration=1.0)
            path = tmp_path / f"sweep{k}.csv"
            save_sweep(path, rows)
            paths.append(path.read_bytes())
        ok_sweep = paths[0] == paths[1]

        policy = CommandPolicy(cfg, seed=5)
        vec = policy.get_params()
        sel_cfg = SelectionConfig(context_dim=cfg.context_dim)
        library = build_library([("full", scope_values(vec))], sel_cfg)
        head = ScoringHead(sel_cfg, seed=0)
        obs = make_sample(cfg, seed=9).observation
        offset, _ = head_scope(vec)
        logs = []
        for _ in range(2):
            cmd, seg, score = act_with_selection(policy, library, obs, head,
                                                 offset)
            logs.append((seg.source_id, seg.start, seg.length,
                         np.float64(score).tobytes(),
                         cmd.as_array().tobytes()))
        ok_sel = logs[0] == logs[1]

        ok = ok_ckpt and ok_trace and ok_sweep and ok_sel
        report(9, "bitwise determinism", ok,
               f"checkpoint:{ok_ckpt}, trace:{ok_trace}, sweep-csv:{ok_sweep}, "
               f"selection-log:{ok_sel}")
