"""End-to-end acceptance checks, one test per criterion.

Each test prints one PASS/FAIL line (visible with `pytest -s`); tolerances
are pinned in the assertions. Criterion 3's failure-threshold value is a
recorded output of the shipped configuration, not a target.
"""

import contextlib
import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from telebalance.cli import main
from telebalance.plant import PlantParams, PlantState, step_dynamics
from telebalance.sim import (
    ble_scenario,
    compare_scenarios,
    failure_threshold,
    gallop_scenario,
    run_episode,
    run_sweep,
    trace_to_csv,
)
from telebalance.wireless import (
    BLE,
    FORWARD,
    GALLOP,
    ChannelModel,
    ChannelProcess,
    ClockState,
    MacConfig,
    advance_clock,
    build_superframe,
    hop_channel,
    latency_distribution,
    sync_epoch,
    transmit,
)

from oracles import expm_taylor, lagrangian_energy, wip_linear_system


@contextlib.contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number} ({name}): FAIL")
        raise
    print(f"\nACCEPTANCE {number} ({name}): PASS")


def test_criterion_1_latency_anchors():
    with criterion(1, "latency anchors"):
        start = time.perf_counter()

        s = latency_distribution(MacConfig(variant=GALLOP), ChannelModel(),
                                 2000, np.random.default_rng(0), aligned=True)
        assert s.mean == 0.002
        assert s.min == 0.002
        assert s.variance == 0.0

        # BLE one-way latency floor on the scheduled sampling grid
        cfg = MacConfig(variant=BLE)
        proc = ChannelProcess(ChannelModel())
        rng, jit = np.random.default_rng(1), np.random.default_rng(2)
        interval_ns = 7_500_000
        for k in range(1000):
            out = transmit(cfg, None, proc, FORWARD, k * interval_ns, rng, jit)
            assert out.deliver_ns - out.send_ns >= interval_ns
        sb = latency_distribution(cfg, ChannelModel(), 1000,
                                  np.random.default_rng(3), aligned=True)
        assert sb.min >= 0.0075

        assert time.perf_counter() - start < 1.0


def test_criterion_2_qualitative_link_comparison():
    with criterion(2, "deterministic link vs BLE baseline"):
        results = compare_scenarios(
            [gallop_scenario(episode_duration=60.0),
             ble_scenario(episode_duration=60.0)],
            seeds=list(range(10)))
        by_label = {r.label: r for r in results}
        gallop, ble = by_label["gallop"], by_label["ble"]

        assert all(not m.fell for m in gallop.metrics), "gallop episode fell"
        assert gallop.mean("rms_tilt_rate") < ble.mean("rms_tilt_rate")
        assert all(m.latency_variance > 0.0 for m in ble.metrics)
        assert all(m.latency_variance == 0.0 for m in gallop.metrics)
        print(f"\n  rms tilt rate: gallop {gallop.mean('rms_tilt_rate'):.2f} "
              f"vs ble {ble.mean('rms_tilt_rate'):.2f} deg/s over 10 seeds")


def test_criterion_3_loop_budget_sweep():
    with criterion(3, "added-delay sweep"):
        base = gallop_scenario(episode_duration=20.0)
        grid = [0.0, 0.002, 0.005, 0.008, 0.012, 0.016]
        points = run_sweep(base, "mac.extra_delay", grid, seeds_per_point=3)

        assert points[0].fall_fraction == 0.0
        assert points[1].fall_fraction == 0.0  # 2 ms added delay still balances
        assert points[-1].fall_fraction == 1.0  # largest value always falls
        threshold = failure_threshold(points)
        assert threshold is not None

        for prev, cur in zip(points, points[1:]):
            slack = math.sqrt(prev.stderr ** 2 + cur.stderr ** 2)
            assert cur.mean_rms_tilt_rate >= prev.mean_rms_tilt_rate - slack
        print(f"\n  recorded failure threshold: extra_delay = {threshold*1e3:g} ms"
              f" (cyclic latency {2 + 2*threshold*1e3:g} ms)")


def test_criterion_4_plant_oracle_equivalence():
    with criterion(4, "plant vs matrix-exponential and energy oracles"):
        params = PlantParams()
        A, _ = wip_linear_system(params)
        x0 = np.array([0.01, 0.0, 0.0, 0.0])
        s = PlantState(tilt=0.01)
        worst = 0.0
        for k in range(1, 101):
            s = step_dynamics(s, params, 0.0, 1e-3)
            ref = expm_taylor(A * (k * 1e-3)) @ x0
            worst = max(worst, abs(s.tilt - ref[0]) / abs(ref[0]))
        assert worst < 1e-4

        frictionless = PlantParams(viscous_friction=0.0)
        s = PlantState(tilt=0.02)
        e0 = lagrangian_energy(0.02, 0.0, 0.0, frictionless)
        drift = 0.0
        for _ in range(1000):
            s = step_dynamics(s, frictionless, 0.0, 1e-3)
            e = lagrangian_energy(s.tilt, s.tilt_rate, s.wheel_rate, frictionless)
            drift = max(drift, abs(e - e0) / e0)
        assert drift < 1e-6
        print(f"\n  trajectory error {worst:.2e}, energy drift {drift:.2e}")


def test_criterion_5_protocol_invariants():
    with criterion(5, "protocol invariant suite"):
        # FDD band disjointness and TDMA slot disjointness
        for n in (1, 2, 4, 8):
            sf = build_superframe(MacConfig(variant=GALLOP,
                                            slots_per_superframe=n))
            fwd_bands = {s.band for s in sf.slots if s.direction == "forward"}
            fbk_bands = {s.band for s in sf.slots if s.direction == "feedback"}
            assert not (fwd_bands & fbk_bands)
            table = sf.slots_ns()
            for i in range(len(table)):
                for j in range(i + 1, len(table)):
                    assert table[i][1] <= table[j][0] or table[j][1] <= table[i][0]

        # hopping permutation over 37 consecutive slots
        cfg = MacConfig(variant=GALLOP)
        assert sorted(hop_channel(cfg, i) for i in range(37)) == list(range(37))

        # Gilbert-Elliott long-run loss rate within 1% of the analytic value
        model = ChannelModel(p_good_to_bad=0.05, p_bad_to_good=0.2,
                             loss_good=0.0, loss_bad=1.0)
        proc = ChannelProcess(model)
        rng = np.random.default_rng(2024)
        n_slots = 1_000_000
        lost = 0
        for i in range(n_slots):
            if rng.random() < proc.loss_probability(0, i, rng):
                lost += 1
        analytic = model.stationary_loss_rate()
        assert abs(lost / n_slots - analytic) / analytic < 0.01

        # clock offset bound at every sampled time
        mac = MacConfig(variant=GALLOP)
        clk = ClockState(drift_rate=mac.clock_drift_ppm)
        rng = np.random.default_rng(7)
        for _ in range(100):
            clk = sync_epoch(clk, mac, rng)
            for _ in range(10):
                clk = advance_clock(clk, mac.sync_epoch_period / 10)
                bound = mac.sync_error_bound + mac.clock_drift_ppm * 1e-6 \
                    * (clk.true_time - clk.last_sync_time)
                assert abs(clk.local_offset) <= bound + 1e-15


def test_criterion_6_determinism(tmp_path):
    with criterion(6, "byte-level determinism"):
        cfg_text = (
            "[scenario]\nepisode_duration = 5 s\ninitial_tilt = 2 deg\n"
            "seed = 11\n\n[mac]\nvariant = gallop\nclock_drift_ppm = 0\n"
            "sync_error_bound = 0 us\n")
        cfg_path = tmp_path / "episode.cfg"
        cfg_path.write_text(cfg_text, encoding="utf-8")

        hashes = []
        for run_dir in ("a", "b"):
            out = tmp_path / run_dir
            assert main(["run", str(cfg_path), "--out", str(out)]) == 0
            hashes.append(hashlib.sha256(
                (out / "trace.csv").read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]

        base = gallop_scenario(episode_duration=2.0)
        grid = [0.0, 0.004, 0.016]
        sequential = run_sweep(base, "mac.extra_delay", grid, seeds_per_point=3)
        concurrent = run_sweep(base, "mac.extra_delay", grid, seeds_per_point=3,
                               workers=4)
        assert sequential == concurrent

        # an episode run inside a worker thread is byte-identical too
        direct = trace_to_csv(run_episode(base)[0])
        with ThreadPoolExecutor(max_workers=2) as pool:
            pooled = trace_to_csv(pool.submit(run_episode, base).result()[0])
        assert direct == pooled
