"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kittensim import grid, layouts
from kittensim.kernels import (
    AttentionConfig,
    GemmConfig,
    RotaryConfig,
    attention_fwd_kernel,
    attention_globals,
    gemm_globals,
    gemm_kernel,
    gemm_latency_profile,
    make_inputs,
    rotary_globals,
    rotary_kernel,
    run_kernel,
)
from kittensim.lcsf import PipelineConfig, execute_functional, simulate_timed, validate_trace
from kittensim.machine import MAX_TERMS, WorkProfile, estimate_cost, preset_h100
from kittensim.scenarios import (
    load_scenario,
    run_l2_study,
    run_occupancy_study,
    run_persistent_study,
)

acceptance = pytest.mark.acceptance
SWIZZLES = (layouts.SwizzleMode.SW32, layouts.SwizzleMode.SW64, layouts.SwizzleMode.SW128)


@acceptance(1, "bank-conflict table 8/4/2/1")
def test_ac01_conflict_table():
    t0 = time.perf_counter()
    got = {}
    for mode in (layouts.SwizzleMode.NAIVE,) + SWIZZLES:
        lay = layouts.SharedLayout(32, 64, 2, mode)
        assert lay.row_pitch == 128
        got[mode.value] = layouts.analyze_conflicts(lay, layouts.TensorCoreSegments()).max_way
    assert got == {"naive": 8, "sw32": 4, "sw64": 2, "sw128": 1}
    assert time.perf_counter() - t0 < 1.0


@acceptance(2, "swizzled layouts are permutations and keep 16-byte alignment")
def test_ac02_permutation_and_alignment():
    t0 = time.perf_counter()
    checked = 0
    for rows, cols, eb in itertools.product((16, 32, 64, 128), (16, 32, 64, 128), (2, 4)):
        naive = layouts.offset_table(layouts.SharedLayout(rows, cols, eb))
        aligned = naive % 16 == 0
        for mode in SWIZZLES:
            try:
                lay = layouts.SharedLayout(rows, cols, eb, mode)
            except layouts.UnsupportedTileError:
                continue
            assert layouts.check_bijective(lay), lay
            table = layouts.offset_table(lay)
            assert np.all(table[aligned] % 16 == 0), lay
            checked += 1
        # row-XOR permutes the footprint but rewrites bits 2-3, so no alignment claim
        assert layouts.check_bijective(layouts.SharedLayout(rows, cols, eb, layouts.SwizzleMode.ROW_XOR))
    assert checked > 0
    assert time.perf_counter() - t0 < 10.0


@acceptance(3, "select_swizzle picks the widest valid mode")
def test_ac03_select_swizzle():
    for eb in (2, 4):
        for width, mode in ((32, "sw32"), (64, "sw64"), (128, "sw128")):
            assert layouts.select_swizzle(16, width // eb, eb).value == mode
    with pytest.raises(layouts.UnsupportedTileError):
        layouts.select_swizzle(16, 24, 2)
    with pytest.raises(layouts.UnsupportedTileError):
        layouts.select_swizzle(16, 12, 4)


@acceptance(4, "kernels match float64 oracles over 20 seeds")
def test_ac04_kernel_oracles():
    cases = [(GemmConfig(128, 128, 128), 1e-4),
             (AttentionConfig(1, 1, 384, 64), 1e-5),
             (AttentionConfig(1, 1, 384, 128), 1e-5),
             (RotaryConfig(1, 1, 64, 128), 1e-5)]
    for cfg, tol in cases:
        for seed in range(20):
            got, ref, _ = run_kernel(cfg, make_inputs(cfg, seed), seed=seed)
            err = float(np.max(np.abs(got - ref)))
            assert err <= tol, (cfg, seed, err)


@acceptance(5, "online softmax is invariant to KV chunk count")
def test_ac05_chunking():
    for d in (64, 128):
        inputs = make_inputs(AttentionConfig(1, 1, 384, d), 0)
        outs = [run_kernel(AttentionConfig(1, 1, 384, d, kv_rows=384 // chunks), inputs)[0]
                for chunks in (1, 2, 3)]
        for o in outs[1:]:
            assert np.max(np.abs(o - outs[0])) <= 1e-5


def _kernel_runs():
    g_cfg = GemmConfig(128, 256, 128, num_sms=2)
    a_cfg = AttentionConfig(1, 2, 384, 64)
    r_cfg = RotaryConfig(2, 2, 64, 64)
    gi, ai, ri = make_inputs(g_cfg, 0), make_inputs(a_cfg, 0), make_inputs(r_cfg, 0)
    return {
        "gemm": (lambda: gemm_kernel(g_cfg), lambda: gemm_globals(gi["A"], gi["B"], g_cfg), "C"),
        "attention": (lambda: attention_fwd_kernel(a_cfg),
                      lambda: attention_globals(ai["Q"], ai["K"], ai["V"], a_cfg), "O"),
        "rotary": (lambda: rotary_kernel(r_cfg),
                   lambda: rotary_globals(ri["x"], ri["cos"], ri["sin"], r_cfg), "o"),
    }


@acceptance(6, "50 random interleavings: identical outputs, no slot overlaps")
def test_ac06_interleavings():
    for name, (kernel, globals_, out) in _kernel_runs().items():
        ref = None
        orders = set()
        for seed in range(50):
            g = globals_()
            res = execute_functional(kernel(), None, g, seed=seed, validate=False)
            report = validate_trace(res.trace)
            assert report.overlaps == 0 and report.violations == [], (name, seed)
            data = g[out].data.copy()
            if ref is None:
                ref = data
            assert np.array_equal(data, ref), (name, seed)
            orders.add(tuple((e.worker, e.event, e.ring_iter) for e in res.trace))
        assert len(orders) > 1, name


@acceptance(7, "throughput rises strictly with pipeline stages 1..4, ratio >= 2")
def test_ac07_pipeline_depth():
    cfg = GemmConfig(4096, 4096, 4096)
    prof = gemm_latency_profile(preset_h100(), cfg)
    kernel = gemm_kernel(cfg)
    tps = [simulate_timed(kernel, PipelineConfig(cfg.m_block, 1, s), prof, 64).throughput
           for s in (1, 2, 3, 4)]
    assert all(b > a for a, b in zip(tps, tps[1:])), tps
    assert tps[3] / tps[0] >= 2.0


@acceptance(8, "occupancy curve is unimodal with an interior max; LCSF dominates")
def test_ac08_occupancy():
    res = run_occupancy_study(load_scenario("occupancy-contention"))
    assert res["lcsf_unimodal"] and res["lcsf_interior_max"] and res["lcsf_dominates"]


@acceptance(9, "grid order: supergroup halves GEMM traffic; (N,H,B) beats (B,H,N)")
def test_ac09_grid_order():
    sec = load_scenario("gemm-l2")["l2"]
    a_bytes = sec["m"] * sec["k"] * sec["elem_bytes"]
    b_bytes = sec["k"] * sec["n"] * sec["elem_bytes"]
    assert min(a_bytes, b_bytes) >= 4 * sec["capacity_bytes"]
    rm, sg = run_l2_study(sec)["orders"]
    assert (rm["order"], sg["order"]) == ("row_major", "supergroup_8")
    assert sg["hbm_bytes_fetched"] <= 0.5 * rm["hbm_bytes_fetched"]
    nhb, bhn = run_l2_study(load_scenario("attention-l2")["l2"])["orders"]
    assert (nhb["order"], bhn["order"]) == ("attention_NHB", "attention_BHN")
    assert nhb["hbm_bytes_fetched"] < bhn["hbm_bytes_fetched"]


@acceptance(10, "persistent grid never loses; 133 tasks on 132 SMs is two waves")
def test_ac10_persistence():
    sc = load_scenario("persistent-ksweep")
    study = run_persistent_study(sc["persistent"], preset_h100())
    assert study["all_persistent_le_relaunch"]
    adv = [r["advantage"] for r in study["rows"]]
    assert all(a > b for a, b in zip(adv, adv[1:]))  # shorter tasks, larger advantage
    t, setup = 1.0, 0.1
    res = grid.persistent_assign(133, 132, t, setup)
    assert res.waves == 2
    assert res.makespan_persistent == setup + 2 * t
    assert res.makespan_relaunch == (setup + t) + (setup + t)


@acceptance(11, "supergroup enumeration matches hand traces; permutation up to 16")
def test_ac11_supergroup():
    assert grid.supergroup_order(4, 2, 2) == [(0, 0), (1, 0), (0, 1), (1, 1),
                                              (2, 0), (3, 0), (2, 1), (3, 1)]
    assert grid.supergroup_order(3, 2, 2) == [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1)]
    for r, c, s in itertools.product(range(1, 17), repeat=3):
        order = grid.supergroup_order(r, c, s)
        assert len(order) == r * c and len(set(order)) == r * c
        assert all(0 <= i < r and 0 <= j < c for i, j in order)


FIELDS = ["bytes_hbm", "bytes_l2", "bytes_l1", "bytes_shared", "ops_tensor", "ops_alu",
          "ops_fma", "ops_xu", "num_setups", "num_syncs"]
_amount = st.one_of(st.just(0.0), st.floats(0, 1e6), st.floats(0, 1e18))
_profiles = st.builds(WorkProfile, **{f: _amount for f in FIELDS})


@acceptance(12, "cost model properties over 1000 random profiles")
@settings(max_examples=1000, deadline=None, derandomize=True)
@given(_profiles, st.sampled_from(FIELDS), st.floats(0, 1e18), st.floats(1.5, 8.0))
def test_ac12_cost_properties(profile, field, extra, scale):
    params = preset_h100()
    c = estimate_cost(profile, params)
    # max + overhead identity
    assert c.overall == c[c.bound_by] + c["Setup"] + c["Sync"]
    assert all(c[c.bound_by] >= c[t] for t in MAX_TERMS)
    # monotonicity
    bigger = WorkProfile(**{**profile.__dict__, field: getattr(profile, field) + extra})
    assert estimate_cost(bigger, params).overall >= c.overall
    # scale covariance
    s = estimate_cost(profile, params.scaled(scale))
    assert s["Setup"] == c["Setup"] and s["Sync"] == c["Sync"]
    assert s[s.bound_by] == pytest.approx(c[c.bound_by] / scale, rel=1e-12, abs=0)
