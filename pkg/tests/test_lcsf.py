from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kittensim import tiles as tk
from kittensim.kernels import GemmConfig, gemm_globals, gemm_kernel
from kittensim.lcsf import (
    INPUTS_FINISHED,
    OUTPUTS_ARRIVED,
    OUTPUTS_FINISHED,
    Barrier,
    ContractViolation,
    DeadlockError,
    KernelSpec,
    LatencyProfile,
    PipelineConfig,
    PipelineConfigError,
    ResourceModel,
    execute_functional,
    occupancy_sweep,
    simulate_timed,
    validate_trace,
)
from kittensim.tiles import DType, GlobalTensor, SharedTileHandle, Tile

T = 16


def accumulate_kernel(n_tiles: int, *, with_store=False, independent=False, arrive_times=1,
                      blocks=1) -> KernelSpec:
    """Each block sums n_tiles 16x16 tiles of X; with a store stage it also
    writes 2*X tile by tile to Y."""

    def common_setup(args):
        return n_tiles if args.task_iter == 0 else -1

    def load(args):
        tk.transfer(args.globals["X"], args.input, (0, args.block, args.iter, 0))

    def consumer_setup(args):
        return Tile.zeros(T, T)

    def compute(args):
        x = Tile.zeros(T, T)
        tk.transfer(args.input, x)
        if args.worker == 0 or independent:
            args.state = tk.add(args.state, x)
        if with_store and (args.worker == 0 or independent):
            tk.transfer(tk.mul(x, 2.0), args.output)
        for _ in range(arrive_times):
            args.arrive(INPUTS_FINISHED)
        if with_store:
            args.arrive(OUTPUTS_ARRIVED)

    def finish(args):
        if independent:
            with args.globals["lock"]:
                args.globals["partials"].append(args.state.data.copy())
        elif args.worker == 0:
            tk.transfer(args.state, args.globals["S"], (0, args.block, 0, 0))

    def store(args):
        tk.transfer(args.output, args.globals["Y"], (0, args.block, args.iter, 0))
        args.arrive(OUTPUTS_FINISHED)

    return KernelSpec(
        name="accumulate", grid=lambda g, c: blocks, common_setup=common_setup, load=load,
        compute=compute, make_input_block=lambda c: SharedTileHandle(T, T, DType.FP32),
        consumer_setup=consumer_setup, finish=finish,
        store=store if with_store else None,
        make_output_block=(lambda c: SharedTileHandle(T, T, DType.FP32)) if with_store else None,
        iteration_independent=independent, input_block_bytes=T * T * 4,
        output_block_bytes=T * T * 4 if with_store else 0,
    )


def accumulate_globals(n_tiles: int, blocks=1, seed=0) -> dict:
    import threading
    x = np.random.default_rng(seed).standard_normal((1, blocks, n_tiles * T, T)).astype(np.float32)
    return {"X": GlobalTensor(x), "S": GlobalTensor.zeros((1, blocks, T, T)),
            "Y": GlobalTensor.zeros(x.shape), "partials": [], "lock": threading.Lock(), "x": x}


def expected_sum(x: np.ndarray, block=0) -> np.ndarray:
    out = np.zeros((T, T), np.float32)
    for i in range(x.shape[2] // T):
        out = out + x[0, block, i * T:(i + 1) * T]
    return out


# --- functional executor -------------------------------------------------


def test_single_stage_strictly_alternates():
    g = accumulate_globals(5)
    res = execute_functional(accumulate_kernel(5), PipelineConfig(input_pipe_stages=1), g, seed=3)
    seq = [(e.kind, e.ring_iter) for e in res.trace
           if e.event == "begin" and e.kind in ("load", "compute")]
    assert seq == [(k, i) for i in range(5) for k in ("load", "compute")]
    assert np.array_equal(g["S"].data[0, 0], expected_sum(g["x"]))


@pytest.mark.parametrize("backend", ["cooperative", "threads"])
@pytest.mark.parametrize("with_store", [False, True])
def test_outputs_are_exact(backend, with_store):
    g = accumulate_globals(7, blocks=2)
    cfg = PipelineConfig(num_consumer_workers=2, input_pipe_stages=3, output_pipe_stages=2)
    execute_functional(accumulate_kernel(7, with_store=with_store, blocks=2), cfg, g,
                       backend=backend, seed=1 if backend == "cooperative" else None)
    for b in range(2):
        assert np.array_equal(g["S"].data[0, b], expected_sum(g["x"], b))
    if with_store:
        assert np.array_equal(g["Y"].data, 2 * g["x"])


def test_gemm_invariant_to_stage_count():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((128, 128)).astype(np.float32)
    b = rng.standard_normal((128, 128)).astype(np.float32)
    outs = []
    for stages in (1, 2, 3, 4):
        cfg = GemmConfig(128, 128, 128, input_pipe_stages=stages)
        g = gemm_globals(a, b, cfg)
        execute_functional(gemm_kernel(cfg), None, g, seed=stages)
        outs.append(g["C"].data.copy())
    assert all(np.array_equal(outs[0], o) for o in outs[1:])


def test_random_interleavings_agree():
    traces = set()
    ref = None
    for seed in range(50):
        g = accumulate_globals(6)
        res = execute_functional(accumulate_kernel(6, with_store=True),
                                 PipelineConfig(num_consumer_workers=2, input_pipe_stages=2,
                                                output_pipe_stages=2), g, seed=seed)
        out = (g["S"].data.copy(), g["Y"].data.copy())
        ref = ref or out
        assert np.array_equal(out[0], ref[0]) and np.array_equal(out[1], ref[1])
        assert validate_trace(res.trace).violations == []
        traces.add(tuple((e.worker, e.event, e.kind, e.ring_iter) for e in res.trace))
    assert len(traces) > 1


def test_round_robin_is_reproducible():
    runs = [execute_functional(accumulate_kernel(4), None, accumulate_globals(4)).trace
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_barrier_passes_recorded():
    res = execute_functional(accumulate_kernel(4), PipelineConfig(input_pipe_stages=2),
                             accumulate_globals(4))
    passes = res.barrier_passes()
    assert {e.barrier for e in passes} >= {"inputs_arrived", "inputs_finished"}
    assert sum(e.barrier == "inputs_arrived" for e in passes) == 4


def test_iteration_independent_consumers_split_work():
    g = accumulate_globals(8)
    cfg = PipelineConfig(num_consumer_workers=3, input_pipe_stages=4)
    res = execute_functional(accumulate_kernel(8, independent=True), cfg, g, seed=5)
    total = sum(g["partials"])
    np.testing.assert_allclose(total, expected_sum(g["x"]), rtol=1e-5, atol=1e-5)
    per_worker = {w: len([s for s in res.stage_order(w) if s[0] == "compute"])
                  for w in ("b0.consumer0", "b0.consumer1", "b0.consumer2")}
    assert per_worker == {"b0.consumer0": 3, "b0.consumer1": 3, "b0.consumer2": 2}


@pytest.mark.parametrize("independent", [False, True])
def test_synchronous_mode_matches(independent):
    g = accumulate_globals(5)
    cfg = PipelineConfig(num_consumer_workers=2, synchronous=True)
    execute_functional(accumulate_kernel(5, with_store=True, independent=independent), cfg, g,
                       seed=2)
    assert np.array_equal(g["Y"].data, 2 * g["x"])
    if not independent:
        assert np.array_equal(g["S"].data[0, 0], expected_sum(g["x"]))


def test_missing_arrive_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        execute_functional(accumulate_kernel(3, arrive_times=0), None, accumulate_globals(3))


def test_double_arrive_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        execute_functional(accumulate_kernel(3, arrive_times=2), None, accumulate_globals(3))


@pytest.mark.parametrize("backend", ["cooperative", "threads"])
def test_lenient_missing_arrive_deadlocks(backend):
    with pytest.raises(DeadlockError) as err:
        execute_functional(accumulate_kernel(5, arrive_times=0),
                           PipelineConfig(input_pipe_stages=2), accumulate_globals(5),
                           backend=backend, strict=False)
    assert any("inputs_finished" in str(b) for b in err.value.blocked)


def test_barrier_over_arrival():
    bar = Barrier(2)
    assert not bar.arrive() and bar.arrive() and bar.generation == 1
    with pytest.raises(ContractViolation):
        bar.arrive(3)


def test_config_errors():
    with pytest.raises(PipelineConfigError):
        PipelineConfig(input_pipe_stages=0)
    with pytest.raises(PipelineConfigError):
        PipelineConfig(num_consumer_workers=0)
    with pytest.raises(PipelineConfigError):
        execute_functional(accumulate_kernel(2), PipelineConfig(input_pipe_stages=4),
                           accumulate_globals(2), smem_bytes=3 * T * T * 4)
    with pytest.raises(PipelineConfigError):
        execute_functional(gemm_kernel(GemmConfig(128, 128, 128)), PipelineConfig(3),
                           gemm_globals(np.zeros((128, 128)), np.zeros((128, 128)),
                                        GemmConfig(128, 128, 128)))


# --- timed simulator ------------------------------------------------------

L = 1.0


def test_single_stage_makespan_is_serial():
    tl = simulate_timed(None, PipelineConfig(input_pipe_stages=1), LatencyProfile(L, L), 10)
    assert tl.makespan == pytest.approx(2 * L * 10)


def test_double_buffer_makespan():
    tl = simulate_timed(None, PipelineConfig(input_pipe_stages=2), LatencyProfile(L, L), 10)
    assert tl.makespan == pytest.approx(L * 11)


def test_synchronous_makespan_is_serial_sum():
    prof = LatencyProfile(2.0, 1.0, store=0.5)
    k = accumulate_kernel(1, with_store=True)
    tl = simulate_timed(k, PipelineConfig(synchronous=True), prof, 6)
    assert tl.makespan == pytest.approx(6 * 3.5)


def test_timeline_is_consistent():
    k = accumulate_kernel(1, with_store=True)
    tl = simulate_timed(k, PipelineConfig(2, 1, 3, 2), LatencyProfile(1.3, 0.7, store=0.4,
                                                                      load_channel=0.2), 12)
    tl.check_no_overlap()
    assert tl.validate().violations == []
    assert tl.makespan == max(s.end for s in tl.spans)
    assert 0 < tl.issue_utilization <= 1
    assert all(0 <= v <= 1 for v in tl.stall_fractions.values())
    trace = tl.to_chrome_trace()
    assert any(ev["ph"] == "X" and ev["name"] == "compute" for ev in trace["traceEvents"])
    assert tl.to_json()["makespan"] == tl.makespan


def test_chrome_trace_file(tmp_path):
    import json
    tl = simulate_timed(None, PipelineConfig(), LatencyProfile(1e-6, 1e-6), 3)
    path = tmp_path / "t.json"
    tl.write_chrome_trace(path)
    data = json.loads(path.read_text())
    assert {"traceEvents", "displayTimeUnit"} <= set(data)


def test_latencies_must_be_positive():
    with pytest.raises(ValueError):
        LatencyProfile(0.0, 1.0)
    with pytest.raises(ValueError):
        simulate_timed(None, PipelineConfig(), LatencyProfile(1, 1), -1)


pos = st.floats(0.05, 5.0)


@settings(max_examples=40)
@given(pos, pos, st.floats(0, 2.0), st.integers(4, 24))
def test_throughput_nondecreasing_in_stages(load, compute, channel, iters):
    prof = LatencyProfile(load, compute, load_channel=channel)
    tps = [simulate_timed(None, PipelineConfig(input_pipe_stages=s), prof, iters).throughput
           for s in (1, 2, 3, 4)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(tps, tps[1:]))


@settings(max_examples=25)
@given(pos, pos, st.integers(1, 3), st.integers(1, 4), st.booleans(), st.integers(2, 10))
def test_timed_schedule_is_safe(load, compute, workers, stages, store, iters):
    k = accumulate_kernel(1, with_store=store)
    tl = simulate_timed(k, PipelineConfig(workers, 1, stages, stages), 
                        LatencyProfile(load, compute, store=load / 2), iters)
    tl.check_no_overlap()
    assert tl.validate().violations == []


def test_occupancy_without_penalty_is_nondecreasing():
    curve = occupancy_sweep(None, [1, 2, 3, 4, 5], ResourceModel(spill_penalty=0.0),
                            LatencyProfile(3.0, 1.0), 20)
    ys = curve.throughputs
    assert all(b >= a for a, b in zip(ys, ys[1:]))


def test_occupancy_with_penalty_has_interior_peak():
    res = ResourceModel(consumer_regs_per_thread=160, producer_regs_per_thread=24,
                        spill_penalty=8.0)
    base = PipelineConfig(input_pipe_stages=2)
    curve = occupancy_sweep(None, list(range(1, 7)), res, LatencyProfile(3.0, 1.0), 24, base)
    assert curve.is_unimodal() and curve.has_interior_max() and curve.argmax == 3
    sync = occupancy_sweep(None, list(range(1, 7)), res, LatencyProfile(3.0, 1.0), 24,
                           replace(base, synchronous=True))
    assert all(a >= b for a, b in zip(curve.throughputs, sync.throughputs))
