"""Shipped study files and the runners behind them.

A scenario is a JSON object. Recognized sections:

- ``l2``: one block-order replay per entry of ``orders`` over a GEMM or
  attention footprint.
- ``persistent``: persistent vs relaunched makespans over ``k_values``.
- ``two_wave``: a single persistent/relaunch comparison with fixed task time.
- ``worker_counts`` + ``latencies`` + ``resources``: an occupancy sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from kittensim import grid
from kittensim.kernels import (
    AttentionConfig,
    GemmConfig,
    attention_fwd_kernel,
    gemm_kernel,
    gemm_latency_profile,
    rotary_kernel,
    RotaryConfig,
)
from kittensim.lcsf import (
    DeadlockError,
    KernelSpec,
    LatencyProfile,
    PipelineConfig,
    ResourceModel,
    occupancy_sweep,
    simulate_timed,
)
from kittensim.machine import MachineParams, preset_h100


class ScenarioError(ValueError):
    pass


def shipped_scenarios() -> list[str]:
    root = resources.files("kittensim") / "data" / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(ref: str | Path) -> dict:
    """Load by path, or by shipped name with or without the .json suffix."""
    path = Path(ref)
    if not path.exists():
        name = path.name if path.name.endswith(".json") else path.name + ".json"
        shipped = resources.files("kittensim") / "data" / "scenarios" / name
        if not shipped.is_file():
            raise ScenarioError(f"no scenario file {ref!r}; shipped: {shipped_scenarios()}")
        text = shipped.read_text()
    else:
        text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed scenario {ref!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    return data


def _need(section: dict, *keys: str):
    missing = [k for k in keys if k not in section]
    if missing:
        raise ScenarioError(f"scenario section lacks {missing}")
    return [section[k] for k in keys]


# ---------------------------------------------------------------------------
# L2 block orders


def l2_orders(section: dict) -> list:
    out = []
    workload = section.get("workload")
    for entry in _need(section, "orders")[0]:
        kind = entry.get("type")
        if workload == "gemm":
            m, n, bm, bn = _need(section, "m", "n", "block_m", "block_n")
            r, c = m // bm, n // bn
            if kind == "row_major":
                out.append(grid.RowMajor(r, c))
            elif kind == "supergroup":
                out.append(grid.SuperGrouped(r, c, int(entry["super_m"])))
            else:
                raise ScenarioError(f"order type {kind!r} does not apply to gemm")
        elif workload == "attention":
            b, h, s, q = _need(section, "batch", "heads", "seq", "q_rows")
            if kind != "attention":
                raise ScenarioError(f"order type {kind!r} does not apply to attention")
            out.append(grid.AttentionOrder(b, h, s // q, tuple(entry["axes"])))
        else:
            raise ScenarioError(f"unknown l2 workload {workload!r}")
    return out


def l2_footprint(section: dict):
    if section.get("workload") == "gemm":
        m, n, k, bm, bn = _need(section, "m", "n", "k", "block_m", "block_n")
        return grid.gemm_footprint(m, n, k, bm, bn, section.get("tile_k", 64),
                                   section.get("elem_bytes", 2))
    b, h, s, d = _need(section, "batch", "heads", "seq", "head_dim")
    return grid.attention_footprint(b, h, s, d, section.get("q_rows", 64),
                                    section.get("kv_rows", 128), section.get("elem_bytes", 2))


def l2_config(section: dict, infinite: bool = False) -> grid.L2Config:
    cap = math.inf if infinite else section.get("capacity_bytes", 50 * 1024 * 1024)
    return grid.L2Config(cap, section.get("line_bytes", 128))


def run_l2_order(section: dict, index: int, infinite: bool = False) -> dict:
    order = l2_orders(section)[index]
    report = grid.simulate_l2(order, l2_footprint(section), l2_config(section, infinite),
                              section.get("num_sms", 132))
    d = report.to_dict()
    d.pop("per_block_misses")
    return d


def run_l2_study(section: dict, infinite: bool = False, map_fn=map) -> dict:
    n = len(l2_orders(section))
    reports = list(map_fn(run_l2_order, [section] * n, range(n), [infinite] * n))
    base = reports[0]["hbm_bytes_fetched"]
    for r in reports:
        r["ratio_to_first"] = r["hbm_bytes_fetched"] / base if base else 0.0
    return {"capacity_bytes": None if infinite else section.get("capacity_bytes"),
            "orders": reports}


# ---------------------------------------------------------------------------
# persistent grids


def ksweep_task_time(params: MachineParams, block_m: int, block_n: int, k: int) -> float:
    """One output tile's tensor flops at one SM's share of the tensor rate."""
    return 2.0 * block_m * block_n * k / (params.pipeline_throughputs["Tensor"] / params.num_sms)


def run_persistent_study(section: dict, params: MachineParams | None = None) -> dict:
    params = params or preset_h100()
    tasks, sms, bm, bn, ks = _need(section, "num_tasks", "num_sms", "block_m", "block_n", "k_values")
    setup = section.get("setup_cost", params.block_setup_cost)
    rows = []
    for k in ks:
        t = ksweep_task_time(params, bm, bn, k)
        res = grid.persistent_assign(tasks, sms, t, setup)
        rows.append({"K": k, "per_task_time": t, "waves": res.waves,
                     "makespan_persistent": res.makespan_persistent,
                     "makespan_relaunch": res.makespan_relaunch,
                     "advantage": res.advantage,
                     "persistent_le_relaunch": res.makespan_persistent <= res.makespan_relaunch})
    return {"rows": rows, "all_persistent_le_relaunch": all(r["persistent_le_relaunch"] for r in rows)}


def run_two_wave(section: dict) -> dict:
    tasks, sms, t, setup = _need(section, "num_tasks", "num_sms", "per_task_time", "setup_cost")
    res = grid.persistent_assign(tasks, sms, t, setup)
    return {"num_tasks": tasks, "num_sms": sms, "waves": res.waves,
            "makespan_persistent": res.makespan_persistent,
            "makespan_relaunch": res.makespan_relaunch,
            "max_tasks_per_sm": max(len(x) for x in res.per_sm_tasks)}


# ---------------------------------------------------------------------------
# pipeline simulations


def structural_kernel(name: str) -> KernelSpec | None:
    """A kernel instance used only for its structure (store stage, independence)."""
    if name == "gemm":
        return gemm_kernel(GemmConfig(128, 128, 128))
    if name == "attention":
        return attention_fwd_kernel(AttentionConfig(1, 1, 384, 64))
    if name == "rotary":
        return rotary_kernel(RotaryConfig(1, 1, 16, 32))
    if name in ("none", "plain"):
        return None
    raise ScenarioError(f"unknown kernel {name!r}")


def load_profile(ref: str, params: MachineParams | None = None) -> LatencyProfile:
    """'gemm' derives from machine parameters; anything else is a JSON path
    (either a bare profile or a scenario with a ``latencies`` section)."""
    if ref == "gemm":
        return gemm_latency_profile(params or preset_h100(), GemmConfig(4096, 4096, 4096))
    data = load_scenario(ref)
    data = data.get("latencies", data)
    try:
        return LatencyProfile.from_dict(data)
    except TypeError as exc:
        raise ScenarioError(f"bad latency profile {ref!r}: {exc}") from exc


@dataclass(frozen=True)
class SimPoint:
    kernel: str
    stages: int
    workers: int
    iterations: int
    synchronous: bool = False


def run_sim_point(point: SimPoint, profile: LatencyProfile, trace_dir: str | None = None) -> dict:
    cfg = PipelineConfig(num_consumer_workers=point.workers, input_pipe_stages=point.stages,
                         output_pipe_stages=point.stages, synchronous=point.synchronous)
    row = {"kernel": point.kernel, "stages": point.stages, "workers": point.workers,
           "synchronous": point.synchronous, "iterations": point.iterations}
    try:
        tl = simulate_timed(structural_kernel(point.kernel), cfg, profile, point.iterations)
    except DeadlockError as exc:
        return {**row, "status": "deadlock", "error": str(exc)}
    row.update(status="ok", makespan=tl.makespan, throughput=tl.throughput,
               issue_utilization=tl.issue_utilization)
    if trace_dir is not None:
        tag = "sync" if point.synchronous else "lcsf"
        path = Path(trace_dir) / f"{point.kernel}-{tag}-s{point.stages}-w{point.workers}.trace.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        tl.write_chrome_trace(path)
        row["trace"] = path.name
    return row


def run_occupancy_study(scenario: dict, kernel: str = "attention") -> dict:
    counts, lat, res = _need(scenario, "worker_counts", "latencies", "resources")
    latencies = LatencyProfile.from_dict(lat)
    model = ResourceModel.from_dict(res)
    iters = scenario.get("iterations", 24)
    base = PipelineConfig(input_pipe_stages=scenario.get("input_pipe_stages", 2))
    k = structural_kernel(kernel)
    lcsf = occupancy_sweep(k, counts, model, latencies, iters, base)
    sync = occupancy_sweep(k, counts, model, latencies, iters, replace(base, synchronous=True))
    dominates = all(a.throughput >= b.throughput for a, b in zip(lcsf.points, sync.points))
    return {"lcsf": lcsf.to_json(), "synchronous": sync.to_json(),
            "lcsf_unimodal": lcsf.is_unimodal(), "lcsf_interior_max": lcsf.has_interior_max(),
            "lcsf_dominates": dominates}
