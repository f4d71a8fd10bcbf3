"""Discrete-event timing of the LCSF worker programs.

Each worker executes serially. Async loads and stores cost the issuing worker
`issue` seconds and complete `latency` later; an optional memory channel
serializes their transfer portion. Barrier rules are those of
`kittensim.lcsf.program`, so every simulated schedule is also a legal
functional schedule.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from kittensim.lcsf.functional import Barrier, ValidationReport, _Interval, check_intervals
from kittensim.lcsf.program import (
    Access,
    Arrive,
    BlockContext,
    DeadlockError,
    KernelSpec,
    PipelineConfig,
    Stage,
    Wait,
    block_workers,
)


@dataclass(frozen=True)
class LatencyProfile:
    load: float
    compute: float
    store: float = 0.0
    finish: float = 0.0
    setup: float = 0.0
    # serialized memory-channel occupancy per transfer (0 = unlimited bandwidth)
    load_channel: float = 0.0
    store_channel: float = 0.0
    # issuing-worker cost of an async load/store
    issue: float = 0.0
    work_per_iteration: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not (self.load > 0 and self.compute > 0):
            raise ValueError("load and compute latencies must be positive")
        for f in ("store", "finish", "setup", "load_channel", "store_channel", "issue"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be nonnegative")

    def duration(self, kind: str) -> float:
        return getattr(self, kind)

    def with_compute_factor(self, factor: float) -> LatencyProfile:
        return replace(self, compute=self.compute * factor)

    @classmethod
    def from_dict(cls, d: dict) -> LatencyProfile:
        return cls(**{k: v for k, v in d.items() if not k.startswith("_")})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Span:
    lane: str
    kind: str  # load | compute | store | finish | setup | stall | issue
    start: float
    end: float
    iteration: int = -1
    cause: str | None = None
    block: int = 0
    reads: tuple[Access, ...] = ()
    writes: tuple[Access, ...] = ()


@dataclass
class Timeline:
    spans: list[Span]
    workers: list[str]
    makespan: float
    work: float
    config: PipelineConfig | None = None

    @property
    def throughput(self) -> float:
        return self.work / self.makespan if self.makespan > 0 else 0.0

    def by_lane(self) -> dict[str, list[Span]]:
        out: dict[str, list[Span]] = {}
        for s in self.spans:
            out.setdefault(s.lane, []).append(s)
        for v in out.values():
            v.sort(key=lambda s: (s.start, s.end))
        return out

    def _worker_time(self, kinds: set[str] | None = None, stall: bool = False) -> dict:
        acc: dict[str, float] = {}
        workers = set(self.workers)
        for s in self.spans:
            if s.lane not in workers:
                continue
            if stall and s.kind == "stall":
                acc[s.cause] = acc.get(s.cause, 0.0) + (s.end - s.start)
            elif not stall and s.kind != "stall":
                acc[s.kind] = acc.get(s.kind, 0.0) + (s.end - s.start)
        return acc

    @property
    def issue_utilization(self) -> float:
        """Fraction of worker-time spent executing (not stalled or idle)."""
        if not self.workers or self.makespan <= 0:
            return 0.0
        return sum(self._worker_time().values()) / (len(self.workers) * self.makespan)

    @property
    def stall_fractions(self) -> dict[str, float]:
        if not self.workers or self.makespan <= 0:
            return {}
        denom = len(self.workers) * self.makespan
        return {k: v / denom for k, v in sorted(self._worker_time(stall=True).items())}

    def check_no_overlap(self) -> None:
        for lane, spans in self.by_lane().items():
            for a, b in zip(spans, spans[1:]):
                if b.start < a.end - 1e-15:
                    raise AssertionError(f"lane {lane}: {a} overlaps {b}")

    def validate(self) -> ValidationReport:
        ivs = []
        for s in self.spans:
            for a in s.reads:
                ivs.append(_Interval(s.start, s.end, s.block, a, False, s.iteration, s.lane))
            for a in s.writes:
                ivs.append(_Interval(s.start, s.end, s.block, a, True, s.iteration, s.lane))
        return check_intervals(ivs)

    def to_json(self) -> dict:
        return {
            "makespan": self.makespan,
            "work": self.work,
            "throughput": self.throughput,
            "issue_utilization": self.issue_utilization,
            "stall_fractions": self.stall_fractions,
            "workers": list(self.workers),
            "spans": [
                {"lane": s.lane, "kind": s.kind, "start": s.start, "end": s.end,
                 "iteration": s.iteration, **({"cause": s.cause} if s.cause else {})}
                for s in self.spans
            ],
        }

    def to_chrome_trace(self, time_unit: float = 1e-6) -> dict:
        """Trace-event JSON ('X' complete events, timestamps in microseconds)."""
        lanes = sorted({s.lane for s in self.spans}, key=lambda n: (n not in self.workers, n))
        tid = {name: i for i, name in enumerate(lanes)}
        events = [{"name": "thread_name", "ph": "M", "pid": 0, "tid": tid[n],
                   "args": {"name": n}} for n in lanes]
        for s in sorted(self.spans, key=lambda s: (s.start, tid[s.lane])):
            ev = {"name": s.kind if s.kind != "stall" else f"stall:{s.cause}",
                  "cat": "stall" if s.kind == "stall" else "lcsf", "ph": "X",
                  "ts": s.start / time_unit, "dur": (s.end - s.start) / time_unit,
                  "pid": 0, "tid": tid[s.lane]}
            if s.iteration >= 0:
                ev["args"] = {"iteration": s.iteration}
            events.append(ev)
        return {"traceEvents": events, "displayTimeUnit": "ns"}

    def write_chrome_trace(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_chrome_trace(), indent=1))


@dataclass
class _SimWorker:
    name: str
    gen: object
    ctx: BlockContext
    done: bool = False
    wait_since: float = 0.0
    waiting: Wait | None = None


def simulate_timed(kernel: KernelSpec | None, config: PipelineConfig,
                   latencies: LatencyProfile, iterations: int) -> Timeline:
    """Simulate one block running `iterations` ring iterations.

    `kernel` only contributes structure (store stage present, iteration
    independence); pass None for a plain load/compute pipeline.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    ctx = BlockContext(0, config, kernel, None, functional=False, iterations=iterations)
    workers = [_SimWorker(n, g, ctx) for n, g in block_workers(ctx)]
    spans: list[Span] = []
    barriers: dict[tuple, Barrier] = {}
    waiters: dict[tuple, list[_SimWorker]] = {}
    channel_free = {"load": 0.0, "store": 0.0}
    heap: list = []
    seq = [0]

    def push(t: float, fn, *args):
        seq[0] += 1
        heapq.heappush(heap, (t, seq[0], fn, args))

    def barrier(name: str, slot: int) -> Barrier:
        key = (name, slot)
        if key not in barriers:
            barriers[key] = Barrier(ctx.expected_arrivals(name))
        return barriers[key]

    def apply(t: float, name: str, slot: int, count: int = 1):
        bar = barrier(name, slot)
        if bar.arrive(count):
            still = []
            for w in waiters.pop((name, slot), []):
                if bar.generation >= w.waiting.generation:
                    if t > w.wait_since:
                        spans.append(Span(w.name, "stall", w.wait_since, t, cause=name))
                    w.waiting = None
                    push(t, resume, w)
                else:
                    still.append(w)
            if still:
                waiters[(name, slot)] = still

    def complete(t: float, w: _SimWorker | None, stage: Stage):
        for name, slot in list(stage.contract) + list(stage.auto):
            apply(t, name, slot)
        if w is not None:
            resume(t, w)

    def transfer_window(t: float, kind: str) -> tuple[float, float]:
        occupancy = latencies.load_channel if kind == "load" else latencies.store_channel
        start = max(t, channel_free[kind]) if occupancy > 0 else t
        if occupancy > 0:
            channel_free[kind] = start + occupancy
        return start, start + max(latencies.duration(kind), occupancy)

    def resume(t: float, w: _SimWorker):
        for act in w.gen:
            if isinstance(act, Wait):
                if barrier(act.barrier, act.slot).generation >= act.generation:
                    continue
                w.waiting, w.wait_since = act, t
                waiters.setdefault((act.barrier, act.slot), []).append(w)
                return
            if isinstance(act, Arrive):
                apply(t, act.barrier, act.slot, act.count)
                continue
            if not isinstance(act, Stage):
                raise TypeError(f"{w.name} yielded {act!r}")
            if act.async_:
                issued = t + latencies.issue
                if latencies.issue > 0:
                    spans.append(Span(w.name, "issue", t, issued, act.ring_iter))
                _, done = transfer_window(issued, act.kind)
                lane = f"tma.{'in' if act.kind == 'load' else 'out'}"
                slot = (act.writes or act.reads)[0].slot
                spans.append(Span(f"{lane}[{slot}]", act.kind, issued, done, act.ring_iter,
                                  reads=act.reads, writes=act.writes))
                push(done, complete, None, act)
                push(issued, resume, w)
                return
            if act.kind in ("load", "store"):
                _, end = transfer_window(t, act.kind)
            else:
                end = t + latencies.duration(act.kind)
            spans.append(Span(w.name, act.kind, t, end, act.ring_iter,
                              reads=act.reads, writes=act.writes))
            push(end, complete, w, act)
            return
        w.done = True

    for w in workers:
        push(0.0, resume, w)
    while heap:
        t, _, fn, args = heapq.heappop(heap)
        fn(t, *args)

    stuck = [w for w in workers if not w.done]
    if stuck:
        blocked = [(w.name, w.waiting.barrier, w.waiting.slot, w.waiting.generation,
                    barrier(w.waiting.barrier, w.waiting.slot).generation) for w in stuck]
        raise DeadlockError("timed deadlock: " + ", ".join(f"{b[0]}:{b[1]}[{b[2]}]" for b in blocked),
                            blocked)
    makespan = max((s.end for s in spans), default=0.0)
    n_compute = sum(1 for s in spans if s.kind == "compute")
    return Timeline(spans, [w.name for w in workers], makespan,
                    n_compute * latencies.work_per_iteration, config)


# ---------------------------------------------------------------------------
# occupancy


@dataclass(frozen=True)
class ResourceModel:
    """Register/SMEM bookkeeping and the compute slowdown once it is oversubscribed."""

    threads_per_worker: int = 128
    consumer_regs_per_thread: int = 232
    producer_regs_per_thread: int = 40
    register_file: int = 65536
    smem_per_consumer: int = 0
    smem_bytes: int = 227 * 1024
    # compute-latency multiplier = 1 + spill_penalty * oversubscription fraction
    spill_penalty: float = 0.0

    def registers(self, consumers: int, producers: int) -> int:
        return self.threads_per_worker * (consumers * self.consumer_regs_per_thread
                                          + producers * self.producer_regs_per_thread)

    def contention_factor(self, consumers: int, producers: int) -> float:
        over = max(0, self.registers(consumers, producers) - self.register_file) / self.register_file
        smem_over = 0.0
        if self.smem_per_consumer:
            used = consumers * self.smem_per_consumer
            smem_over = max(0, used - self.smem_bytes) / self.smem_bytes
        return 1.0 + self.spill_penalty * (over + smem_over)

    @classmethod
    def from_dict(cls, d: dict) -> ResourceModel:
        return cls(**{k: v for k, v in d.items() if not k.startswith("_")})


@dataclass
class OccupancyPoint:
    workers: int
    throughput: float
    contention_factor: float
    registers: int
    makespan: float


@dataclass
class OccupancyCurve:
    points: list[OccupancyPoint]

    @property
    def argmax(self) -> int:
        best = max(self.points, key=lambda p: p.throughput)
        return best.workers

    @property
    def throughputs(self) -> list[float]:
        return [p.throughput for p in self.points]

    def is_unimodal(self, rel_tol: float = 1e-12) -> bool:
        """Strictly up to a single peak, then strictly down."""
        ys = self.throughputs
        k = ys.index(max(ys))
        up = all(b > a * (1 + rel_tol) for a, b in zip(ys[:k], ys[1:k + 1]))
        down = all(b < a * (1 - rel_tol) for a, b in zip(ys[k:], ys[k + 1:]))
        return up and down

    def has_interior_max(self) -> bool:
        k = self.throughputs.index(max(self.throughputs))
        return 0 < k < len(self.points) - 1

    def to_json(self) -> dict:
        return {"argmax": self.argmax, "points": [asdict(p) for p in self.points]}


def occupancy_sweep(kernel: KernelSpec | None, worker_counts: list[int],
                    resources: ResourceModel, latencies: LatencyProfile, iterations: int,
                    base: PipelineConfig | None = None) -> OccupancyCurve:
    base = base or PipelineConfig()
    points = []
    for n in worker_counts:
        cfg = replace(base, num_consumer_workers=n)
        producers = 0 if cfg.synchronous else cfg.num_producer_workers
        factor = resources.contention_factor(n, producers)
        tl = simulate_timed(kernel, cfg, latencies.with_compute_factor(factor), iterations)
        points.append(OccupancyPoint(n, tl.throughput, factor,
                                     resources.registers(n, producers), tl.makespan))
    return OccupancyCurve(points)
