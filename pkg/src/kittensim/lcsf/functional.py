"""Functional executor: runs the worker programs for real, on either a seeded
cooperative interleaver or real threads, and records an event trace."""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from typing import Iterator

from kittensim.lcsf.program import (
    Access,
    Arrive,
    BlockContext,
    ContractViolation,
    DeadlockError,
    KernelSpec,
    PipelineConfig,
    Stage,
    Wait,
    block_workers,
    check_contract,
    ring_slots,
)


class SafetyViolation(AssertionError):
    pass


@dataclass
class Barrier:
    expected: int
    arrived: int = 0
    generation: int = 0

    def arrive(self, count: int = 1) -> bool:
        """Returns True when this arrival completes a phase."""
        self.arrived += count
        if self.arrived > self.expected:
            raise ContractViolation(
                f"barrier over-arrived: {self.arrived} > {self.expected}")
        if self.arrived == self.expected:
            self.arrived = 0
            self.generation += 1
            return True
        return False


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    worker: str
    block: int
    event: str  # begin | end | pass
    kind: str = ""
    ring_iter: int = -1
    task_iter: int = -1
    reads: tuple[Access, ...] = ()
    writes: tuple[Access, ...] = ()
    barrier: str | None = None
    slot: int | None = None
    generation: int | None = None


@dataclass
class FunctionalResult:
    globals: dict
    trace: list[TraceEvent]
    steps: int
    backend: str
    seed: int | None = None

    def barrier_passes(self) -> list[TraceEvent]:
        return [e for e in self.trace if e.event == "pass"]

    def stage_order(self, worker: str) -> list[tuple[str, int]]:
        return [(e.kind, e.ring_iter) for e in self.trace
                if e.worker == worker and e.event == "begin"]


# ---------------------------------------------------------------------------
# shared machinery


class _Blocks:
    def __init__(self, kernel: KernelSpec, config: PipelineConfig, globals_: dict,
                 strict: bool):
        self.kernel = kernel
        self.config = config
        self.strict = strict
        self.barriers: dict[tuple, Barrier] = {}
        self.contexts: list[BlockContext] = []
        n_in, n_out = ring_slots(config, kernel.iteration_independent)
        for b in range(kernel.grid(globals_, config)):
            ctx = BlockContext(b, config, kernel, globals_, functional=True)
            ctx.inputs = [kernel.make_input_block(config) for _ in range(n_in)]
            if kernel.has_store:
                ctx.outputs = [kernel.make_output_block(config) for _ in range(n_out)]
            ctx.scratch = kernel.make_scratch(config) if kernel.make_scratch else None
            self.contexts.append(ctx)

    def barrier(self, ctx: BlockContext, name: str, slot: int) -> Barrier:
        key = (ctx.block, name, slot)
        bar = self.barriers.get(key)
        if bar is None:
            bar = self.barriers[key] = Barrier(ctx.expected_arrivals(name))
        return bar

    def workers(self) -> list[tuple[BlockContext, str, Iterator]]:
        return [(ctx, name, gen) for ctx in self.contexts for name, gen in block_workers(ctx)]

    def run_stage_fn(self, stage: Stage) -> list[tuple[str, int]]:
        """Run the stage body; return the (barrier, slot) arrivals to apply."""
        made = stage.fn() if stage.fn is not None else [(b, 1) for b, _ in stage.contract]
        if made is None:
            made = []
        if self.strict:
            check_contract(stage, made, self.kernel.name)
            arrivals = list(stage.contract)
        else:
            slot_of = dict(stage.contract)
            arrivals = []
            for barrier, count in made:
                if barrier in slot_of:
                    arrivals.extend([(barrier, slot_of[barrier])] * count)
        return arrivals + list(stage.auto)


# ---------------------------------------------------------------------------
# cooperative backend


@dataclass
class _Worker:
    ctx: BlockContext
    name: str
    gen: Iterator
    pending: object = None
    begun: bool = False
    arrivals: list = field(default_factory=list)
    done: bool = False

    def advance(self):
        try:
            self.pending = next(self.gen)
        except StopIteration:
            self.pending = None
            self.done = True
        self.begun = False


def _run_cooperative(blocks: _Blocks, seed: int | None, max_steps: int) -> tuple[list, int]:
    rng = random.Random(seed) if seed is not None else None
    trace: list[TraceEvent] = []
    workers = [_Worker(ctx, name, gen) for ctx, name, gen in blocks.workers()]
    for w in workers:
        w.advance()

    def emit(**kw):
        trace.append(TraceEvent(seq=len(trace), **kw))

    def apply(w: _Worker, barrier: str, slot: int, count: int = 1):
        bar = blocks.barrier(w.ctx, barrier, slot)
        if bar.arrive(count):
            emit(worker=w.name, block=w.ctx.block, event="pass", barrier=barrier,
                 slot=slot, generation=bar.generation)

    def runnable(w: _Worker) -> bool:
        if w.done:
            return False
        act = w.pending
        if isinstance(act, Wait):
            return blocks.barrier(w.ctx, act.barrier, act.slot).generation >= act.generation
        return True

    steps = 0
    cursor = 0
    while True:
        ready = [w for w in workers if runnable(w)]
        if not ready:
            live = [w for w in workers if not w.done]
            if not live:
                break
            blocked = []
            for w in live:
                act = w.pending
                gen = blocks.barrier(w.ctx, act.barrier, act.slot).generation
                blocked.append((w.name, act.barrier, act.slot, act.generation, gen))
            raise DeadlockError(
                "deadlock: no runnable worker; blocked on "
                + ", ".join(f"{n}:{b}[{s}] wants gen {want} (at {have})"
                            for n, b, s, want, have in blocked),
                blocked,
            )
        if rng is None:
            # round robin over worker index
            w = min(ready, key=lambda x: (workers.index(x) - cursor) % len(workers))
            cursor = (workers.index(w) + 1) % len(workers)
        else:
            w = rng.choice(ready)
        steps += 1
        if steps > max_steps:
            raise RuntimeError(f"step bound {max_steps} exceeded")
        act = w.pending
        if isinstance(act, Wait):
            w.advance()
        elif isinstance(act, Arrive):
            apply(w, act.barrier, act.slot, act.count)
            w.advance()
        elif isinstance(act, Stage):
            if not w.begun:
                emit(worker=w.name, block=w.ctx.block, event="begin", kind=act.kind,
                     ring_iter=act.ring_iter, task_iter=act.task_iter,
                     reads=act.reads, writes=act.writes)
                w.arrivals = blocks.run_stage_fn(act)
                w.begun = True
            else:
                emit(worker=w.name, block=w.ctx.block, event="end", kind=act.kind,
                     ring_iter=act.ring_iter, task_iter=act.task_iter,
                     reads=act.reads, writes=act.writes)
                for barrier, slot in w.arrivals:
                    apply(w, barrier, slot)
                w.advance()
        else:
            raise TypeError(f"worker {w.name} yielded {act!r}")
    return trace, steps


# ---------------------------------------------------------------------------
# thread backend


def _run_threads(blocks: _Blocks, timeout: float) -> tuple[list, int]:
    cond = threading.Condition()
    trace: list[TraceEvent] = []
    entries = blocks.workers()
    state = {"live": len(entries), "steps": 0, "error": None}
    waiting_on: dict[str, tuple] = {}

    def emit(**kw):
        trace.append(TraceEvent(seq=len(trace), **kw))

    def apply(ctx, name, barrier, slot, count=1):
        bar = blocks.barrier(ctx, barrier, slot)
        if bar.arrive(count):
            emit(worker=name, block=ctx.block, event="pass", barrier=barrier, slot=slot,
                 generation=bar.generation)
            cond.notify_all()

    def deadlocked() -> bool:
        if state["live"] == 0 or len(waiting_on) != state["live"]:
            return False
        return all(blocks.barrier(c, a.barrier, a.slot).generation < a.generation
                   for c, a in waiting_on.values())

    def deadlock_error():
        blocked = []
        for n, (ctx, act) in sorted(waiting_on.items()):
            gen = blocks.barrier(ctx, act.barrier, act.slot).generation
            blocked.append((n, act.barrier, act.slot, act.generation, gen))
        return DeadlockError("deadlock: all live workers blocked on "
                             + ", ".join(f"{n}:{b}[{s}]" for n, b, s, _, _ in blocked), blocked)

    def body(ctx: BlockContext, name: str, gen: Iterator):
        try:
            for act in gen:
                with cond:
                    if state["error"] is not None:
                        return
                    state["steps"] += 1
                    if isinstance(act, Wait):
                        bar = blocks.barrier(ctx, act.barrier, act.slot)
                        waiting_on[name] = (ctx, act)
                        while bar.generation < act.generation:
                            if state["error"] is not None:
                                return
                            if deadlocked():
                                state["error"] = deadlock_error()
                                cond.notify_all()
                                return
                            cond.wait(timeout)
                        del waiting_on[name]
                        continue
                    if isinstance(act, Arrive):
                        apply(ctx, name, act.barrier, act.slot, act.count)
                        continue
                    emit(worker=name, block=ctx.block, event="begin", kind=act.kind,
                         ring_iter=act.ring_iter, task_iter=act.task_iter,
                         reads=act.reads, writes=act.writes)
                # stage body runs outside the lock
                arrivals = blocks.run_stage_fn(act)
                with cond:
                    emit(worker=name, block=ctx.block, event="end", kind=act.kind,
                         ring_iter=act.ring_iter, task_iter=act.task_iter,
                         reads=act.reads, writes=act.writes)
                    for barrier, slot in arrivals:
                        apply(ctx, name, barrier, slot)
        except BaseException as exc:  # surfaced in the caller
            with cond:
                if state["error"] is None:
                    state["error"] = exc
                cond.notify_all()
        finally:
            with cond:
                state["live"] -= 1
                if state["error"] is None and deadlocked():
                    state["error"] = deadlock_error()
                cond.notify_all()

    threads = [threading.Thread(target=body, args=e, name=e[1], daemon=True) for e in entries]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if state["error"] is not None:
        raise state["error"]
    return trace, state["steps"]


# ---------------------------------------------------------------------------


def execute_functional(kernel: KernelSpec, config: PipelineConfig | None, globals_: dict,
                       *, backend: str = "cooperative", seed: int | None = None,
                       strict: bool = True, validate: bool = True,
                       max_steps: int = 50_000_000, thread_timeout: float = 0.05,
                       smem_bytes: int | None = None) -> FunctionalResult:
    """Run `kernel` over `globals_` (mutated in place: outputs land there).

    backend: "cooperative" (seed=None is round robin, otherwise seeded random
    interleaving) or "threads". With strict=False, arrival-count mismatches are
    not raised as contract violations and surface as deadlocks instead.
    """
    config = config or kernel.default_config
    if kernel.validate is not None:
        kernel.validate(config)
    if smem_bytes is not None:
        n_in, n_out = ring_slots(config, kernel.iteration_independent)
        PipelineConfig(config.num_consumer_workers, config.num_producer_workers, n_in,
                       n_out).check_footprint(kernel.input_block_bytes,
                                              kernel.output_block_bytes if kernel.has_store else 0,
                                              smem_bytes)
    blocks = _Blocks(kernel, config, globals_, strict)
    if backend == "cooperative":
        trace, steps = _run_cooperative(blocks, seed, max_steps)
    elif backend == "threads":
        trace, steps = _run_threads(blocks, thread_timeout)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if validate:
        report = validate_trace(trace)
        if report.violations:
            raise SafetyViolation("; ".join(report.violations[:5]))
    return FunctionalResult(globals_, trace, steps, backend, seed)


# ---------------------------------------------------------------------------
# trace validation


@dataclass
class ValidationReport:
    accesses: int
    overlaps: int
    violations: list[str]


@dataclass(frozen=True)
class _Interval:
    start: float
    end: float
    block: int
    access: Access
    write: bool
    ring_iter: int
    who: str


def intervals_from_trace(trace: list[TraceEvent]) -> list[_Interval]:
    open_: dict[str, TraceEvent] = {}
    out = []
    for e in trace:
        if e.event == "begin":
            open_[e.worker] = e
        elif e.event == "end":
            b = open_.pop(e.worker)
            for a in b.reads:
                out.append(_Interval(b.seq, e.seq, e.block, a, False, e.ring_iter, e.worker))
            for a in b.writes:
                out.append(_Interval(b.seq, e.seq, e.block, a, True, e.ring_iter, e.worker))
    return out


def check_intervals(intervals: list[_Interval]) -> ValidationReport:
    """No write may overlap another access to the same slot, and every read of
    ring iteration g must start after the write of g to that slot ended."""
    groups: dict[tuple, list[_Interval]] = {}
    for iv in intervals:
        groups.setdefault((iv.block, iv.access.buffer, iv.access.slot), []).append(iv)
    violations = []
    overlaps = 0
    for key, ivs in groups.items():
        ivs.sort(key=lambda x: (x.start, x.end))
        writes = [iv for iv in ivs if iv.write]
        for w in writes:
            for other in ivs:
                if other is w or not w.access.conflicts(other.access):
                    continue
                if other.write and (other.start, other.who) < (w.start, w.who):
                    continue  # count write/write pairs once
                if w.start < other.end and other.start < w.end:
                    overlaps += 1
                    violations.append(f"overlap on {key}: {w.who} g={w.ring_iter} vs "
                                      f"{other.who} g={other.ring_iter}")
        write_end: dict[tuple, float] = {}
        for w in writes:
            k = (w.ring_iter, w.access.part)
            write_end[k] = max(write_end.get(k, w.end), w.end)
        for r in ivs:
            if r.write:
                continue
            ends = [end for (g, _), end in write_end.items() if g == r.ring_iter]
            if not ends or max(ends) > r.start:
                violations.append(f"read before write on {key} g={r.ring_iter} by {r.who}")
    return ValidationReport(len(intervals), overlaps, violations)


def validate_trace(trace: list[TraceEvent]) -> ValidationReport:
    return check_intervals(intervals_from_trace(trace))
