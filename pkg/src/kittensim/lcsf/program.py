"""Kernel descriptions and the worker programs of the load-compute-store-finish template.

Workers are generators yielding `Wait`, `Arrive` and `Stage` actions. The
functional executor and the timed simulator drive the same generators, so
they enforce identical barrier rules:

* a consumer reads input slot s for ring iteration g only after
  ``inputs_arrived[s]`` has passed generation g // N + 1;
* a loader overwrites slot s with iteration g (g >= N) only after
  ``inputs_finished[s]`` has passed generation g // N;
* the output ring mirrors this with ``outputs_arrived`` / ``outputs_finished``.

The ring counter g keeps running across the tasks a block processes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

INPUTS_ARRIVED = "inputs_arrived"
INPUTS_FINISHED = "inputs_finished"
OUTPUTS_ARRIVED = "outputs_arrived"
OUTPUTS_FINISHED = "outputs_finished"
BLOCK_SYNC = "block_sync"


class PipelineConfigError(ValueError):
    pass


class ContractViolation(RuntimeError):
    """A stage function arrived on a barrier the wrong number of times."""


class DeadlockError(RuntimeError):
    def __init__(self, message: str, blocked: list[tuple]):
        super().__init__(message)
        self.blocked = blocked


@dataclass(frozen=True)
class PipelineConfig:
    num_consumer_workers: int = 1
    num_producer_workers: int = 1
    input_pipe_stages: int = 2
    output_pipe_stages: int = 1
    # producer and consumer roles fused in the same workers, no overlap
    synchronous: bool = False

    def __post_init__(self):
        if self.num_consumer_workers < 1 or self.num_producer_workers < 1:
            raise PipelineConfigError("worker counts must be >= 1")
        if self.input_pipe_stages < 1 or self.output_pipe_stages < 1:
            raise PipelineConfigError("pipe stages must be >= 1")

    def check_footprint(self, input_block_bytes: int, output_block_bytes: int,
                        smem_bytes: int, scratch_bytes: int = 0) -> int:
        total = (self.input_pipe_stages * input_block_bytes
                 + self.output_pipe_stages * output_block_bytes + scratch_bytes)
        if total > smem_bytes:
            raise PipelineConfigError(
                f"shared-memory footprint {total} B exceeds {smem_bytes} B per SM"
            )
        return total


@dataclass
class StageArgs:
    """Everything a stage function may touch."""

    globals: dict
    config: PipelineConfig
    block: int
    task_iter: int
    common: dict
    iter: int = 0
    ring_iter: int = 0
    input: Any = None
    output: Any = None
    state: Any = None
    scratch: Any = None
    worker: int = 0
    num_iters: int = 0
    arrivals: list = field(default_factory=list)

    def arrive(self, barrier: str, count: int = 1) -> None:
        self.arrivals.append((barrier, count))


@dataclass
class KernelSpec:
    """The four stage functions plus allocation hooks.

    ``common_setup(args)`` returns the iteration count for ``args.task_iter``
    (negative when the block has no more tasks) and may fill ``args.common``.
    ``compute`` must call ``args.arrive(INPUTS_FINISHED)`` exactly once, and
    also ``args.arrive(OUTPUTS_ARRIVED)`` once when the kernel has a store
    stage; ``store`` must call ``args.arrive(OUTPUTS_FINISHED)`` once.
    """

    name: str
    grid: Callable[[dict, PipelineConfig], int]
    common_setup: Callable[[StageArgs], int]
    load: Callable[[StageArgs], None]
    compute: Callable[[StageArgs], None]
    make_input_block: Callable[[PipelineConfig], Any]
    consumer_setup: Callable[[StageArgs], Any] | None = None
    finish: Callable[[StageArgs], None] | None = None
    store: Callable[[StageArgs], None] | None = None
    make_output_block: Callable[[PipelineConfig], Any] | None = None
    make_scratch: Callable[[PipelineConfig], Any] | None = None
    default_config: PipelineConfig = field(default_factory=PipelineConfig)
    # consumers may take disjoint iterations instead of all sharing each one
    iteration_independent: bool = False
    input_block_bytes: int = 0
    output_block_bytes: int = 0
    # bookkeeping only: registers per thread requested by each role
    producer_registers: int = 40
    consumer_registers: int = 232
    validate: Callable[[PipelineConfig], None] | None = None

    @property
    def has_store(self) -> bool:
        return self.store is not None


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Wait:
    barrier: str
    slot: int
    generation: int


@dataclass(frozen=True)
class Arrive:
    barrier: str
    slot: int
    count: int = 1


@dataclass(frozen=True)
class Access:
    buffer: str  # "in" or "out"
    slot: int
    part: int | None = None  # None = whole slot

    def conflicts(self, other: Access) -> bool:
        if self.buffer != other.buffer or self.slot != other.slot:
            return False
        return self.part is None or other.part is None or self.part == other.part


@dataclass(frozen=True)
class Stage:
    kind: str  # load | compute | store | finish | setup
    ring_iter: int
    task_iter: int
    reads: tuple[Access, ...] = ()
    writes: tuple[Access, ...] = ()
    fn: Callable[[], list] | None = None
    # barrier arrivals the stage function itself must make, with counts
    contract: tuple[tuple[str, int], ...] = ()
    # arrivals the template makes on completion (e.g. load transaction)
    auto: tuple[tuple[str, int], ...] = ()
    async_: bool = False


def check_contract(stage: Stage, made: list[tuple[str, int]], kernel_name: str) -> None:
    got: dict[str, int] = {}
    for barrier, count in made:
        got[barrier] = got.get(barrier, 0) + count
    want = {b: 1 for b, _ in stage.contract}
    for barrier in sorted(set(got) | set(want)):
        if got.get(barrier, 0) != want.get(barrier, 0):
            what = "double" if got.get(barrier, 0) > want.get(barrier, 0) else "missing"
            raise ContractViolation(
                f"{kernel_name}: {stage.kind} of iteration {stage.ring_iter} made "
                f"{got.get(barrier, 0)} arrivals on {barrier} (expected "
                f"{want.get(barrier, 0)}; {what} arrive)"
            )


def stage_arrivals(stage: Stage) -> list[tuple[str, int]]:
    """(barrier, slot) pairs applied when a stage completes under the contract."""
    return list(stage.contract) + list(stage.auto)


# ---------------------------------------------------------------------------
# programs


@dataclass
class BlockContext:
    """Per-block state shared by the workers of one block."""

    block: int
    config: PipelineConfig
    kernel: KernelSpec | None
    globals: dict | None
    functional: bool
    # timed mode: fixed iteration count for a single task
    iterations: int | None = None
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    scratch: Any = None
    _tasks: dict = field(default_factory=dict)

    @property
    def has_store(self) -> bool:
        return self.kernel is not None and self.kernel.has_store

    @property
    def independent(self) -> bool:
        return self.kernel is not None and self.kernel.iteration_independent

    def expected_arrivals(self, barrier: str) -> int:
        if barrier in (INPUTS_FINISHED, OUTPUTS_ARRIVED):
            return 1 if self.independent else self.config.num_consumer_workers
        if barrier == BLOCK_SYNC:
            return self.config.num_consumer_workers
        return 1

    def task(self, task_iter: int) -> tuple[int, dict]:
        if task_iter not in self._tasks:
            if not self.functional:
                n = self.iterations if task_iter == 0 else -1
                self._tasks[task_iter] = (n, {})
            else:
                args = StageArgs(self.globals, self.config, self.block, task_iter, {},
                                 scratch=self.scratch)
                n = self.kernel.common_setup(args)
                self._tasks[task_iter] = (n, args.common)
        return self._tasks[task_iter]

    def args(self, task_iter: int, **kw) -> StageArgs:
        n, common = self.task(task_iter)
        return StageArgs(self.globals, self.config, self.block, task_iter, common,
                         scratch=self.scratch, num_iters=n, **kw)


def _fn(ctx: BlockContext, call: Callable[[StageArgs], Any], task_iter: int,
        sink: Callable[[Any], None] | None = None, **kw):
    if not ctx.functional or call is None:
        return None

    def run():
        args = ctx.args(task_iter, **kw)
        result = call(args)
        if sink is not None:
            sink(result)
        return args.arrivals

    return run


def _tasks(ctx: BlockContext):
    g = 0
    for task_iter in itertools.count():
        n, _ = ctx.task(task_iter)
        if n < 0:
            return
        yield task_iter, g, n
        g += n


def loader_program(ctx: BlockContext, p: int) -> Iterator:
    cfg = ctx.config
    nprod, stages = cfg.num_producer_workers, cfg.input_pipe_stages
    kernel = ctx.kernel
    for task_iter, g0, n in _tasks(ctx):
        for i in range(n):
            g = g0 + i
            if g % nprod != p:
                continue
            s, k = g % stages, g // stages
            if k > 0:
                yield Wait(INPUTS_FINISHED, s, k)
            fn = _fn(ctx, kernel.load if kernel else None, task_iter, iter=i, ring_iter=g,
                     input=ctx.inputs[s] if ctx.inputs else None, worker=p)
            yield Stage("load", g, task_iter, writes=(Access("in", s),), fn=fn,
                        auto=((INPUTS_ARRIVED, s),), async_=True)


def storer_program(ctx: BlockContext, p: int) -> Iterator:
    cfg = ctx.config
    nprod, stages = cfg.num_producer_workers, cfg.output_pipe_stages
    kernel = ctx.kernel
    for task_iter, g0, n in _tasks(ctx):
        for i in range(n):
            g = g0 + i
            if g % nprod != p:
                continue
            s, k = g % stages, g // stages
            yield Wait(OUTPUTS_ARRIVED, s, k + 1)
            fn = _fn(ctx, kernel.store if kernel else None, task_iter, iter=i, ring_iter=g,
                     output=ctx.outputs[s] if ctx.outputs else None, worker=p)
            yield Stage("store", g, task_iter, reads=(Access("out", s),), fn=fn,
                        contract=((OUTPUTS_FINISHED, s),), async_=True)


def _setup_stage(ctx: BlockContext, w: int, task_iter: int, box: dict) -> Stage:
    kernel = ctx.kernel

    def keep(state):
        box["state"] = state

    fn = _fn(ctx, kernel.consumer_setup if kernel else None, task_iter, worker=w, sink=keep)
    return Stage("setup", -1, task_iter, fn=fn)


def _finish_stage(ctx: BlockContext, w: int, task_iter: int, box: dict) -> Stage:
    kernel = ctx.kernel
    fn = None
    if ctx.functional and kernel.finish is not None:
        def fn():
            args = ctx.args(task_iter, worker=w, state=box.get("state"))
            kernel.finish(args)
            return args.arrivals
    return Stage("finish", -1, task_iter, fn=fn)


def _compute_stage(ctx: BlockContext, w: int, task_iter: int, i: int, g: int,
                   in_slot: int, out_slot: int | None, box: dict) -> Stage:
    kernel = ctx.kernel
    contract = [(INPUTS_FINISHED, in_slot)]
    writes: tuple[Access, ...] = ()
    if out_slot is not None:
        contract.append((OUTPUTS_ARRIVED, out_slot))
        writes = (Access("out", out_slot, None if ctx.independent else w),)
    fn = None
    if ctx.functional:
        def fn():
            args = ctx.args(task_iter, iter=i, ring_iter=g, worker=w, state=box.get("state"),
                            input=ctx.inputs[in_slot],
                            output=ctx.outputs[out_slot] if out_slot is not None else None)
            kernel.compute(args)
            box["state"] = args.state
            return args.arrivals
    return Stage("compute", g, task_iter, reads=(Access("in", in_slot),), writes=writes,
                 fn=fn, contract=tuple(contract))


def consumer_program(ctx: BlockContext, w: int) -> Iterator:
    cfg = ctx.config
    nw, in_st, out_st = cfg.num_consumer_workers, cfg.input_pipe_stages, cfg.output_pipe_stages
    for task_iter, g0, n in _tasks(ctx):
        box: dict = {}
        yield _setup_stage(ctx, w, task_iter, box)
        for i in range(n):
            g = g0 + i
            if ctx.independent and g % nw != w:
                continue
            s, k = g % in_st, g // in_st
            yield Wait(INPUTS_ARRIVED, s, k + 1)
            so = None
            if ctx.has_store:
                so, ko = g % out_st, g // out_st
                if ko > 0:
                    yield Wait(OUTPUTS_FINISHED, so, ko)
            yield _compute_stage(ctx, w, task_iter, i, g, s, so, box)
        yield _finish_stage(ctx, w, task_iter, box)


def sync_worker_program(ctx: BlockContext, w: int) -> Iterator:
    """Fused producer/consumer: load, barrier, compute, barrier, store. No overlap."""
    kernel = ctx.kernel
    nw = ctx.config.num_consumer_workers
    for task_iter, g0, n in _tasks(ctx):
        box: dict = {}
        yield _setup_stage(ctx, w, task_iter, box)
        for i in range(n):
            g = g0 + i
            if ctx.independent:
                if g % nw != w:
                    continue
                s = w
            else:
                s = 0
            if ctx.independent or w == 0:
                fn = _fn(ctx, kernel.load if kernel else None, task_iter, iter=i, ring_iter=g,
                         input=ctx.inputs[s] if ctx.inputs else None, worker=w)
                yield Stage("load", g, task_iter, writes=(Access("in", s),), fn=fn,
                            auto=((INPUTS_ARRIVED, s),))
            if not ctx.independent:
                yield Arrive(BLOCK_SYNC, 0)
                yield Wait(BLOCK_SYNC, 0, 2 * g + 1)
            yield _compute_stage(ctx, w, task_iter, i, g, s, s if ctx.has_store else None, box)
            if not ctx.independent:
                yield Arrive(BLOCK_SYNC, 0)
                yield Wait(BLOCK_SYNC, 0, 2 * g + 2)
            if ctx.has_store and (ctx.independent or w == 0):
                fn = _fn(ctx, kernel.store, task_iter, iter=i, ring_iter=g,
                         output=ctx.outputs[s] if ctx.outputs else None, worker=w)
                yield Stage("store", g, task_iter, reads=(Access("out", s),), fn=fn,
                            contract=((OUTPUTS_FINISHED, s),))
        yield _finish_stage(ctx, w, task_iter, box)


def block_workers(ctx: BlockContext) -> list[tuple[str, Iterator]]:
    """(name, generator) for every worker of one block."""
    cfg = ctx.config
    b = ctx.block
    out: list[tuple[str, Iterator]] = []
    if cfg.synchronous:
        for w in range(cfg.num_consumer_workers):
            out.append((f"b{b}.worker{w}", sync_worker_program(ctx, w)))
        return out
    for p in range(cfg.num_producer_workers):
        out.append((f"b{b}.producer{p}.load", loader_program(ctx, p)))
        if ctx.has_store:
            out.append((f"b{b}.producer{p}.store", storer_program(ctx, p)))
    for w in range(cfg.num_consumer_workers):
        out.append((f"b{b}.consumer{w}", consumer_program(ctx, w)))
    return out


def ring_slots(config: PipelineConfig, independent: bool) -> tuple[int, int]:
    """(input slots, output slots) to allocate for `config`."""
    if config.synchronous:
        n = config.num_consumer_workers if independent else 1
        return n, n
    return config.input_pipe_stages, config.output_pipe_stages
