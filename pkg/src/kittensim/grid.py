"""Grid scheduling: block orders, persistent vs relaunched grids, and an L2 replay.

The L2 is a fully associative LRU over fixed-size lines. Blocks run in waves
of `num_sms` consecutive blocks of the order; inside a wave, blocks take
turns issuing one tile access each (round robin), which is how blocks that
share data in the same wave end up hitting in L2.
"""

from __future__ import annotations

import math
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

Coord = tuple
TileAccess = Sequence[tuple[int, int]]  # (address, nbytes) ranges


# ---------------------------------------------------------------------------
# block orders


def row_major_order(rblocks: int, cblocks: int) -> list[tuple[int, int]]:
    return [(r, c) for r in range(rblocks) for c in range(cblocks)]


def supergroup_order(rblocks: int, cblocks: int, super_m: int) -> list[tuple[int, int]]:
    """Walk SUPER_M rows down each column strip, leftover rows last."""
    if rblocks <= 0 or cblocks <= 0 or super_m <= 0:
        raise ValueError("extents and SUPER_M must be positive")
    super_rows = (rblocks // super_m) * super_m
    final_rows = rblocks - super_rows
    super_repeat = super_m * cblocks
    out = []
    for task_id in range(rblocks * cblocks):
        if task_id < super_rows * cblocks:
            out.append((super_m * (task_id // super_repeat) + task_id % super_m,
                        (task_id % super_repeat) // super_m))
        else:
            remainder_id = task_id - super_rows * cblocks
            out.append((super_rows + remainder_id % final_rows, remainder_id // final_rows))
    return out


_AXES = ("B", "H", "N")


def attention_order(b: int, h: int, n_blocks: int, axes: Sequence[str]) -> list[tuple[int, int, int]]:
    """(batch, head, q-block) coords; axes[0] varies fastest, like grid x."""
    axes = tuple(a.upper() for a in axes)
    if sorted(axes) != sorted(_AXES):
        raise ValueError(f"axes must be a permutation of {_AXES}, got {axes}")
    extent = {"B": b, "H": h, "N": n_blocks}
    fast, mid, slow = axes
    out = []
    for z in range(extent[slow]):
        for y in range(extent[mid]):
            for x in range(extent[fast]):
                idx = {fast: x, mid: y, slow: z}
                out.append((idx["B"], idx["H"], idx["N"]))
    return out


@dataclass(frozen=True)
class RowMajor:
    rblocks: int
    cblocks: int

    def blocks(self) -> list[tuple[int, int]]:
        return row_major_order(self.rblocks, self.cblocks)

    def label(self) -> str:
        return "row_major"


@dataclass(frozen=True)
class SuperGrouped:
    rblocks: int
    cblocks: int
    super_m: int

    def __post_init__(self):
        if self.super_m < 1:
            raise ValueError("SUPER_M must be >= 1")

    def blocks(self) -> list[tuple[int, int]]:
        return supergroup_order(self.rblocks, self.cblocks, self.super_m)

    def label(self) -> str:
        return f"supergroup_{self.super_m}"


@dataclass(frozen=True)
class AttentionOrder:
    batch: int
    heads: int
    n_blocks: int
    axes: tuple[str, str, str] = ("N", "H", "B")

    def blocks(self) -> list[tuple[int, int, int]]:
        return attention_order(self.batch, self.heads, self.n_blocks, self.axes)

    def label(self) -> str:
        return "attention_" + "".join(self.axes)


BlockOrder = RowMajor | SuperGrouped | AttentionOrder


def is_permutation(order: Sequence[Coord], universe: Sequence[Coord]) -> bool:
    return len(order) == len(set(order)) and set(order) == set(universe)


# ---------------------------------------------------------------------------
# persistent grids


@dataclass
class PersistentResult:
    per_sm_tasks: list[list[int]]
    makespan_persistent: float
    makespan_relaunch: float
    waves: int

    @property
    def advantage(self) -> float:
        return self.makespan_relaunch / self.makespan_persistent


def persistent_assign(num_tasks: int, num_sms: int, per_task_time: float | Sequence[float],
                      setup_cost: float) -> PersistentResult:
    """Persistent: one block per SM, task_id = task_iter * num_sms + sm, one setup
    per SM. Relaunch: ceil(tasks / SMs) waves, each paying setup again."""
    if num_tasks <= 0 or num_sms <= 0:
        raise ValueError("num_tasks and num_sms must be positive")
    if isinstance(per_task_time, (int, float)):
        times = [float(per_task_time)] * num_tasks
    else:
        times = [float(t) for t in per_task_time]
        if len(times) != num_tasks:
            raise ValueError("per_task_time length must equal num_tasks")
    per_sm = [list(range(sm, num_tasks, num_sms)) for sm in range(num_sms)]
    active = [tasks for tasks in per_sm if tasks]
    persistent = setup_cost + max(math.fsum(times[t] for t in tasks) for tasks in active)
    waves = math.ceil(num_tasks / num_sms)
    relaunch = math.fsum(setup_cost + max(times[w * num_sms:(w + 1) * num_sms])
                         for w in range(waves))
    return PersistentResult(per_sm, persistent, relaunch, waves)


# ---------------------------------------------------------------------------
# L2 replay


@dataclass(frozen=True)
class L2Config:
    capacity_bytes: float = 50 * 1024 * 1024  # math.inf for compulsory-only
    line_bytes: int = 128
    policy: str = "lru"

    def __post_init__(self):
        if self.line_bytes <= 0:
            raise ValueError("line_bytes must be positive")
        if self.policy != "lru":
            raise ValueError("only fully associative LRU is modeled")
        if not math.isinf(self.capacity_bytes):
            if self.capacity_bytes <= 0 or self.capacity_bytes % self.line_bytes:
                raise ValueError("capacity must be a positive multiple of the line size")

    @property
    def capacity_lines(self) -> float:
        return math.inf if math.isinf(self.capacity_bytes) else self.capacity_bytes // self.line_bytes


@dataclass
class TrafficReport:
    order: str
    hbm_bytes_fetched: int
    l2_hits: int
    l2_misses: int
    line_bytes: int
    per_block_misses: list[int] = field(default_factory=list)
    bytes_written: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.l2_hits + self.l2_misses
        return self.l2_hits / total if total else 0.0

    def to_dict(self) -> dict:
        return {"order": self.order, "hbm_bytes_fetched": self.hbm_bytes_fetched,
                "l2_hits": self.l2_hits, "l2_misses": self.l2_misses,
                "hit_rate": self.hit_rate, "line_bytes": self.line_bytes,
                "bytes_written": self.bytes_written,
                "per_block_misses": list(self.per_block_misses)}


def _lines(access: TileAccess, line: int) -> list[int]:
    out = []
    for addr, nbytes in access:
        out.extend(range(addr // line, (addr + nbytes - 1) // line + 1))
    return out


def replay_lines(lines: Sequence[int], cfg: L2Config) -> tuple[int, int]:
    """(hits, misses) for a plain line-address stream."""
    cache: OrderedDict[int, None] = OrderedDict()
    cap = cfg.capacity_lines
    hits = misses = 0
    for ln in lines:
        if ln in cache:
            cache.move_to_end(ln)
            hits += 1
        else:
            misses += 1
            cache[ln] = None
            if len(cache) > cap:
                cache.popitem(last=False)
    return hits, misses


def simulate_l2(order: BlockOrder | Sequence[Coord], footprint: Callable[[Coord], list[TileAccess]],
                cfg: L2Config, num_sms: int = 132, shuffle_seed: int | None = None,
                writes: Callable[[Coord], int] | None = None) -> TrafficReport:
    """Replay every block's tile reads through the L2.

    `footprint(block)` lists the block's tile accesses in program order, each a
    list of (address, nbytes) ranges. `writes(block)` optionally returns bytes
    written (counted, never cached). With `shuffle_seed`, blocks within a wave
    take turns in a seeded random order instead of strict round robin.
    """
    blocks = order.blocks() if hasattr(order, "blocks") else list(order)
    label = order.label() if hasattr(order, "label") else "custom"
    line = cfg.line_bytes
    cache: OrderedDict[int, None] = OrderedDict()
    cap = cfg.capacity_lines
    hits = misses = 0
    per_block = [0] * len(blocks)
    rng = random.Random(shuffle_seed) if shuffle_seed is not None else None
    written = 0
    for w0 in range(0, len(blocks), num_sms):
        wave = list(range(w0, min(w0 + num_sms, len(blocks))))
        streams = {i: footprint(blocks[i]) for i in wave}
        if any(not s for s in streams.values()):
            raise ValueError("every block needs a nonempty footprint")
        depth = max(len(s) for s in streams.values())
        for j in range(depth):
            turn = list(wave)
            if rng is not None:
                rng.shuffle(turn)
            for i in turn:
                if j >= len(streams[i]):
                    continue
                for ln in _lines(streams[i][j], line):
                    if ln in cache:
                        cache.move_to_end(ln)
                        hits += 1
                    else:
                        misses += 1
                        per_block[i] += 1
                        cache[ln] = None
                        if len(cache) > cap:
                            cache.popitem(last=False)
        if writes is not None:
            written += sum(writes(blocks[i]) for i in wave)
    return TrafficReport(label, misses * line, hits, misses, line, per_block, written)


# ---------------------------------------------------------------------------
# footprint generators


def gemm_footprint(m: int, n: int, k: int, block_m: int, block_n: int, tile_k: int = 64,
                   elem_bytes: int = 2) -> Callable[[tuple[int, int]], list[TileAccess]]:
    """Block (r, c) reads an A row-panel and a B column-panel, one K step at a time.
    A is m x k and B is k x n, both row-major, B placed after A."""
    for ext, blk in ((m, block_m), (n, block_n), (k, tile_k)):
        if ext % blk:
            raise ValueError("matrix extents must be multiples of the block shape")
    b_base = m * k * elem_bytes
    memo: dict = {}

    def a_tile(r: int, kk: int):
        key = ("A", r, kk)
        if key not in memo:
            memo[key] = tuple(((row * k + kk * tile_k) * elem_bytes, tile_k * elem_bytes)
                              for row in range(r * block_m, (r + 1) * block_m))
        return memo[key]

    def b_tile(kk: int, c: int):
        key = ("B", kk, c)
        if key not in memo:
            memo[key] = tuple((b_base + (row * n + c * block_n) * elem_bytes, block_n * elem_bytes)
                              for row in range(kk * tile_k, (kk + 1) * tile_k))
        return memo[key]

    def footprint(block):
        r, c = block
        out = []
        for kk in range(k // tile_k):
            out.append(a_tile(r, kk))
            out.append(b_tile(kk, c))
        return out

    return footprint


def attention_footprint(batch: int, heads: int, seq: int, head_dim: int, q_rows: int = 64,
                        kv_rows: int = 128, elem_bytes: int = 2
                        ) -> Callable[[tuple[int, int, int]], list[TileAccess]]:
    """Block (b, h, q) reads its own Q tile, then every K/V chunk of head (b, h).
    Q, K, V are separate contiguous (batch, heads, seq, head_dim) tensors."""
    if seq % q_rows or seq % kv_rows:
        raise ValueError("seq must be a multiple of the tile rows")
    tensor_bytes = batch * heads * seq * head_dim * elem_bytes
    row_bytes = head_dim * elem_bytes

    def rows(base: int, b: int, h: int, r0: int, nrows: int):
        start = base + ((b * heads + h) * seq + r0) * row_bytes
        return ((start, nrows * row_bytes),)

    def footprint(block):
        b, h, q = block
        out = [rows(0, b, h, q * q_rows, q_rows)]
        for chunk in range(seq // kv_rows):
            out.append(rows(tensor_bytes, b, h, chunk * kv_rows, kv_rows))
            out.append(rows(2 * tensor_bytes, b, h, chunk * kv_rows, kv_rows))
        return out

    return footprint
