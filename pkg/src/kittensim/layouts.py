"""Shared-memory tile layouts, the bank model, and a brute-force conflict analyzer.

Six layouts are modeled. Offsets are in bytes relative to a tile base that
is assumed aligned to ``base_align`` (swizzles need at least 128 bytes).

The three hardware swizzles XOR address bits [7+k-1:7] into bits
[4+k-1:4] (k = 1, 2, 3 for 32/64/128 byte swizzling), so they move whole
16-byte atoms and never leave the naive footprint.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

NUM_BANKS = 32
BANK_WORD_BYTES = 4
SEGMENT_BYTES = 16
PHASE_THREADS = 8  # 16-byte accesses are served 8 threads at a time
WARP_SIZE = 32


class UnsupportedTileError(ValueError):
    pass


class SwizzleMode(enum.Enum):
    NAIVE = "naive"
    PADDED = "padded"
    ROW_XOR = "rowxor"
    SW32 = "sw32"
    SW64 = "sw64"
    SW128 = "sw128"

    @property
    def is_hw_swizzle(self) -> bool:
        return self in (SwizzleMode.SW32, SwizzleMode.SW64, SwizzleMode.SW128)

    @property
    def swizzle_bytes(self) -> int:
        return {SwizzleMode.SW32: 32, SwizzleMode.SW64: 64, SwizzleMode.SW128: 128}[self]

    @classmethod
    def parse(cls, name: str) -> SwizzleMode:
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown layout mode {name!r}; choose from {[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class SharedLayout:
    rows: int
    cols: int
    elem_bytes: int = 2
    mode: SwizzleMode = SwizzleMode.NAIVE
    # only used by PADDED; default is one bank word
    pad_bytes: int = BANK_WORD_BYTES
    base_align: int = 1024

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("layout shape must be positive")
        if self.elem_bytes not in (2, 4):
            raise ValueError("elem_bytes must be 2 or 4")
        if self.mode is SwizzleMode.PADDED:
            if self.pad_bytes <= 0 or self.pad_bytes % self.elem_bytes:
                raise ValueError("pad_bytes must be a positive multiple of elem_bytes")
        if self.mode.is_hw_swizzle:
            width = self.mode.swizzle_bytes
            if self.row_bytes % width:
                raise UnsupportedTileError(
                    f"{self.mode.value} needs a row width multiple of {width} bytes, "
                    f"got {self.row_bytes}"
                )
        if self.mode.is_hw_swizzle or self.mode is SwizzleMode.ROW_XOR:
            if self.base_align < 128:
                raise ValueError("swizzled layouts need base_align >= 128")

    @property
    def row_bytes(self) -> int:
        return self.cols * self.elem_bytes

    @property
    def row_pitch(self) -> int:
        if self.mode is SwizzleMode.PADDED:
            return self.row_bytes + self.pad_bytes
        return self.row_bytes

    @property
    def footprint_bytes(self) -> int:
        return self.rows * self.row_pitch

    @property
    def naive_footprint_bytes(self) -> int:
        return self.rows * self.row_bytes


def _swizzle(linear, mode: SwizzleMode):
    window = {SwizzleMode.SW32: 256, SwizzleMode.SW64: 512, SwizzleMode.SW128: 1024}[mode]
    return linear ^ (((linear % window) >> 7) << 4)


def element_offset(layout: SharedLayout, r: int, c: int) -> int:
    """Byte offset of element (r, c)."""
    if not (0 <= r < layout.rows and 0 <= c < layout.cols):
        raise IndexError(f"({r}, {c}) outside {layout.rows}x{layout.cols} tile")
    eb = layout.elem_bytes
    mode = layout.mode
    if mode is SwizzleMode.PADDED:
        return r * layout.row_pitch + c * eb
    linear = (r * layout.cols + c) * eb
    if mode is SwizzleMode.NAIVE:
        return linear
    if mode is SwizzleMode.ROW_XOR:
        return linear ^ (r << 2)
    return int(_swizzle(linear, mode))


@lru_cache(maxsize=256)
def _offset_table(layout: SharedLayout) -> np.ndarray:
    r = np.arange(layout.rows, dtype=np.int64)[:, None]
    c = np.arange(layout.cols, dtype=np.int64)[None, :]
    eb = layout.elem_bytes
    mode = layout.mode
    if mode is SwizzleMode.PADDED:
        table = r * layout.row_pitch + c * eb
    else:
        table = (r * layout.cols + c) * eb
        if mode is SwizzleMode.ROW_XOR:
            table = table ^ (r << 2)
        elif mode.is_hw_swizzle:
            table = _swizzle(table, mode)
    table = np.ascontiguousarray(table)
    table.setflags(write=False)
    return table


def offset_table(layout: SharedLayout) -> np.ndarray:
    """rows x cols array of byte offsets (read-only, cached)."""
    return _offset_table(layout)


def bank_of(offset: int, num_banks: int = NUM_BANKS, word_bytes: int = BANK_WORD_BYTES) -> int:
    if offset < 0:
        raise ValueError("offset must be nonnegative")
    return (offset // word_bytes) % num_banks


def select_swizzle(rows: int, cols: int, elem_bytes: int) -> SwizzleMode:
    """Widest hardware swizzle the row width allows."""
    if rows <= 0 or cols <= 0 or elem_bytes <= 0:
        raise ValueError("shape must be positive")
    width = cols * elem_bytes
    for mode in (SwizzleMode.SW128, SwizzleMode.SW64, SwizzleMode.SW32):
        if width % mode.swizzle_bytes == 0:
            return mode
    raise UnsupportedTileError(f"width not a multiple of 32 bytes ({width} bytes)")


def check_bijective(layout: SharedLayout) -> bool:
    table = offset_table(layout).ravel()
    if np.unique(table).size != table.size:
        return False
    if layout.mode.is_hw_swizzle or layout.mode is SwizzleMode.ROW_XOR:
        naive = offset_table(SharedLayout(layout.rows, layout.cols, layout.elem_bytes)).ravel()
        return bool(np.array_equal(np.sort(table), np.sort(naive)))
    return True


# ---------------------------------------------------------------------------
# access patterns


@dataclass(frozen=True)
class RowLinear:
    """Up to 32 threads read consecutive bank words along one row."""

    row: int
    start_col: int = 0


@dataclass(frozen=True)
class ColumnWord:
    """Thread t reads the bank word holding element (t, col)."""

    col: int


@dataclass(frozen=True)
class TensorCoreSegments:
    """ldmatrix-style operand fetch.

    Thread t reads the 16-byte segment at row t % 16 and element column
    (t // 16) * (16 / elem_bytes); 8 threads are served per phase. This is
    a model of the tensor-core operand fetch, not a decoded instruction.
    """


AccessPattern = RowLinear | ColumnWord | TensorCoreSegments


@dataclass(frozen=True)
class Access:
    thread: int
    byte_set: frozenset[int]
    wide: bool  # 16-byte segment access


def _element_bytes(table: np.ndarray, eb: int, r: int, cs) -> set[int]:
    out: set[int] = set()
    for c in cs:
        base = int(table[r, c])
        out.update(range(base, base + eb))
    return out


def expand_pattern(layout: SharedLayout, pattern: AccessPattern) -> list[list[Access]]:
    """Phases of per-thread byte sets for `pattern` on `layout`."""
    table = offset_table(layout)
    eb = layout.elem_bytes
    if isinstance(pattern, RowLinear):
        if not (0 <= pattern.row < layout.rows and 0 <= pattern.start_col < layout.cols):
            raise IndexError(f"RowLinear{pattern.row, pattern.start_col} out of range")
        per_word = BANK_WORD_BYTES // eb
        if pattern.start_col % per_word:
            raise IndexError("RowLinear start_col must be word aligned")
        nthreads = min(WARP_SIZE, (layout.cols - pattern.start_col) // per_word)
        phase = []
        for t in range(nthreads):
            c0 = pattern.start_col + t * per_word
            phase.append(Access(t, frozenset(_element_bytes(table, eb, pattern.row,
                                                            range(c0, c0 + per_word))), False))
        return [phase]
    if isinstance(pattern, ColumnWord):
        if not 0 <= pattern.col < layout.cols:
            raise IndexError(f"ColumnWord({pattern.col}) out of range")
        phase = []
        for t in range(min(WARP_SIZE, layout.rows)):
            off = int(table[t, pattern.col])
            word = off - off % BANK_WORD_BYTES
            phase.append(Access(t, frozenset(range(word, word + BANK_WORD_BYTES)), False))
        return [phase]
    if isinstance(pattern, TensorCoreSegments):
        seg_elems = SEGMENT_BYTES // eb
        if layout.rows < 16 or layout.cols < 2 * seg_elems:
            raise IndexError("TensorCoreSegments needs at least 16 rows and 32 bytes of width")
        phases: list[list[Access]] = []
        for t in range(WARP_SIZE):
            r, c0 = t % 16, (t // 16) * seg_elems
            acc = Access(t, frozenset(_element_bytes(table, eb, r, range(c0, c0 + seg_elems))), True)
            if t % PHASE_THREADS == 0:
                phases.append([])
            phases[-1].append(acc)
        return phases
    raise TypeError(f"unknown access pattern {pattern!r}")


@dataclass(frozen=True)
class ConflictReport:
    max_way: int
    per_phase_way: list[int] = field(default_factory=list)
    worst_bank: int = 0
    misaligned_segments: int = 0

    def to_dict(self) -> dict:
        return {"max_way": self.max_way, "per_phase_way": list(self.per_phase_way),
                "worst_bank": self.worst_bank, "misaligned_segments": self.misaligned_segments}


def _is_aligned_segment(byte_set: frozenset[int]) -> bool:
    base = min(byte_set)
    return base % SEGMENT_BYTES == 0 and byte_set == frozenset(range(base, base + SEGMENT_BYTES))


def analyze_conflicts(layout: SharedLayout, pattern: AccessPattern,
                      num_banks: int = NUM_BANKS,
                      word_bytes: int = BANK_WORD_BYTES) -> ConflictReport:
    """Count, per phase, the most distinct words any one bank must serve.

    Threads touching the same word are broadcast and count once.
    """
    phases = expand_pattern(layout, pattern)
    per_phase = []
    worst = (0, 0)  # (way, bank)
    misaligned = 0
    for phase in phases:
        words_by_bank: dict[int, set[int]] = {}
        for acc in phase:
            if acc.wide and not _is_aligned_segment(acc.byte_set):
                misaligned += 1
            for word in {b // word_bytes for b in acc.byte_set}:
                words_by_bank.setdefault(word % num_banks, set()).add(word)
        if words_by_bank:
            bank, words = max(sorted(words_by_bank.items()), key=lambda kv: len(kv[1]))
            way = len(words)
        else:
            bank, way = 0, 1
        per_phase.append(way)
        if way > worst[0]:
            worst = (way, bank)
    return ConflictReport(max_way=max(per_phase), per_phase_way=per_phase,
                          worst_bank=worst[1], misaligned_segments=misaligned)


def parse_pattern(name: str, row: int = 0, col: int = 0) -> AccessPattern:
    name = name.lower()
    if name in ("tensorcore", "tensor-core", "tc"):
        return TensorCoreSegments()
    if name in ("row", "rowlinear"):
        return RowLinear(row, col)
    if name in ("column", "col", "columnword"):
        return ColumnWord(col)
    raise ValueError(f"unknown access pattern {name!r}")
