"""Numeric tiles at register, shared and global level, plus the bulk tile ops.

All arithmetic is float32. bf16 is emulated: values are stored as float32
already rounded (nearest-even) to bf16, and rounding happens whenever a
value lands in a bf16 tile.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from kittensim.layouts import SharedLayout, SwizzleMode, offset_table, select_swizzle

BASE = 16


class DType(enum.Enum):
    FP32 = "fp32"
    BF16 = "bf16"

    @property
    def nbytes(self) -> int:
        return 4 if self is DType.FP32 else 2

    @classmethod
    def parse(cls, v: Union[str, DType]) -> DType:
        return v if isinstance(v, DType) else cls(v.lower())


class Major(enum.Enum):
    ROW = "row"
    COL = "col"


class Orientation(enum.Enum):
    COL_VEC = "col"  # one value per tile row
    ROW_VEC = "row"  # one value per tile column


class TileShapeError(ValueError):
    pass


def round_bf16(x: np.ndarray) -> np.ndarray:
    """Round float32 values to the nearest bf16 (ties to even), returned as float32."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    u = x.view(np.uint32)
    bias = ((u >> 16) & 1) + np.uint32(0x7FFF)
    rounded = ((u + bias) & np.uint32(0xFFFF0000)).astype(np.uint32)
    out = rounded.view(np.float32).copy()
    nan = np.isnan(x)
    if nan.any():
        out[nan] = np.nan
    return out


def _as_dtype(x: np.ndarray, dtype: DType) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return round_bf16(x) if dtype is DType.BF16 else x.copy()


@dataclass(eq=False)
class Tile:
    data: np.ndarray
    dtype: DType = DType.FP32
    major: Major = Major.ROW

    def __post_init__(self):
        self.dtype = DType.parse(self.dtype)
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise TileShapeError("tile data must be 2-D")
        r, c = data.shape
        if r < BASE or c < BASE or r % BASE or c % BASE:
            raise TileShapeError(f"tile extents must be positive multiples of 16, got {r}x{c}")
        self.data = _as_dtype(data, self.dtype)

    @classmethod
    def zeros(cls, rows: int, cols: int, dtype=DType.FP32, major=Major.ROW) -> Tile:
        return cls(np.zeros((rows, cols), np.float32), dtype, major)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Tile({self.rows}x{self.cols}, {self.dtype.value}, {self.major.value}-major)"


@dataclass(eq=False)
class TileVector:
    data: np.ndarray
    orientation: Orientation = Orientation.COL_VEC
    dtype: DType = DType.FP32

    def __post_init__(self):
        self.dtype = DType.parse(self.dtype)
        data = np.asarray(self.data)
        if data.ndim != 1 or data.size < BASE or data.size % BASE:
            raise TileShapeError("vector length must be a positive multiple of 16")
        self.data = _as_dtype(data, self.dtype)

    @classmethod
    def full(cls, n: int, value: float, orientation=Orientation.COL_VEC) -> TileVector:
        return cls(np.full(n, value, np.float32), orientation)

    @property
    def length(self) -> int:
        return self.data.size


Operand = Union[Tile, TileVector]


def _like(ref: Operand, data: np.ndarray, dtype: DType | None = None) -> Operand:
    dtype = dtype or ref.dtype
    if isinstance(ref, Tile):
        return Tile(data, dtype, ref.major)
    return TileVector(data, ref.orientation, dtype)


def _check_same(a: Operand, b: Operand):
    if type(a) is not type(b):
        raise TileShapeError("operands must both be tiles or both be vectors")
    if a.data.shape != b.data.shape:
        raise TileShapeError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    if isinstance(a, Tile) and a.major is not b.major:
        raise TileShapeError("major mismatch")
    if isinstance(a, TileVector) and a.orientation is not b.orientation:
        raise TileShapeError("orientation mismatch")


_UNARY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": np.exp,
    "exp2": np.exp2,
}
_BINARY: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def elementwise(op: str, *operands, scalar: float | None = None,
                dtype: DType | str | None = None) -> Operand:
    """Apply `op` elementwise; the result takes the first operand's dtype
    unless `dtype` is given."""
    if not operands:
        raise TypeError("elementwise needs at least one operand")
    a = operands[0]
    out_dtype = DType.parse(dtype) if dtype is not None else a.dtype
    if op == "zero":
        return _like(a, np.zeros_like(a.data), out_dtype)
    if op == "copy_cast":
        return _like(a, a.data, out_dtype)
    if op == "scalar_mul":
        if scalar is None:
            raise TypeError("scalar_mul needs scalar=")
        return _like(a, a.data * np.float32(scalar), out_dtype)
    if op in _UNARY:
        return _like(a, _UNARY[op](a.data), out_dtype)
    if op in _BINARY:
        if len(operands) != 2:
            raise TypeError(f"{op} takes two operands")
        _check_same(a, operands[1])
        return _like(a, _BINARY[op](a.data, operands[1].data), out_dtype)
    raise ValueError(f"unknown elementwise op {op!r}")


def zero(t: Operand) -> Operand:
    return elementwise("zero", t)


def copy(t: Operand, dtype: DType | str | None = None) -> Operand:
    return elementwise("copy_cast", t, dtype=dtype)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    if isinstance(b, (int, float, np.floating)):
        return elementwise("scalar_mul", a, scalar=float(b))
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


def exp(a):
    return elementwise("exp", a)


def exp2(a):
    return elementwise("exp2", a)


def neg_infty(n: int) -> TileVector:
    return TileVector.full(n, -np.inf)


# ---------------------------------------------------------------------------
# row broadcasts and reductions


def _check_colvec(t: Tile, v: TileVector):
    if v.orientation is not Orientation.COL_VEC or v.length != t.rows:
        raise TileShapeError(f"need a column vector of length {t.rows}")


def broadcast_row(op: str, t: Tile, v: TileVector) -> Tile:
    """result[r, c] = t[r, c] (op) v[r]."""
    _check_colvec(t, v)
    fn = {"sub_row": np.subtract, "div_row": np.divide, "mul_row": np.multiply}.get(op)
    if fn is None:
        raise ValueError(f"unknown broadcast op {op!r}")
    return Tile(fn(t.data, v.data[:, None]), t.dtype, t.major)


def sub_row(t, v):
    return broadcast_row("sub_row", t, v)


def div_row(t, v):
    return broadcast_row("div_row", t, v)


def mul_row(t, v):
    return broadcast_row("mul_row", t, v)


def reduce_row(op: str, t: Tile, acc: TileVector) -> TileVector:
    """Accumulate a per-row reduction of `t` onto `acc` (sequential along columns)."""
    _check_colvec(t, acc)
    if op == "row_max_accum":
        out = np.maximum(acc.data, t.data.max(axis=1))
    elif op == "row_sum_accum":
        # cumsum is strictly left-to-right, so the order is fixed
        out = np.cumsum(np.concatenate([acc.data[:, None], t.data], axis=1), axis=1)[:, -1]
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return TileVector(out, Orientation.COL_VEC, acc.dtype)


def row_max(t, acc):
    return reduce_row("row_max_accum", t, acc)


def row_sum(t, acc):
    return reduce_row("row_sum_accum", t, acc)


# ---------------------------------------------------------------------------
# tensor-core multiply


class LayoutContractError(TypeError):
    """Operand majors or shapes violate an mma contract."""


def mma(kind: str, accumulate: bool, a: Tile, b: Tile, c_in: Tile) -> Tile:
    """C = A @ B (AB) or A @ B^T (ABt), plus C_in if accumulating.

    AB needs A row-major and B column-major; ABt needs both row-major.
    """
    if kind == "AB":
        if a.major is not Major.ROW or b.major is not Major.COL:
            raise LayoutContractError("mma_AB requires A row-major and B col-major")
        if a.cols != b.rows:
            raise LayoutContractError(f"mma_AB inner dims {a.cols} != {b.rows}")
        prod = a.data @ b.data
    elif kind == "ABt":
        if a.major is not Major.ROW or b.major is not Major.ROW:
            raise LayoutContractError("mma_ABt requires both operands row-major")
        if a.cols != b.cols:
            raise LayoutContractError(f"mma_ABt inner dims {a.cols} != {b.cols}")
        prod = a.data @ b.data.T
    else:
        raise ValueError(f"unknown mma kind {kind!r}")
    if c_in.shape != prod.shape:
        raise LayoutContractError(f"accumulator shape {c_in.shape} != result {prod.shape}")
    out = c_in.data + prod if accumulate else prod
    return Tile(out, c_in.dtype, Major.ROW)


def mma_AB(c: Tile, a: Tile, b: Tile) -> Tile:
    return mma("AB", True, a, b, c)


def mm_AB(a: Tile, b: Tile, like: Tile) -> Tile:
    return mma("AB", False, a, b, like)


def mma_ABt(c: Tile, a: Tile, b: Tile) -> Tile:
    return mma("ABt", True, a, b, c)


def mm_ABt(a: Tile, b: Tile, like: Tile) -> Tile:
    return mma("ABt", False, a, b, like)


def swap_layout(t: Tile) -> Tile:
    flipped = Major.COL if t.major is Major.ROW else Major.ROW
    return Tile(t.data, t.dtype, flipped)


def concat_cols(parts: list[Tile]) -> Tile:
    if not parts:
        raise TileShapeError("nothing to concatenate")
    ref = parts[0]
    for p in parts[1:]:
        if p.rows != ref.rows or p.dtype is not ref.dtype or p.major is not ref.major:
            raise TileShapeError("concat_cols parts disagree")
    return Tile(np.concatenate([p.data for p in parts], axis=1), ref.dtype, ref.major)


def split_cols(t: Tile, n: int) -> list[Tile]:
    if t.cols % n:
        raise TileShapeError(f"cannot split {t.cols} columns into {n}")
    w = t.cols // n
    return [Tile(t.data[:, i * w:(i + 1) * w], t.dtype, t.major) for i in range(n)]


# ---------------------------------------------------------------------------
# shared and global memory


@dataclass(eq=False)
class SharedTileHandle:
    """A tile's bytes in shared memory, placed by `layout`."""

    rows: int
    cols: int
    dtype: DType = DType.BF16
    layout: SharedLayout | None = None
    buffer: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.dtype = DType.parse(self.dtype)
        if self.rows < BASE or self.cols < BASE or self.rows % BASE or self.cols % BASE:
            raise TileShapeError(f"shared tile extents must be multiples of 16, got {self.rows}x{self.cols}")
        if self.layout is None:
            mode = select_swizzle(self.rows, self.cols, self.dtype.nbytes)
            self.layout = SharedLayout(self.rows, self.cols, self.dtype.nbytes, mode)
        lay = self.layout
        if (lay.rows, lay.cols, lay.elem_bytes) != (self.rows, self.cols, self.dtype.nbytes):
            raise TileShapeError("layout shape does not match tile shape")
        self.buffer = np.zeros(lay.footprint_bytes, dtype=np.uint8)

    @property
    def nbytes(self) -> int:
        return self.rows * self.cols * self.dtype.nbytes

    def _words(self) -> tuple[np.ndarray, np.ndarray]:
        word_t = np.uint32 if self.dtype is DType.FP32 else np.uint16
        return self.buffer.view(word_t), offset_table(self.layout) // self.dtype.nbytes

    def write(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float32)
        if values.shape != (self.rows, self.cols):
            raise TileShapeError(f"expected {(self.rows, self.cols)}, got {values.shape}")
        words, idx = self._words()
        bits = _as_dtype(values, self.dtype).view(np.uint32)
        if self.dtype is DType.BF16:
            bits = (bits >> 16).astype(np.uint16)
        words[idx] = bits

    def read(self) -> np.ndarray:
        words, idx = self._words()
        bits = words[idx].astype(np.uint32)
        if self.dtype is DType.BF16:
            bits = bits << 16
        return bits.view(np.float32).copy()


@dataclass(eq=False)
class GlobalTensor:
    """4-D tensor (batch, depth, rows, cols) in HBM."""

    data: np.ndarray
    dtype: DType = DType.FP32

    def __post_init__(self):
        self.dtype = DType.parse(self.dtype)
        data = np.asarray(self.data)
        if data.ndim > 4:
            raise TileShapeError("global tensors have at most 4 dims")
        data = data.reshape((1,) * (4 - data.ndim) + data.shape)
        self.data = _as_dtype(data, self.dtype)

    @classmethod
    def zeros(cls, dims, dtype=DType.FP32) -> GlobalTensor:
        return cls(np.zeros(dims, np.float32), dtype)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def batch(self) -> int:
        return self.dims[0]

    @property
    def depth(self) -> int:
        return self.dims[1]

    @property
    def rows(self) -> int:
        return self.dims[2]

    @property
    def cols(self) -> int:
        return self.dims[3]

    def _slice(self, coord, rows: int, cols: int):
        if len(coord) == 2:
            coord = (0, 0, *coord)
        b, d, r, c = coord
        if not (0 <= b < self.batch and 0 <= d < self.depth):
            raise IndexError(f"coord {coord} outside {self.dims}")
        r0, c0 = r * rows, c * cols
        if r < 0 or c < 0 or r0 + rows > self.rows or c0 + cols > self.cols:
            raise IndexError(f"tile coord {coord} of {rows}x{cols} outside {self.dims}")
        return (b, d, slice(r0, r0 + rows), slice(c0, c0 + cols))

    def get(self, coord, rows: int, cols: int) -> np.ndarray:
        return self.data[self._slice(coord, rows, cols)].copy()

    def put(self, coord, values: np.ndarray):
        rows, cols = values.shape
        self.data[self._slice(coord, rows, cols)] = _as_dtype(values, self.dtype)


@dataclass(frozen=True)
class TransferRecord:
    src: str
    dst: str
    nbytes: int
    layout: str | None = None


Memory = Union[GlobalTensor, SharedTileHandle, Tile]


def _level(x) -> str:
    if isinstance(x, GlobalTensor):
        return "global"
    if isinstance(x, SharedTileHandle):
        return "shared"
    if isinstance(x, Tile):
        return "register"
    raise TypeError(f"cannot transfer {type(x).__name__}")


def transfer(src: Memory, dst: Memory, coord=None, log: list | None = None) -> None:
    """Copy a tile between memory levels; `coord` addresses the global side in
    tile units of the other operand's shape, e.g. (batch, head, iter, 0)."""
    s_lvl, d_lvl = _level(src), _level(dst)
    if s_lvl == "global" and d_lvl == "global":
        raise TypeError("global-to-global transfers are not tile operations")
    if s_lvl == "global":
        if coord is None:
            raise TypeError("global source needs a coord")
        values = src.get(coord, *_shape(dst))
    elif s_lvl == "shared":
        values = src.read()
    else:
        values = src.data
    if d_lvl != "global" and values.shape != _shape(dst):
        raise TileShapeError(f"shape mismatch {values.shape} -> {_shape(dst)}")

    if d_lvl == "global":
        if coord is None:
            raise TypeError("global destination needs a coord")
        dst.put(coord, values)
    elif d_lvl == "shared":
        dst.write(values)
    else:
        dst.data = _as_dtype(values, dst.dtype)

    if log is not None:
        shared = src if s_lvl == "shared" else dst if d_lvl == "shared" else None
        nbytes = values.size * (dst.dtype.nbytes if d_lvl != "global" else src.dtype.nbytes)
        log.append(TransferRecord(s_lvl, d_lvl, nbytes,
                                  shared.layout.mode.value if shared is not None else None))


def _shape(x) -> tuple[int, int]:
    return (x.rows, x.cols)


# ---------------------------------------------------------------------------
# tensor files


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    """.npy for anything, .csv for 2-D arrays."""
    path = Path(path)
    array = np.asarray(array)
    if path.suffix == ".csv":
        if array.ndim > 2:
            array = array.reshape(-1, array.shape[-1])
        np.savetxt(path, np.atleast_2d(array), delimiter=",", fmt="%.9g")
    else:
        np.save(path, array)


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
    return np.load(path)
