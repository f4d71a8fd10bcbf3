from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kittensim import tiles as tk
from kittensim.layouts import SharedLayout, SwizzleMode, offset_table
from kittensim.tiles import (
    DType,
    GlobalTensor,
    LayoutContractError,
    Major,
    Orientation,
    SharedTileHandle,
    Tile,
    TileShapeError,
    TileVector,
    round_bf16,
)


def rand_tile(rng, rows=16, cols=16, dtype=DType.FP32, major=Major.ROW):
    return Tile(rng.standard_normal((rows, cols)).astype(np.float32), dtype, major)


def test_shape_rules():
    with pytest.raises(TileShapeError):
        Tile(np.zeros((16, 24), np.float32))
    with pytest.raises(TileShapeError):
        TileVector(np.zeros(8, np.float32))


def test_zero_exp2_copy_cast():
    t = Tile(np.full((16, 32), 3.0, np.float32))
    assert np.all(tk.zero(t).data == 0.0)
    assert np.all(tk.exp2(t).data == 8.0)
    one = Tile(np.full((16, 16), 1.0000001, np.float32))
    assert np.all(tk.copy(one, DType.BF16).data == 1.0)


def test_round_bf16_nearest_even():
    # 1 + 2^-8 is exactly halfway between 1 and the next bf16 value: ties to even
    assert round_bf16(np.float32(1 + 2**-8)) == 1.0
    assert round_bf16(np.float32(1 + 3 * 2**-8)) == np.float32(1 + 2**-6)
    x = np.array([np.inf, -np.inf], np.float32)
    assert np.array_equal(round_bf16(x), x)
    assert np.isnan(round_bf16(np.float32(np.nan)))


def test_elementwise_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(TileShapeError):
        tk.add(rand_tile(rng), rand_tile(rng, 16, 32))
    with pytest.raises(TileShapeError):
        tk.add(rand_tile(rng), rand_tile(rng, major=Major.COL))


def test_broadcasts():
    rng = np.random.default_rng(1)
    t = rand_tile(rng, 16, 32)
    maxes = tk.row_max(t, tk.neg_infty(16))
    assert np.all(tk.sub_row(t, maxes).data.max(axis=1) == 0.0)
    ones = TileVector.full(16, 1.0)
    assert np.array_equal(tk.div_row(t, ones).data, t.data)
    v = TileVector(rng.standard_normal(16).astype(np.float32))
    out = tk.mul_row(t, v).data
    for r in range(16):
        for c in range(32):
            assert out[r, c] == np.float32(t.data[r, c] * v.data[r])
    with pytest.raises(TileShapeError):
        tk.sub_row(t, TileVector.full(32, 0.0))
    with pytest.raises(TileShapeError):
        tk.sub_row(t, TileVector.full(16, 0.0, Orientation.ROW_VEC))


def test_reductions():
    rng = np.random.default_rng(2)
    t = rand_tile(rng, 16, 32)
    assert np.array_equal(tk.row_max(t, tk.neg_infty(16)).data, t.data.max(axis=1))
    ones = Tile(np.ones((16, 16), np.float32))
    assert np.all(tk.row_sum(ones, TileVector.full(16, 0.0)).data == 16.0)
    left, right = tk.split_cols(t, 2)
    acc = tk.row_max(right, tk.row_max(left, tk.neg_infty(16)))
    assert np.array_equal(acc.data, t.data.max(axis=1))
    s2 = tk.row_sum(right, tk.row_sum(left, TileVector.full(16, 0.0)))
    assert np.array_equal(s2.data, tk.row_sum(t, TileVector.full(16, 0.0)).data)


def test_mma_contracts():
    rng = np.random.default_rng(3)
    eye = Tile(np.eye(16, dtype=np.float32))
    b = rand_tile(rng, major=Major.COL)
    c = tk.mm_AB(eye, b, Tile.zeros(16, 16))
    assert np.array_equal(c.data, b.data)
    c_in = rand_tile(rng)
    assert np.array_equal(tk.mma_AB(c_in, Tile.zeros(16, 16), b).data, c_in.data)
    with pytest.raises(LayoutContractError):
        tk.mma_AB(c_in, eye, rand_tile(rng))  # row-major B
    assert tk.mma_AB(c_in, eye, tk.swap_layout(rand_tile(rng))).major is Major.ROW
    with pytest.raises(LayoutContractError):
        tk.mma_ABt(c_in, eye, b)
    with pytest.raises(LayoutContractError):
        tk.mma_AB(Tile.zeros(16, 32), eye, b)


def test_mma_bf16_matches_oracle():
    rng = np.random.default_rng(4)
    a = rand_tile(rng, dtype=DType.BF16)
    b = rand_tile(rng, dtype=DType.BF16, major=Major.COL)
    got = tk.mm_AB(a, b, Tile.zeros(16, 16)).data
    ref = np.zeros((16, 16))
    a64, b64 = a.data.astype(np.float64), b.data.astype(np.float64)
    for i in range(16):
        for j in range(16):
            ref[i, j] = sum(a64[i, k] * b64[k, j] for k in range(16))
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 2e-2
    # bf16 rounding happens on the way in, mma itself is fp32 on the rounded values
    fp32 = tk.mm_AB(Tile(a.data), Tile(b.data, major=Major.COL), Tile.zeros(16, 16)).data
    assert np.array_equal(got, fp32)


def test_swap_layout():
    rng = np.random.default_rng(5)
    t = rand_tile(rng, 16, 64)
    s = tk.swap_layout(t)
    assert s.major is Major.COL and np.array_equal(s.data, t.data)
    assert tk.swap_layout(s).major is Major.ROW


def test_round_trip_all_levels():
    rng = np.random.default_rng(6)
    data = rng.standard_normal((2, 3, 64, 128)).astype(np.float32)
    g = GlobalTensor(data)
    out = GlobalTensor.zeros(data.shape)
    for mode in (SwizzleMode.NAIVE, SwizzleMode.PADDED, SwizzleMode.ROW_XOR, SwizzleMode.SW32,
                 SwizzleMode.SW64, SwizzleMode.SW128):
        sh = SharedTileHandle(16, 64, DType.FP32, SharedLayout(16, 64, 4, mode))
        reg = Tile.zeros(16, 64)
        sh2 = SharedTileHandle(16, 64, DType.FP32)
        tk.transfer(g, sh, (1, 2, 3, 1))
        tk.transfer(sh, reg)
        tk.transfer(reg, sh2)
        tk.transfer(sh2, out, (1, 2, 3, 1))
        assert np.array_equal(out.data[1, 2, 48:64, 64:128], data[1, 2, 48:64, 64:128])


def test_coord_slices_row_blocks():
    data = np.arange(4 * 64 * 16, dtype=np.float32).reshape(1, 4, 64, 16)
    g = GlobalTensor(data)
    reg = Tile.zeros(16, 16)
    tk.transfer(g, reg, (0, 2, 3, 0))
    assert np.array_equal(reg.data, data[0, 2, 48:64, :])
    with pytest.raises(IndexError):
        tk.transfer(g, reg, (0, 2, 4, 0))
    with pytest.raises(TileShapeError):
        tk.transfer(Tile.zeros(16, 32), reg)


def test_sw128_bytes_follow_offset_table():
    rng = np.random.default_rng(7)
    vals = rng.standard_normal((32, 64)).astype(np.float32)
    sh = SharedTileHandle(32, 64, DType.BF16)
    assert sh.layout.mode is SwizzleMode.SW128
    sh.write(vals)
    table = offset_table(sh.layout)
    raw = sh.buffer
    expect = round_bf16(vals)
    for r in range(32):
        for c in range(64):
            off = int(table[r, c])
            bits = int(raw[off]) | (int(raw[off + 1]) << 8)
            assert np.array([bits << 16], np.uint32).view(np.float32)[0] == expect[r, c]


def test_transfer_log():
    log = []
    sh = SharedTileHandle(16, 64, DType.BF16)
    tk.transfer(GlobalTensor.zeros((16, 64)), sh, (0, 0), log)
    assert log[0].src == "global" and log[0].dst == "shared"
    assert log[0].nbytes == 16 * 64 * 2 and log[0].layout == "sw128"


def test_tensor_files(tmp_path):
    a = np.arange(32, dtype=np.float32).reshape(2, 16)
    for name in ("t.npy", "t.csv"):
        tk.save_tensor(tmp_path / name, a)
        assert np.array_equal(tk.load_tensor(tmp_path / name), a)


finite = st.floats(-1e4, 1e4, width=32)


@given(arrays(np.float32, (16, 32), elements=finite))
def test_fp32_ops_are_reproducible(x):
    t = Tile(x)
    a = tk.row_sum(tk.exp2(tk.mul(t, 1e-3)), TileVector.full(16, 0.0)).data
    b = tk.row_sum(tk.exp2(tk.mul(t, 1e-3)), TileVector.full(16, 0.0)).data
    assert np.array_equal(a, b)


@given(arrays(np.float32, (16, 64), elements=finite), st.sampled_from(list(SwizzleMode)),
       st.sampled_from([DType.FP32, DType.BF16]))
def test_shared_round_trip_is_identity(x, mode, dtype):
    lay = SharedLayout(16, 64, dtype.nbytes, mode)
    sh = SharedTileHandle(16, 64, dtype, lay)
    sh.write(x)
    assert np.array_equal(sh.read(), round_bf16(x) if dtype is DType.BF16 else x)


@given(arrays(np.float32, 64, elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_bf16_rounding_is_idempotent_and_close(x):
    r = round_bf16(x)
    assert np.array_equal(round_bf16(r), r)
    assert np.all((r.view(np.uint32) & 0xFFFF) == 0)
    nz = np.isfinite(r) & (x != 0)
    # relative half-ulp bound, with an absolute floor at bf16 subnormal spacing
    err = np.abs(r[nz].astype(np.float64) - x[nz])
    assert np.all(err <= np.maximum(np.abs(x[nz].astype(np.float64)) * 2.0**-8, 2.0**-133))
