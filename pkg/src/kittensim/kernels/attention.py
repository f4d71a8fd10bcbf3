"""Non-causal attention forward with base-2 online softmax over streamed K/V tiles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from kittensim import tiles as tk
from kittensim.lcsf import INPUTS_FINISHED, KernelSpec, PipelineConfig
from kittensim.tiles import DType, Major, SharedTileHandle, Tile, TileVector

LOG2E = 1.44269504089
QO_ROWS = 64


@dataclass
class OnlineSoftmaxState:
    o: Tile
    max_vec: TileVector
    norm_vec: TileVector
    in_bounds: bool = True


@dataclass(frozen=True)
class AttentionConfig:
    B: int
    H: int
    N: int
    D: int
    kv_rows: int | None = None
    num_workers: int = 3
    dtype: DType = DType.FP32
    input_pipe_stages: int = 2

    def __post_init__(self):
        object.__setattr__(self, "dtype", DType.parse(self.dtype))
        if self.D not in (64, 128):
            raise ValueError("head dim must be 64 or 128")
        if self.kv_rows is None:
            object.__setattr__(self, "kv_rows", 192 if self.D == 64 else 128)
        if min(self.B, self.H, self.N, self.num_workers) < 1:
            raise ValueError("extents must be positive")
        if self.kv_rows % 16 or self.N % self.kv_rows:
            raise ValueError(f"N={self.N} must be a multiple of the KV tile rows ({self.kv_rows})")
        if self.N % QO_ROWS:
            raise ValueError(f"N={self.N} must be a multiple of {QO_ROWS}")

    @property
    def temperature(self) -> float:
        # 1/sqrt(D) folded with log2(e) for exp2
        return (0.08838834764 if self.D == 128 else 0.125) * LOG2E

    @property
    def seq_blocks(self) -> int:
        return math.ceil(self.N / (QO_ROWS * self.num_workers))

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(num_consumer_workers=self.num_workers, num_producer_workers=1,
                              input_pipe_stages=self.input_pipe_stages)


def attention_globals(q, k, v, cfg: AttentionConfig) -> dict:
    shape = (cfg.B, cfg.H, cfg.N, cfg.D)
    g = {name: tk.GlobalTensor(np.asarray(x).reshape(shape), cfg.dtype)
         for name, x in (("Q", q), ("K", k), ("V", v))}
    g["O"] = tk.GlobalTensor.zeros(shape)
    return g


def attention_fwd_kernel(cfg: AttentionConfig) -> KernelSpec:
    tau = cfg.temperature
    kv, d, nw = cfg.kv_rows, cfg.D, cfg.num_workers
    q_tiles = cfg.N // QO_ROWS

    def grid(globals_, config):
        return cfg.B * cfg.H * cfg.seq_blocks

    def common_setup(args):
        if args.task_iter != 0:
            return -1
        seq = args.block % cfg.seq_blocks
        bh = args.block // cfg.seq_blocks
        args.common.update(batch=bh // cfg.H, head=bh % cfg.H, seq=seq)
        return cfg.N // kv

    def make_input_block(config):
        return {"k": SharedTileHandle(kv, d, cfg.dtype), "v": SharedTileHandle(kv, d, cfg.dtype)}

    def make_scratch(config):
        return {"q": [SharedTileHandle(QO_ROWS, d, cfg.dtype) for _ in range(nw)]}

    def q_index(args) -> int:
        return args.common["seq"] * nw + args.worker

    def load(args):
        b, h = args.common["batch"], args.common["head"]
        tk.transfer(args.globals["K"], args.input["k"], (b, h, args.iter, 0))
        tk.transfer(args.globals["V"], args.input["v"], (b, h, args.iter, 0))

    def consumer_setup(args):
        inside = q_index(args) < q_tiles
        if inside:
            tk.transfer(args.globals["Q"], args.scratch["q"][args.worker],
                        (args.common["batch"], args.common["head"], q_index(args), 0))
        return OnlineSoftmaxState(o=Tile.zeros(QO_ROWS, d),
                                  max_vec=tk.neg_infty(QO_ROWS),
                                  norm_vec=TileVector.full(QO_ROWS, 0.0),
                                  in_bounds=inside)

    def compute(args):
        st: OnlineSoftmaxState = args.state
        if st.in_bounds:
            q = Tile.zeros(QO_ROWS, d, cfg.dtype)
            tk.transfer(args.scratch["q"][args.worker], q)
            k = Tile.zeros(kv, d, cfg.dtype)
            tk.transfer(args.input["k"], k)
            att = tk.mm_ABt(q, k, Tile.zeros(QO_ROWS, kv))
            max_last_scaled = tk.mul(st.max_vec, tau)
            st.max_vec = tk.row_max(att, st.max_vec)
            max_scaled = tk.mul(st.max_vec, tau)
            att = tk.sub_row(tk.mul(att, tau), max_scaled)
            att = tk.exp2(att)
            rescale = tk.exp2(tk.sub(max_last_scaled, max_scaled))
            st.norm_vec = tk.row_sum(att, tk.mul(st.norm_vec, rescale))
            st.o = tk.mul_row(st.o, rescale)
            att_mma = tk.copy(att, cfg.dtype)
            v = Tile.zeros(kv, d, cfg.dtype, Major.COL)
            tk.transfer(args.input["v"], v)
            st.o = tk.mma_AB(st.o, att_mma, v)
        args.arrive(INPUTS_FINISHED)

    def finish(args):
        st: OnlineSoftmaxState = args.state
        if not st.in_bounds:
            return
        out = tk.div_row(st.o, st.norm_vec)
        tk.transfer(out, args.globals["O"],
                    (args.common["batch"], args.common["head"], q_index(args), 0))

    return KernelSpec(
        name="attention", grid=grid, common_setup=common_setup, load=load, compute=compute,
        make_input_block=make_input_block, make_scratch=make_scratch,
        consumer_setup=consumer_setup, finish=finish, default_config=cfg.pipeline,
        input_block_bytes=2 * kv * d * cfg.dtype.nbytes,
        consumer_registers=160, producer_registers=24,
    )
