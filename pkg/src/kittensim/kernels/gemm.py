"""Persistent, supergrouped GEMM: C = A @ B in 64x64 base tiles."""

from __future__ import annotations

import math
from dataclasses import dataclass

from kittensim import tiles as tk
from kittensim.grid import supergroup_order
from kittensim.lcsf import INPUTS_FINISHED, KernelSpec, PipelineConfig, PipelineConfigError
from kittensim.tiles import DType, Major, SharedTileHandle, Tile

BASE_TILE = 64


@dataclass(frozen=True)
class GemmConfig:
    M: int
    N: int
    K: int
    m_block: int = 2
    n_block: int = 4
    super_m: int = 12
    dtype: DType = DType.FP32
    num_sms: int = 132
    input_pipe_stages: int = 4

    def __post_init__(self):
        object.__setattr__(self, "dtype", DType.parse(self.dtype))
        for name in ("M", "N", "K"):
            v = getattr(self, name)
            if v <= 0 or v % BASE_TILE:
                raise ValueError(f"{name}={v} must be a positive multiple of {BASE_TILE}")
        if min(self.m_block, self.n_block, self.super_m, self.num_sms) < 1:
            raise ValueError("block multipliers, SUPER_M and num_sms must be >= 1")

    @property
    def rblocks(self) -> int:
        return math.ceil(self.M / (self.m_block * BASE_TILE))

    @property
    def cblocks(self) -> int:
        return math.ceil(self.N / (self.n_block * BASE_TILE))

    @property
    def num_tasks(self) -> int:
        return self.rblocks * self.cblocks

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(num_consumer_workers=self.m_block, num_producer_workers=1,
                              input_pipe_stages=self.input_pipe_stages)


def gemm_globals(a, b, cfg: GemmConfig) -> dict:
    return {"A": tk.GlobalTensor(a, cfg.dtype), "B": tk.GlobalTensor(b, cfg.dtype),
            "C": tk.GlobalTensor.zeros((1, 1, cfg.M, cfg.N))}


def gemm_kernel(cfg: GemmConfig) -> KernelSpec:
    order = supergroup_order(cfg.rblocks, cfg.cblocks, cfg.super_m)
    row_tiles, col_tiles, k_tiles = cfg.M // BASE_TILE, cfg.N // BASE_TILE, cfg.K // BASE_TILE

    def grid(globals_, config):
        return min(cfg.num_sms, cfg.num_tasks)

    def validate(config: PipelineConfig):
        if config.num_consumer_workers != cfg.m_block:
            raise PipelineConfigError(
                f"gemm needs one consumer per row tile ({cfg.m_block}), "
                f"got {config.num_consumer_workers}")

    def common_setup(args):
        task_id = args.task_iter * grid(None, None) + args.block
        if task_id >= cfg.num_tasks:
            return -1
        r, c = order[task_id]
        args.common["coord"] = (r * cfg.m_block, c * cfg.n_block)
        return k_tiles

    def make_input_block(config):
        return {"a": [SharedTileHandle(BASE_TILE, BASE_TILE, cfg.dtype) for _ in range(cfg.m_block)],
                "b": [SharedTileHandle(BASE_TILE, BASE_TILE, cfg.dtype) for _ in range(cfg.n_block)]}

    def load(args):
        row0, col0 = args.common["coord"]
        for i, dst in enumerate(args.input["a"]):
            if row0 + i < row_tiles:
                tk.transfer(args.globals["A"], dst, (0, 0, row0 + i, args.iter))
        for j, dst in enumerate(args.input["b"]):
            if col0 + j < col_tiles:
                tk.transfer(args.globals["B"], dst, (0, 0, args.iter, col0 + j))

    def consumer_setup(args):
        return [Tile.zeros(BASE_TILE, BASE_TILE) for _ in range(cfg.n_block)]

    def compute(args):
        row0, col0 = args.common["coord"]
        if row0 + args.worker < row_tiles:
            a = Tile.zeros(BASE_TILE, BASE_TILE, cfg.dtype)
            tk.transfer(args.input["a"][args.worker], a)
            for j in range(cfg.n_block):
                if col0 + j >= col_tiles:
                    break
                b = Tile.zeros(BASE_TILE, BASE_TILE, cfg.dtype, Major.COL)
                tk.transfer(args.input["b"][j], b)
                args.state[j] = tk.mma_AB(args.state[j], a, b)
        args.arrive(INPUTS_FINISHED)

    def finish(args):
        row0, col0 = args.common["coord"]
        row = row0 + args.worker
        if row >= row_tiles:
            return
        for j, acc in enumerate(args.state):
            if col0 + j < col_tiles:
                tk.transfer(acc, args.globals["C"], (0, 0, row, col0 + j))

    tile_bytes = BASE_TILE * BASE_TILE * cfg.dtype.nbytes
    return KernelSpec(
        name="gemm", grid=grid, common_setup=common_setup, load=load, compute=compute,
        make_input_block=make_input_block, consumer_setup=consumer_setup, finish=finish,
        default_config=cfg.pipeline, input_block_bytes=(cfg.m_block + cfg.n_block) * tile_bytes,
        validate=validate,
    )
