"""Rotary position embedding over 16-row sequence tiles, with a store stage."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from kittensim import tiles as tk
from kittensim.lcsf import INPUTS_FINISHED, OUTPUTS_ARRIVED, OUTPUTS_FINISHED, KernelSpec, PipelineConfig
from kittensim.tiles import DType, SharedTileHandle, Tile

SEQ_TILE = 16


@dataclass(frozen=True)
class RotaryConfig:
    B: int
    H: int
    N: int
    headdim: int
    num_workers: int = 8
    batches_per_block: int = 4
    dtype: DType = DType.FP32
    input_pipe_stages: int = 3
    output_pipe_stages: int = 3

    def __post_init__(self):
        object.__setattr__(self, "dtype", DType.parse(self.dtype))
        if min(self.B, self.H, self.N, self.num_workers, self.batches_per_block) < 1:
            raise ValueError("extents must be positive")
        if self.headdim % 32:
            raise ValueError("headdim must be a multiple of 32 (each half a whole tile)")
        if self.N % SEQ_TILE:
            raise ValueError(f"N must be a multiple of {SEQ_TILE}")

    @property
    def seq_tiles(self) -> int:
        return self.N // SEQ_TILE

    @property
    def grid_x(self) -> int:
        return math.ceil(self.seq_tiles / self.num_workers)

    @property
    def grid_y(self) -> int:
        return math.ceil(self.B / self.batches_per_block)

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(num_consumer_workers=self.num_workers, num_producer_workers=1,
                              input_pipe_stages=self.input_pipe_stages,
                              output_pipe_stages=self.output_pipe_stages)


def rotary_globals(x, cos, sin, cfg: RotaryConfig) -> dict:
    half = cfg.headdim // 2
    return {"x": tk.GlobalTensor(np.asarray(x).reshape(cfg.B, cfg.H, cfg.N, cfg.headdim), cfg.dtype),
            "cos": tk.GlobalTensor(np.asarray(cos).reshape(cfg.N, half), cfg.dtype),
            "sin": tk.GlobalTensor(np.asarray(sin).reshape(cfg.N, half), cfg.dtype),
            "o": tk.GlobalTensor.zeros((cfg.B, cfg.H, cfg.N, cfg.headdim))}


def rotary_kernel(cfg: RotaryConfig) -> KernelSpec:
    nw, hd, half = cfg.num_workers, cfg.headdim, cfg.headdim // 2

    def grid(globals_, config):
        return cfg.grid_x * cfg.grid_y

    def common_setup(args):
        if args.task_iter != 0:
            return -1
        bx, by = args.block % cfg.grid_x, args.block // cfg.grid_x
        batches = min(cfg.batches_per_block, cfg.B - by * cfg.batches_per_block)
        args.common.update(bx=bx, by=by,
                           active=min(nw, cfg.seq_tiles - bx * nw))
        return batches * cfg.H

    def batch_head(args) -> tuple[int, int]:
        return args.common["by"] * cfg.batches_per_block + args.iter // cfg.H, args.iter % cfg.H

    def make_input_block(config):
        return {"x": [SharedTileHandle(SEQ_TILE, hd, cfg.dtype) for _ in range(nw)]}

    def make_output_block(config):
        return {"o": [SharedTileHandle(SEQ_TILE, hd, cfg.dtype) for _ in range(nw)]}

    def load(args):
        b, h = batch_head(args)
        bx = args.common["bx"]
        for i in range(args.common["active"]):
            tk.transfer(args.globals["x"], args.input["x"][i], (b, h, bx * nw + i, 0))

    def consumer_setup(args):
        if args.worker >= args.common["active"]:
            return None
        row = args.common["bx"] * nw + args.worker
        cos, sin = Tile.zeros(SEQ_TILE, half), Tile.zeros(SEQ_TILE, half)
        tk.transfer(args.globals["cos"], cos, (0, 0, row, 0))
        tk.transfer(args.globals["sin"], sin, (0, 0, row, 0))
        return {"cos": cos, "sin": sin}

    def compute(args):
        if args.state is not None:
            x = Tile.zeros(SEQ_TILE, hd)
            tk.transfer(args.input["x"][args.worker], x)
            x1, x2 = tk.split_cols(x, 2)
            cos, sin = args.state["cos"], args.state["sin"]
            temp1 = tk.mul(x1, cos)
            temp2 = tk.mul(x2, cos)
            x2 = tk.mul(x2, -1.0)
            x1 = tk.mul(x1, sin)
            x2 = tk.mul(x2, sin)
            temp1 = tk.add(temp1, x2)
            temp2 = tk.add(temp2, x1)
            tk.transfer(tk.concat_cols([temp1, temp2]), args.output["o"][args.worker])
        args.arrive(INPUTS_FINISHED)
        args.arrive(OUTPUTS_ARRIVED)

    def store(args):
        b, h = batch_head(args)
        bx = args.common["bx"]
        for i in range(args.common["active"]):
            tk.transfer(args.output["o"][i], args.globals["o"], (b, h, bx * nw + i, 0))
        args.arrive(OUTPUTS_FINISHED)

    tile_bytes = nw * SEQ_TILE * hd * cfg.dtype.nbytes
    return KernelSpec(
        name="rotary", grid=grid, common_setup=common_setup, load=load, compute=compute,
        make_input_block=make_input_block, make_output_block=make_output_block,
        consumer_setup=consumer_setup, store=store, default_config=cfg.pipeline,
        input_block_bytes=tile_bytes, output_block_bytes=tile_bytes,
    )
