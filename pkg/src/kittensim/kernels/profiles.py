"""Stage latencies derived from machine parameters, for the timed simulator."""

from __future__ import annotations

from kittensim.lcsf import LatencyProfile
from kittensim.machine import MachineParams

from kittensim.kernels.gemm import BASE_TILE, GemmConfig


def gemm_latency_profile(params: MachineParams, cfg: GemmConfig, elem_bytes: int = 2) -> LatencyProfile:
    """One SM's share of tensor and L2 throughput.

    Each consumer computes one 64-row strip; all consumers share the SM's
    tensor cores, so a consumer's compute time is the whole iteration's flops
    over the SM rate. Loads pay the async-copy latency plus their transfer time
    on a serialized per-SM channel.
    """
    per_sm_flops = params.pipeline_throughputs["Tensor"] / params.num_sms
    per_sm_bw = params.l2_bw / params.num_sms
    iter_flops = 2 * (cfg.m_block * BASE_TILE) * (cfg.n_block * BASE_TILE) * BASE_TILE
    iter_bytes = (cfg.m_block + cfg.n_block) * BASE_TILE * BASE_TILE * elem_bytes
    transfer = iter_bytes / per_sm_bw
    return LatencyProfile(
        load=params.tma_latency + transfer,
        compute=iter_flops / per_sm_flops,
        load_channel=transfer,
        work_per_iteration=iter_flops / cfg.m_block,
        name="gemm",
    )
