"""Example kernels written against the LCSF template, plus float64 oracles."""

from kittensim.kernels.attention import AttentionConfig, attention_fwd_kernel, attention_globals
from kittensim.kernels.gemm import GemmConfig, gemm_globals, gemm_kernel
from kittensim.kernels.oracles import oracle_attention, oracle_gemm, oracle_rotary
from kittensim.kernels.profiles import gemm_latency_profile
from kittensim.kernels.rotary import RotaryConfig, rotary_globals, rotary_kernel
from kittensim.kernels.runner import (
    KERNELS,
    TOLERANCES,
    RunManifest,
    make_config,
    make_inputs,
    run_and_score,
    run_kernel,
)

__all__ = [
    "AttentionConfig", "GemmConfig", "KERNELS", "RotaryConfig", "RunManifest", "TOLERANCES",
    "attention_fwd_kernel", "attention_globals", "gemm_globals", "gemm_kernel",
    "gemm_latency_profile", "make_config", "make_inputs", "oracle_attention", "oracle_gemm",
    "oracle_rotary", "rotary_globals", "rotary_kernel", "run_and_score", "run_kernel",
]
