"""Model throughput of the GEMM pipeline as input stages grow."""

from __future__ import annotations

import argparse

from kittensim.kernels import GemmConfig, gemm_kernel, gemm_latency_profile
from kittensim.lcsf import PipelineConfig, simulate_timed
from kittensim.machine import load_calibration, preset_h100


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=4096, help="M = N = K")
    ap.add_argument("--max-stages", type=int, default=4)
    ap.add_argument("--iterations", type=int, default=64)
    ap.add_argument("--calibration", help="machine calibration JSON")
    args = ap.parse_args()

    params = load_calibration(args.calibration) if args.calibration else preset_h100()
    cfg = GemmConfig(args.size, args.size, args.size)
    profile = gemm_latency_profile(params, cfg)
    kernel = gemm_kernel(cfg)
    base = None
    # the profile is per SM; scale to the whole device
    print(f"{'stages':>6s} {'TFLOP/s':>10s} {'vs 1':>6s}")
    for s in range(1, args.max_stages + 1):
        tl = simulate_timed(kernel, PipelineConfig(cfg.m_block, 1, s), profile, args.iterations)
        base = base or tl.throughput
        print(f"{s:6d} {tl.throughput * params.num_sms / 1e12:10.1f} {tl.throughput / base:6.2f}")


if __name__ == "__main__":
    main()
