"""Run a kernel on seeded random inputs and score it against the float64 oracle."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from kittensim.lcsf import execute_functional
from kittensim.tiles import DType

from kittensim.kernels.attention import AttentionConfig, attention_fwd_kernel, attention_globals
from kittensim.kernels.gemm import GemmConfig, gemm_globals, gemm_kernel
from kittensim.kernels.oracles import oracle_attention, oracle_gemm, oracle_rotary
from kittensim.kernels.rotary import RotaryConfig, rotary_globals, rotary_kernel

TOLERANCES = {"gemm": 1e-4, "attention": 1e-5, "rotary": 1e-5}
KERNELS = tuple(TOLERANCES)


@dataclass
class RunManifest:
    kernel: str
    config: dict
    seed: int
    backend: str
    max_abs_err: float
    rel_fro_err: float
    tolerance: float
    steps: int
    output_shape: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_err <= self.tolerance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _cfg_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: (v.value if isinstance(v, DType) else v) for k, v in d.items()}


def make_config(kernel: str, **kw):
    if kernel == "gemm":
        return GemmConfig(**{"M": 128, "N": 128, "K": 128, **kw})
    if kernel == "attention":
        return AttentionConfig(**{"B": 1, "H": 1, "N": 384, "D": 64, **kw})
    if kernel == "rotary":
        return RotaryConfig(**{"B": 1, "H": 2, "N": 256, "headdim": 64, **kw})
    raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")


def make_inputs(cfg, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)

    def randn(*shape):
        return rng.standard_normal(shape).astype(np.float32)

    if isinstance(cfg, GemmConfig):
        return {"A": randn(cfg.M, cfg.K), "B": randn(cfg.K, cfg.N)}
    if isinstance(cfg, AttentionConfig):
        shape = (cfg.B, cfg.H, cfg.N, cfg.D)
        return {"Q": randn(*shape), "K": randn(*shape), "V": randn(*shape)}
    if isinstance(cfg, RotaryConfig):
        half = cfg.headdim // 2
        pos = np.arange(cfg.N)[:, None]
        freq = 10000.0 ** (-np.arange(half) / half)
        theta = pos * freq[None, :]
        return {"x": randn(cfg.B, cfg.H, cfg.N, cfg.headdim),
                "cos": np.cos(theta).astype(np.float32), "sin": np.sin(theta).astype(np.float32)}
    raise TypeError(type(cfg).__name__)


def check_finite(inputs: dict[str, np.ndarray]) -> None:
    for name, arr in inputs.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"input {name} has non-finite values")


def run_kernel(cfg, inputs: dict[str, np.ndarray], *, backend: str = "cooperative",
               seed: int | None = None):
    """Execute and return (output float32 array, expected float64 array, result)."""
    check_finite(inputs)
    if isinstance(cfg, GemmConfig):
        kernel, g, out = gemm_kernel(cfg), gemm_globals(inputs["A"], inputs["B"], cfg), "C"
        expected = oracle_gemm(inputs["A"], inputs["B"])
    elif isinstance(cfg, AttentionConfig):
        kernel, out = attention_fwd_kernel(cfg), "O"
        g = attention_globals(inputs["Q"], inputs["K"], inputs["V"], cfg)
        expected = oracle_attention(inputs["Q"], inputs["K"], inputs["V"])
    elif isinstance(cfg, RotaryConfig):
        kernel, out = rotary_kernel(cfg), "o"
        g = rotary_globals(inputs["x"], inputs["cos"], inputs["sin"], cfg)
        expected = oracle_rotary(inputs["x"], inputs["cos"], inputs["sin"])
    else:
        raise TypeError(type(cfg).__name__)
    result = execute_functional(kernel, None, g, backend=backend, seed=seed)
    got = g[out].data.reshape(expected.shape)
    return got, expected, result


def run_and_score(kernel: str, seed: int = 0, backend: str = "cooperative", **kw) -> RunManifest:
    cfg = make_config(kernel, **kw)
    got, expected, result = run_kernel(cfg, make_inputs(cfg, seed), backend=backend, seed=seed)
    diff = got.astype(np.float64) - expected
    rel = float(np.linalg.norm(diff) / max(np.linalg.norm(expected), 1e-300))
    return RunManifest(kernel, _cfg_dict(cfg), seed, backend, float(np.max(np.abs(diff))), rel,
                       TOLERANCES[kernel], result.steps, list(expected.shape))
