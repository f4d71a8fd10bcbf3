"""Machine presets and the max-plus-overhead kernel cost model.

Memory and compute terms overlap perfectly (the max), overheads do not
(the sum). Each term is pure rate division: bytes / bandwidth or
ops / throughput.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

CALIBRATION_ENV = "KITTENSIM_CALIBRATION"

# tie-break order for bound_by
COMPUTE_TERMS = ("Tensor", "ALU", "FMA", "XU")
MEMORY_TERMS = ("HBM", "L2", "L1", "Shared")
OVERHEAD_TERMS = ("Setup", "Sync")
MAX_TERMS = COMPUTE_TERMS + MEMORY_TERMS


@dataclass(frozen=True)
class MachineParams:
    num_sms: int
    smem_bytes_per_sm: int
    smem_bw: float
    l2_bytes: int
    l2_bw: float
    hbm_bytes: int
    hbm_bw: float
    num_banks: int
    bank_word_bytes: int
    max_regs_per_thread: int
    max_warps_per_sm: int
    pipeline_throughputs: dict[str, float]
    block_setup_cost: float
    sync_cost_per_barrier: float
    # SMEM and L1 are the same physical storage; defaults to smem_bw
    l1_bw: float | None = None
    registers_per_sm: int = 65536
    tma_latency: float = 1.0e-6

    def __post_init__(self):
        for name in ("num_sms", "smem_bytes_per_sm", "l2_bytes", "hbm_bytes", "num_banks",
                     "bank_word_bytes", "max_regs_per_thread", "max_warps_per_sm",
                     "registers_per_sm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("smem_bw", "l2_bw", "hbm_bw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.l1_bw is None:
            object.__setattr__(self, "l1_bw", self.smem_bw)
        elif not self.l1_bw > 0:
            raise ValueError("l1_bw must be positive")
        missing = set(COMPUTE_TERMS) - set(self.pipeline_throughputs)
        if missing:
            raise ValueError(f"missing pipeline throughputs: {sorted(missing)}")
        for k, v in self.pipeline_throughputs.items():
            if not v > 0:
                raise ValueError(f"throughput {k} must be positive")
        if self.block_setup_cost < 0 or self.sync_cost_per_barrier < 0:
            raise ValueError("overhead costs must be nonnegative")

    def scaled(self, factor: float) -> MachineParams:
        """Multiply every bandwidth and throughput by `factor`."""
        return replace(
            self,
            smem_bw=self.smem_bw * factor,
            l1_bw=self.l1_bw * factor,
            l2_bw=self.l2_bw * factor,
            hbm_bw=self.hbm_bw * factor,
            pipeline_throughputs={k: v * factor for k, v in self.pipeline_throughputs.items()},
        )

    def to_dict(self) -> dict:
        return asdict(self)


def calibration_path() -> Path:
    override = os.environ.get(CALIBRATION_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("kittensim") / "data" / "calibration.json"))


def load_calibration(path: str | os.PathLike | None = None) -> dict:
    """Read the calibration JSON.

    Keys: ``pipeline_throughputs`` (map Tensor/ALU/FMA/XU -> ops/s),
    ``block_setup_cost`` and ``sync_cost_per_barrier`` (seconds),
    optional ``tma_latency`` (s), ``max_warps_per_sm``, ``registers_per_sm``.
    Keys starting with ``_`` are comments.
    """
    p = Path(path) if path is not None else calibration_path()
    with open(p) as fh:
        raw = json.load(fh)
    known = {"pipeline_throughputs", "block_setup_cost", "sync_cost_per_barrier",
             "tma_latency", "max_warps_per_sm", "registers_per_sm"}
    unknown = {k for k in raw if not k.startswith("_")} - known
    if unknown:
        raise ValueError(f"unknown calibration keys: {sorted(unknown)}")
    if "pipeline_throughputs" not in raw:
        raise ValueError("calibration needs pipeline_throughputs")
    return {k: v for k, v in raw.items() if not k.startswith("_")}


def preset_h100(calibration: str | os.PathLike | dict | None = None) -> MachineParams:
    """H100 SXM constants; compute throughputs and overheads come from calibration."""
    cal = calibration if isinstance(calibration, dict) else load_calibration(calibration)
    return MachineParams(
        num_sms=132,
        smem_bytes_per_sm=227 * 1024,
        smem_bw=33e12,
        l2_bytes=50 * 1024 * 1024,
        l2_bw=12e12,
        hbm_bytes=80 * 10**9,
        hbm_bw=3e12,
        num_banks=32,
        bank_word_bytes=4,
        max_regs_per_thread=255,
        max_warps_per_sm=int(cal.get("max_warps_per_sm", 64)),
        pipeline_throughputs={k: float(v) for k, v in cal["pipeline_throughputs"].items()},
        block_setup_cost=float(cal.get("block_setup_cost", 0.0)),
        sync_cost_per_barrier=float(cal.get("sync_cost_per_barrier", 0.0)),
        registers_per_sm=int(cal.get("registers_per_sm", 65536)),
        tma_latency=float(cal.get("tma_latency", 1.0e-6)),
    )


@dataclass(frozen=True)
class WorkProfile:
    bytes_hbm: float = 0.0
    bytes_l2: float = 0.0
    bytes_l1: float = 0.0
    bytes_shared: float = 0.0
    ops_tensor: float = 0.0
    ops_alu: float = 0.0
    ops_fma: float = 0.0
    ops_xu: float = 0.0
    num_setups: float = 0.0
    num_syncs: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0) or math.isinf(v):
                raise ValueError(f"WorkProfile.{f.name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class CostBreakdown:
    terms: dict[str, float]
    overall: float
    bound_by: str
    # no-overlap upper estimate: sum of every term
    sum_of_terms: float = field(default=0.0)

    def __getitem__(self, name: str) -> float:
        return self.terms[name]

    def to_dict(self) -> dict:
        return {"terms": dict(self.terms), "overall": self.overall,
                "bound_by": self.bound_by, "sum_of_terms": self.sum_of_terms}


def estimate_cost(profile: WorkProfile, params: MachineParams) -> CostBreakdown:
    tp = params.pipeline_throughputs
    terms = {
        "Tensor": profile.ops_tensor / tp["Tensor"],
        "ALU": profile.ops_alu / tp["ALU"],
        "FMA": profile.ops_fma / tp["FMA"],
        "XU": profile.ops_xu / tp["XU"],
        "HBM": profile.bytes_hbm / params.hbm_bw,
        "L2": profile.bytes_l2 / params.l2_bw,
        "L1": profile.bytes_l1 / params.l1_bw,
        "Shared": profile.bytes_shared / params.smem_bw,
        "Setup": profile.num_setups * params.block_setup_cost,
        "Sync": profile.num_syncs * params.sync_cost_per_barrier,
    }
    bound_by = MAX_TERMS[0]
    for name in MAX_TERMS:
        if terms[name] > terms[bound_by]:
            bound_by = name
    overall = terms[bound_by] + terms["Setup"] + terms["Sync"]
    return CostBreakdown(terms=terms, overall=overall, bound_by=bound_by,
                         sum_of_terms=math.fsum(terms.values()))


def gemm_work(m: int, n: int, k: int, elem_bytes: int = 2) -> WorkProfile:
    """Idealized GEMM work: each operand read once, C written once."""
    return WorkProfile(bytes_hbm=float((m * k + k * n + m * n) * elem_bytes),
                       ops_tensor=2.0 * m * n * k)
