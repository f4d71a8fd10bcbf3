"""Load-compute-store-finish template: functional executor and timed simulator."""

from kittensim.lcsf.functional import (
    Barrier,
    FunctionalResult,
    SafetyViolation,
    TraceEvent,
    ValidationReport,
    execute_functional,
    validate_trace,
)
from kittensim.lcsf.program import (
    BLOCK_SYNC,
    INPUTS_ARRIVED,
    INPUTS_FINISHED,
    OUTPUTS_ARRIVED,
    OUTPUTS_FINISHED,
    ContractViolation,
    DeadlockError,
    KernelSpec,
    PipelineConfig,
    PipelineConfigError,
    StageArgs,
)
from kittensim.lcsf.timed import (
    LatencyProfile,
    OccupancyCurve,
    OccupancyPoint,
    ResourceModel,
    Span,
    Timeline,
    occupancy_sweep,
    simulate_timed,
)

__all__ = [
    "BLOCK_SYNC", "INPUTS_ARRIVED", "INPUTS_FINISHED", "OUTPUTS_ARRIVED", "OUTPUTS_FINISHED",
    "Barrier", "ContractViolation", "DeadlockError", "FunctionalResult", "KernelSpec",
    "LatencyProfile", "OccupancyCurve", "OccupancyPoint", "PipelineConfig",
    "PipelineConfigError", "ResourceModel", "SafetyViolation", "Span", "StageArgs",
    "Timeline", "TraceEvent", "ValidationReport", "execute_functional", "occupancy_sweep",
    "simulate_timed", "validate_trace",
]
