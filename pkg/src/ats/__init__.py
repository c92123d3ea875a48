"""Anchor-tree scheduling for long-horizon bounded infilling.

Plans a nested anchor hierarchy over a long horizon, executes it as a
parallel tree of bounded two-sided generation calls against a pluggable
backend, and measures drift and critical-path latency against chunked
autoregressive rollout.
"""

from .core import (
    Anchor,
    AnchorHierarchy,
    ArConfig,
    AtsError,
    BackendError,
    CallResult,
    CallSpec,
    CodecError,
    ConditioningTrack,
    ContextLimits,
    ExecutionError,
    FrameBlock,
    FrameIndex,
    Interval,
    MetricsError,
    PlanError,
    ProtocolError,
    RunArtifact,
    TraceEntry,
    TreePlan,
)
from .backend import (
    ArState,
    Backend,
    BackendContract,
    SyntheticBackend,
    SyntheticWorldConfig,
    ar_rollout_chunk,
    extract_conditioning,
    leaf_generate,
    refine_generate,
    root_generate,
    synth_conditioning,
)
from .executor import (
    ExecPolicy,
    GateReport,
    SeamReport,
    gate_and_regenerate,
    run_ar,
    run_tree,
    seam_scan_and_repair,
)
from .metrics import (
    DriftReport,
    QualitySeries,
    ResetSchedule,
    chunk_drift,
    drift_report,
    global_score,
    quality_series,
    reset_jump,
)
from .planner import (
    PlannerConfig,
    ValidationReport,
    adaptive_placement,
    call_budget,
    plan_tree,
    validate_plan,
)
from .protocol import (
    WorkerBackend,
    decode_frame_block,
    encode_frame_block,
    mix_seed,
)
from .schedsim import LatencyProfile, makespan_ar, makespan_tree, sweep

__version__ = "0.1.0"
