"""Classical multi-machine transient simulator (the expensive evaluator)."""

from .cases import (
    Bus,
    Contingency,
    GridCase,
    Injection,
    Line,
    Load,
    Machine,
    builtin_case,
    dump_case,
    load_case,
    nine_bus,
    smib,
)
from .dynamics import (
    DEFAULT_STEP,
    DEFAULT_THRESHOLD,
    CctSearch,
    SwingMarginEvaluator,
    TrajectoryResult,
    compute_cct,
    compute_cct_batch,
    prepare_batch,
    simulate,
    tsm,
    tsm_batch,
)
from .network import (
    PowerFlowError,
    PowersimError,
    ReductionError,
    build_ybus,
    kron_reduce,
    newton_pf,
)

__all__ = [
    "Bus", "Line", "Machine", "Load", "Injection", "GridCase", "Contingency",
    "smib", "nine_bus", "builtin_case", "load_case", "dump_case",
    "DEFAULT_STEP", "DEFAULT_THRESHOLD", "CctSearch", "TrajectoryResult",
    "SwingMarginEvaluator", "prepare_batch", "simulate",
    "compute_cct", "compute_cct_batch", "tsm", "tsm_batch",
    "PowersimError", "PowerFlowError", "ReductionError",
    "build_ybus", "kron_reduce", "newton_pf",
]
