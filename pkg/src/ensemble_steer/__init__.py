"""Open-loop inputs for uniformly ensemble controllable linear families.

Moment collocation with a-priori error bounds, plus three consensus flows
that reach the same collocation conditions without inverting the block
Gramian.
"""

from .collocation import (
    CollocationSolution,
    KernelTarget,
    MomentVector,
    RateConstants,
    SourceProfile,
    delta_metrics,
    estimate_constants,
    minimal_norm_input,
    moment_vector,
    oracle_target,
    rate_bound,
    required_spacing,
    solve_collocation,
    sup_error,
)
from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    EnsembleError,
    IllConditionedGramianError,
    IncompatibleGridError,
    InvalidInputError,
    NotControllableError,
    SolverAccuracyWarning,
)
from .expm import matrix_exp
from .flows import (
    EtaSchedule,
    FlowReport,
    FlowState,
    averaging_flow,
    projection_Mi,
    strong_flow,
    weak_flow,
)
from .gramian import (
    BlockGramian,
    MomentGrid,
    adjoint_apply,
    block_gramian,
    default_grid,
    gramian,
    kernel_Q,
    reachability_apply,
)
from .io import load_system
from .model import (
    EnsembleSystem,
    InputSignal,
    ParameterInterval,
    PolynomialTarget,
    TabulatedTarget,
    TargetProfile,
    TimeGrid,
    eval_system,
    shift_target,
)

__version__ = "0.1.0"
