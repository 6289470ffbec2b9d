"""Stabilizability analysis and bounded feedback synthesis for truncated
control systems with unbounded control operators."""

from .errors import *  # noqa: F401,F403
from .operators import (
    ControlSystem,
    DualPair,
    GradedVector,
    ShiftedSystem,
    adjoint,
    dumps_system,
    fractional_power,
    graded_norm,
    loads_system,
    semigroup_apply,
    shift_state_space,
    spectral_abscissa,
)
from .aedc import (
    AedcSplit,
    ValidationReport,
    adjoint_split,
    kato_projection,
    split_spectral,
    validate_aedc,
)
from .gramian import (
    GramianFeedback,
    ObservabilityConstants,
    build_gramian,
    check_exact_controllability,
    estimate_observability_constants,
    synthesize_feedback_KT,
    verify_observability_constants,
)
from .hautus import (
    AuditReport,
    HautusReport,
    PBHReport,
    equivalence_audit,
    hautus_margin,
    pbh_test,
    rapid_sweep,
    sweep_halfplane,
)
from .pipeline import (
    BoundedFeedback,
    ProjectedPair,
    StabilizationResult,
    Trajectory,
    certify_l2,
    project_control_operator,
    simulate_closed_loop,
    stabilize,
    synthesize_bounded_feedback,
)
from .models import (
    FractionalThickModel,
    HeatDirichletModel,
    ThickSetSpec,
    build_fractional_model,
    build_heat_dirichlet,
    fractional_hautus_bound,
    spectral_inequality_probe,
    thickness_check,
)

__version__ = "0.1.0"
