"""Numerical laboratory for damped variable-coefficient wave equations.

Simulates  u_tt - div(A(x) grad u) + gamma(t) g(u_t) = |u|^(p-1) u  with
homogeneous Dirichlet data on intervals and rectangles, checks the
potential-well global-existence thresholds, and compares simulated energy
decay against exponential, polynomial and general feedback envelopes.
"""

from dampedwave.field import (
    CoefficientField,
    DiscreteOperator,
    Grid,
    GridFunction,
    assemble,
    bilinear_form,
    build_grid,
    grad_norm,
    lp_norm,
    sample_function,
)
from dampedwave.model import (
    DampingSchedule,
    Feedback,
    OriginProfile,
    Problem,
    ValidationReport,
    constant_schedule,
    eval_feedback,
    eval_source,
    gamma_primitive,
    linear_feedback,
    origin_degenerate_feedback,
    power_feedback,
    power_schedule,
    validate,
)
from dampedwave.well import (
    EmbeddingEstimate,
    WellAnalysis,
    analyze_problem,
    barrier,
    estimate_embedding,
    global_existence_verdict,
    invariant_level,
    source_bound_constant,
    thresholds,
)
from dampedwave.solver import (
    BlowUpError,
    EnergyRecord,
    RefinementStudy,
    State,
    StepperConfig,
    identity_residual_study,
    reference_solve,
    simulate,
    step,
)
from dampedwave.decay import (
    DecayEnvelope,
    FitResult,
    Lemma41Result,
    WeightTable,
    H_inverse,
    H_value,
    build_weights,
    envelope_value,
    fit_rate,
    lemma41_check,
)

__version__ = "0.1.0"
