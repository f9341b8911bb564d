"""Numerical laboratory for reparameterization equivariance of training flows."""

from .diffcalc import (
    DIM_CAP,
    ScalarField,
    VectorMap,
    fd_gradient,
    fd_jacobian,
    gradient,
    hessian,
    jacobian,
    second_derivatives,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    EquiflowError,
    EvaluationDomainError,
    SingularMatrixError,
    ToleranceGapError,
)
from .flows import (
    FlowField,
    accelerated_flow,
    adam_stationary_flow,
    fisher_matrix,
    ggn_matrix,
    gradient_flow,
    identity_preconditioner,
    nesterov_flow,
    newton_flow,
    preconditioned_flow,
)
from .geometry import (
    FAMILIES,
    Connection,
    Diffeomorphism,
    OptimizerState,
    Preconditioner,
    StateVelocity,
    affine_diffeomorphism,
    canonical_shear,
    catalog,
    compose,
    flat_connection,
    identity,
    invert,
    naturalizer_membership,
    pullback_connection,
    pullback_loss,
    pullback_model,
    pushforward_state,
    pushforward_tangent,
    sample_diffeomorphism,
    shear_diffeomorphism,
    state_order1,
    state_order2,
    transform_bilinear,
    translation,
)
from .harness import (
    ALGORITHMS,
    FlowBuilder,
    ResidualReport,
    TableReport,
    classify_equivariance,
    default_flow_builder,
    default_recipe,
    expected_verdict,
    naturality_residual,
    render_reports_text,
    render_table_text,
    reproduce_table,
)
from .integrate import (
    DriftResult,
    Trajectory,
    equivariance_drift,
    integrate,
    trajectory_csv_text,
    write_trajectory_csv,
)
from .models import (
    Dataset,
    GaussianHead,
    Model,
    dataset_loss,
    linear_model,
    load_dataset,
    mlp_tanh,
    network_jacobian,
    quadratic_loss,
    quadratic_model,
)

__version__ = "0.1.0"
