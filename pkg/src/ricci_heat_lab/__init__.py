"""Numerical laboratory for Ricci flow coupled to forward and backward heat
equations on model geometries: covariant grid calculus, derivative-estimate
checks with explicit constant ledger, barrier differential inequalities, and
W-entropy identities."""

from .errors import (
    BlowupError,
    BracketError,
    CflViolationError,
    ConfigError,
    DomainError,
    GridError,
    LedgerError,
    NormalizationError,
    PositivityError,
    RicciLabError,
    UnsupportedRankError,
)
from .grid_geometry import (
    K_MAX,
    ConformalMetric,
    GridSpec,
    ScalarField,
    TensorField,
    covariant_derivative,
    curvature_derivative_norm,
    geodesic_distance,
    integrate,
    laplace_beltrami,
    metric_ball,
    scalar_curvature,
    tensor_norm,
)
from .flows import (
    FlowTrajectory,
    RunConfig,
    Snapshot,
    SphereModel,
    conjugate_heat_solve,
    coupled_step,
    heat_step,
    read_trajectory,
    ricci_step,
    run_coupled_flow,
    sphere_exact,
    write_trajectory,
)

__version__ = "0.1.0"
