"""Numerical flows and elliptic solvers for convex capillary hypersurfaces.

The package evolves the capillary support function of a strictly convex
capillary hypersurface on a spherical cap under Gauss-curvature-type
flows, monitors the associated monotone functionals and a priori bounds,
and cross-checks flow limits against an independent damped-Newton solver
of the stationary Monge-Ampere problem.
"""

__version__ = "0.1.0"

from .errors import (
    CapflowError,
    ConfigurationError,
    ConvexityLossError,
    DomainError,
    NewtonFailureError,
    StepFailureError,
)
from .flows import FlowConfig, FlowSolver, FlowState, RunResult, run, stationary_residual
from .functionals import (
    DensitySpec,
    DiagnosticsRecord,
    J_dissipation,
    J_tilde_dissipation,
    J_tilde_value,
    J_value,
    measure_densities,
    volume,
)
from .mesh import CapMesh, build_cap_mesh, cap_area, cap_volume, integrate, symmetrize_even
from .newton import NewtonConfig, NewtonResult, solve_stationary
from .operators import FrameOperators, frame_operators
from .state import (
    AdmissibilityReport,
    CurvatureData,
    SupportField,
    curvature,
    ell_field,
    embed,
    validate_admissible,
)

__all__ = [
    "AdmissibilityReport",
    "CapflowError",
    "CapMesh",
    "ConfigurationError",
    "ConvexityLossError",
    "CurvatureData",
    "DensitySpec",
    "DiagnosticsRecord",
    "DomainError",
    "FlowConfig",
    "FlowSolver",
    "FlowState",
    "FrameOperators",
    "J_dissipation",
    "J_tilde_dissipation",
    "J_tilde_value",
    "J_value",
    "NewtonConfig",
    "NewtonFailureError",
    "NewtonResult",
    "RunResult",
    "StepFailureError",
    "SupportField",
    "build_cap_mesh",
    "cap_area",
    "cap_volume",
    "curvature",
    "ell_field",
    "embed",
    "frame_operators",
    "integrate",
    "measure_densities",
    "run",
    "solve_stationary",
    "stationary_residual",
    "symmetrize_even",
    "validate_admissible",
    "volume",
    "__version__",
]
