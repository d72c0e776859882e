"""Structure-preserving exponential integrators for damped Hamiltonian PDEs."""

from .errors import (
    BlowUpError,
    ConfigError,
    ExpdgError,
    NonConvergenceError,
    SingularMatrixError,
    UnsupportedModelError,
)
from .spatial import Grid, PeriodicStencilOperator, build_grid, derivative_operator, quadrature
from .linalg import NonlinearSolveSettings, PeriodicBandedMatrix, newton_solve, solve_periodic_banded
from .system import ConformalModel, Invariant, PolarizedEnergy
from .models import PRESETS, initial_condition, make_model
from .integrators import Exponents, SchemeSpec, StepResult, exponents, integrate
from .diagnostics import (
    OrderFit,
    RunRecord,
    observed_order,
    reference_solve,
    residual_series,
    transformed_polarized_series,
)

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ConfigError",
    "ConformalModel",
    "Exponents",
    "ExpdgError",
    "Grid",
    "Invariant",
    "NonConvergenceError",
    "NonlinearSolveSettings",
    "OrderFit",
    "PRESETS",
    "PeriodicBandedMatrix",
    "PeriodicStencilOperator",
    "PolarizedEnergy",
    "RunRecord",
    "SchemeSpec",
    "SingularMatrixError",
    "StepResult",
    "UnsupportedModelError",
    "build_grid",
    "derivative_operator",
    "exponents",
    "initial_condition",
    "integrate",
    "make_model",
    "newton_solve",
    "observed_order",
    "quadrature",
    "reference_solve",
    "residual_series",
    "solve_periodic_banded",
    "transformed_polarized_series",
    "__version__",
]
