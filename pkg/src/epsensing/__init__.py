"""Quantum-noise limits of exceptional-point amplifying sensors."""

from .errors import (
    DecompositionError,
    DomainError,
    EPSensingError,
    IllConditionedCovarianceError,
    InstabilityError,
    InsufficientDataError,
    MalformedStateError,
    ParameterError,
    PreconditionError,
    SingularResponseError,
    SweepFailureError,
)
from .estimation import (
    SensitivityReport,
    cramer_rao,
    fisher_I1,
    fisher_upper_bound,
    heterodyne_uncertainty,
    sensitivity,
)
from .gaussian import (
    GaussianState,
    QuadratureLayout,
    coherent,
    make_gaussian_state,
    physicality_check,
    symplectic_form,
    vacuum,
)
from .model import (
    ResponseMatrix,
    SensorModel,
    SensorParams,
    amplitude_derivative,
    build_model,
    model_from_matrix,
    output_state,
    response_dense,
    response_expansion,
    single_mode_model,
)
from .spectral import JordanDecomposition, JordanProfile, jordan_decompose, jordan_profile, synth_jordan_model
from .sweep import Scenario, SweepResult, builtin_scenarios, fit_power_law, run_sweep

__version__ = "0.1.0"
