"""Composite adaptive control with dual estimators and excitation memory."""

from .config import (
    ConfigError,
    IEPolicy,
    ScenarioConfig,
    apply_overrides,
    from_dict,
    load_config,
    parse_config,
)
from .controller import GainSet, control, matching_gains
from .numerics import min_eigen_sym, rk4_step, solve_lyapunov
from .plant import (
    PlantConfig,
    ReferenceConfig,
    TrueParameter,
    plant_deriv,
    reference_deriv,
    reference_input,
    regressor,
    true_parameter,
)
from .primary import drive_signal_y, primary_update
from .projection import convex_f, gamma_projection
from .secondary import (
    FilterBank,
    IEMonitor,
    compute_g,
    compute_h,
    drive_signal_ystar,
    first_layer_derivs,
    ie_monitor_step,
    second_layer_derivs,
    secondary_update,
)
from .simulate import (
    DivergedError,
    SimState,
    TrajectoryLog,
    assemble_derivative,
    available_backends,
    lyapunov_values,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "IEPolicy",
    "ScenarioConfig",
    "apply_overrides",
    "from_dict",
    "load_config",
    "parse_config",
    "GainSet",
    "control",
    "matching_gains",
    "min_eigen_sym",
    "rk4_step",
    "solve_lyapunov",
    "PlantConfig",
    "ReferenceConfig",
    "TrueParameter",
    "plant_deriv",
    "reference_deriv",
    "reference_input",
    "regressor",
    "true_parameter",
    "drive_signal_y",
    "primary_update",
    "convex_f",
    "gamma_projection",
    "FilterBank",
    "IEMonitor",
    "compute_g",
    "compute_h",
    "drive_signal_ystar",
    "first_layer_derivs",
    "ie_monitor_step",
    "second_layer_derivs",
    "secondary_update",
    "DivergedError",
    "SimState",
    "TrajectoryLog",
    "assemble_derivative",
    "available_backends",
    "lyapunov_values",
    "run_scenario",
    "__version__",
]
