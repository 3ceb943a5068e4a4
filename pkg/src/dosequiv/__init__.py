"""Equivalence testing between subgroup and full-population dose-response curves.

The package decides, via constrained parametric bootstrap tests, whether the
dose-response curves of one or several subgroups stay within a threshold (in
maximum deviation) of the weighted full-population curve in a multi-regional
trial, and ships the estimation, distance, asymptotic, and simulation
machinery behind that decision.
"""

__version__ = "0.1.0"

from .asymptotics import (
    AsymptoticModel,
    build_asymptotic_model,
    information_blocks,
    sample_S,
    sample_T,
)
from .bootstrap import (
    BootstrapDistribution,
    CalibrationResult,
    IuTestResult,
    TestConfig,
    TestResult,
    calibrate_delta,
    test_many,
    test_many_iu,
    test_one,
)
from .design import Dataset, GroupVariances, StudyDesign, generate, load_csv, save_csv
from .distance import (
    DistanceResult,
    DistanceTarget,
    PopulationCurve,
    d_inf,
    d_inf_inf,
    distance_for_target,
)
from .errors import (
    BootstrapError,
    ConfigError,
    ConstraintError,
    DataValidationError,
    DosequivError,
    FitConvergenceError,
    SimulationError,
)
from .estimate import (
    ConstrainedFitResult,
    FamilySpec,
    FitResult,
    fit_constrained,
    fit_mle,
)
from .models import (
    DoseResponseModel,
    EmaxParams,
    ModelFamily,
    default_bounds,
    emax_model,
    evaluate,
    gradient,
)
from .simharness import Scenario, ScenarioRow, SimResult, emit_table, load_scenario, run_scenario

__all__ = [
    "__version__",
    "AsymptoticModel",
    "BootstrapDistribution",
    "BootstrapError",
    "CalibrationResult",
    "ConfigError",
    "ConstrainedFitResult",
    "ConstraintError",
    "Dataset",
    "DataValidationError",
    "DistanceResult",
    "DistanceTarget",
    "DoseResponseModel",
    "DosequivError",
    "EmaxParams",
    "FamilySpec",
    "FitConvergenceError",
    "FitResult",
    "GroupVariances",
    "IuTestResult",
    "ModelFamily",
    "PopulationCurve",
    "Scenario",
    "ScenarioRow",
    "SimResult",
    "SimulationError",
    "StudyDesign",
    "TestConfig",
    "TestResult",
    "build_asymptotic_model",
    "calibrate_delta",
    "d_inf",
    "d_inf_inf",
    "default_bounds",
    "distance_for_target",
    "emax_model",
    "emit_table",
    "evaluate",
    "fit_constrained",
    "fit_mle",
    "generate",
    "gradient",
    "information_blocks",
    "load_csv",
    "load_scenario",
    "run_scenario",
    "sample_S",
    "sample_T",
    "save_csv",
    "test_many",
    "test_many_iu",
    "test_one",
]
