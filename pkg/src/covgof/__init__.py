"""Goodness-of-fit testing for covariate models in nonlinear inverse problems.

The package fits an individual-level mechanistic observation model whose
parameters depend on covariates, either through a low-dimensional parametric
family or through a vector-valued kernel expansion with quadratic-norm
regularization, and compares the two fits with Monte Carlo calibrated test
statistics. A two-compartment pharmacokinetic model with age and weight
covariates ships as the built-in application.

Layering, bottom up: ``kernels`` (matrix-valued kernels and coefficient
containers), ``invlinear`` (closed-form regularized solves of linearized
problems), ``optimize`` (generic damped least squares, quasi-Newton and
annealing), ``families`` (parametric clearance models), ``pkmodel`` (forward
model, scenarios, simulation), ``estimators`` (the staged fitting
procedures), ``cv`` (fold-based selection of the regularization weight),
``gof`` (statistics, Monte Carlo calibration, error-rate studies), ``bench``
(solution-strategy benchmark) and ``cli``.
"""

from .bench import BENCH_VARIANTS, BenchResult, benchmark_study
from .cv import CvResult, cross_validate_lambda, default_grid, make_folds
from .estimators import (
    FitOptions,
    FitResult,
    fit_combined,
    fit_nonparametric,
    fit_parametric,
    fit_result_from_dict,
    fit_result_to_dict,
    fit_smoothed_parametric,
    make_workspace,
    rkhs_objective,
)
from .families import (
    AFFINE,
    FAMILY_KINDS,
    MICHAELIS,
    SATURABLE,
    ParametricFamily,
    default_start,
    reference_family,
)
from .gof import (
    STATISTIC_KINDS,
    PowerResult,
    TestResult,
    compute_statistic,
    critical_value,
    gof_test,
    monte_carlo_null_sample,
    p_value,
    power_study,
    required_fits,
    statistic_profile,
)
from .invlinear import (
    LinearizedProblem,
    NumericsError,
    linearize,
    solve_linear_tikhonov,
)
from .kernels import (
    KernelSpec,
    MixedOperators,
    RkhsCoefficients,
    assemble_mixed_operators,
    clearance_only_kernel,
    maturation_kernel,
)
from .optimize import (
    SolverOptions,
    SolverReport,
    levenberg_marquardt,
    quasi_newton,
    simulated_annealing,
)
from .pkmodel import (
    Dataset,
    DosingSchedule,
    PkDomainError,
    PkModel,
    ScenarioSpec,
    WeightModel,
    load_dataset,
    save_dataset,
    scenario,
    scenario_names,
    simulate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AFFINE",
    "BENCH_VARIANTS",
    "BenchResult",
    "CvResult",
    "Dataset",
    "DosingSchedule",
    "FAMILY_KINDS",
    "FitOptions",
    "FitResult",
    "KernelSpec",
    "LinearizedProblem",
    "MICHAELIS",
    "MixedOperators",
    "NumericsError",
    "ParametricFamily",
    "PkDomainError",
    "PkModel",
    "PowerResult",
    "RkhsCoefficients",
    "SATURABLE",
    "STATISTIC_KINDS",
    "ScenarioSpec",
    "SolverOptions",
    "SolverReport",
    "TestResult",
    "WeightModel",
    "assemble_mixed_operators",
    "benchmark_study",
    "clearance_only_kernel",
    "compute_statistic",
    "critical_value",
    "cross_validate_lambda",
    "default_grid",
    "default_start",
    "fit_combined",
    "fit_nonparametric",
    "fit_parametric",
    "fit_smoothed_parametric",
    "gof_test",
    "fit_result_from_dict",
    "fit_result_to_dict",
    "levenberg_marquardt",
    "linearize",
    "load_dataset",
    "make_folds",
    "make_workspace",
    "maturation_kernel",
    "monte_carlo_null_sample",
    "p_value",
    "power_study",
    "quasi_newton",
    "reference_family",
    "required_fits",
    "rkhs_objective",
    "save_dataset",
    "scenario",
    "scenario_names",
    "simulate_dataset",
    "simulated_annealing",
    "solve_linear_tikhonov",
    "statistic_profile",
    "__version__",
]
