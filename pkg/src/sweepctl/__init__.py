"""Simulation, discrete optimal control and optimality checks for controlled sweeping processes."""

from .config import ModelConfig, dump_config, parse_config, parse_config_text
from .dynamics import (
    DiscreteTrajectory,
    ProcessSpec,
    epsilon_k,
    integrate,
    recover_eta,
    step_catching_up,
    step_explicit,
    to_csv,
    w12_distance,
)
from .errors import (
    ConfigError,
    DomainViolation,
    InvalidArgument,
    NotInCone,
    NumericalFailure,
    PreconditionViolation,
    ProxRadiusWarning,
    ReconstructionFailed,
    SweepError,
)
from .geometry import (
    SweepingSet,
    active_set,
    affine_set,
    check_assumptions,
    disk_set,
    membership,
    normal_cone_element,
    project,
    separation_set,
)
from .models import AnalyticSolution, builtin_car, builtin_crowd
from .optimality import (
    ConditionReport,
    DualSystem,
    check_continuous,
    check_discrete,
    lift_to_continuous,
    nontriviality,
    reconstruct_duals,
)
from .second_order import (
    OrthantCoderivativeQuery,
    coderivative_F,
    coderivative_normal_cone,
    coderivative_orthant,
)
from .transcription import CostSpec, DiscreteProblem, SolverOptions, build_pk, convergence_study, solve

__version__ = "0.1.0"
