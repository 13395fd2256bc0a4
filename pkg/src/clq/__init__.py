"""Constrained stochastic linear-quadratic control with multiplicative noise.

Scalar state, vector control, linear state-scaled control constraints
H u <= d |x|.  The optimal policy is piecewise affine in the state and is
computed off-line from two coupled backward recursions; an infinite-horizon
fixed point gives the stationary policy, and a mean-variance portfolio layer
calibrates target-wealth policies on top of the same engine.
"""

from .model import (ClqError, ConstraintSpec, CostSpec, InfeasibleError,
                    MarkovModel, Moments, ProblemSpec, ScenarioSet,
                    ValidationReport, VertexEnumerationTooLargeError,
                    feasible_gain, kset_is_bounded, kset_vertices, load_problem,
                    moments, problem_from_dict, validate)
from .objective import (ObjectiveContext, ValuePair, eval_g, eval_gbar,
                        eval_ghat, grad_gbar, grad_ghat)
from .solver import (DimensionTooLargeError, NonBoxConstraintError, SolveResult,
                     SolverConfig, UnboundedBelowError, brute_force_oracle,
                     minimize, project)
from .riccati import (FixedPoint, RiccatiSolution, SingularStageMatrixError,
                      StageSolveError, ThresholdReport, check_threshold,
                      fixed_point_residuals, solve_finite, solve_infinite,
                      solve_unconstrained)
from .policy_sim import (NotConvergedError, Policy, SimulationResult,
                         StabilityCertificate, control, enumerate_paths,
                         simulate, stability_certificate)
from .mv import (FrontierPoint, MarketSpec, MvCalibration,
                 TargetBelowRiskfreeError, calibrate, exact_terminal_mean,
                 frontier, load_market, market_from_dict, mv_policy,
                 simulate_wealth)

__version__ = "0.1.0"

__all__ = [
    "ClqError", "ConstraintSpec", "CostSpec", "InfeasibleError", "MarkovModel",
    "Moments", "ProblemSpec", "ScenarioSet", "ValidationReport",
    "VertexEnumerationTooLargeError", "feasible_gain", "kset_is_bounded",
    "kset_vertices", "load_problem", "moments", "problem_from_dict", "validate",
    "ObjectiveContext", "ValuePair", "eval_g", "eval_gbar", "eval_ghat",
    "grad_gbar", "grad_ghat",
    "DimensionTooLargeError", "NonBoxConstraintError", "SolveResult",
    "SolverConfig", "UnboundedBelowError", "brute_force_oracle", "minimize",
    "project",
    "FixedPoint", "RiccatiSolution", "SingularStageMatrixError",
    "StageSolveError", "ThresholdReport", "check_threshold",
    "fixed_point_residuals", "solve_finite", "solve_infinite",
    "solve_unconstrained",
    "NotConvergedError", "Policy", "SimulationResult", "StabilityCertificate",
    "control", "enumerate_paths", "simulate", "stability_certificate",
    "FrontierPoint", "MarketSpec", "MvCalibration", "TargetBelowRiskfreeError",
    "calibrate", "exact_terminal_mean", "frontier", "load_market",
    "market_from_dict", "mv_policy", "simulate_wealth",
]
