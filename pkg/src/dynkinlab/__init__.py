"""Dynkin stopping games under g-expectations on a random-walk lattice."""
from .bsde import StoppingRule, evaluate_at_rule, one_step, solve_bsde
from .constrained import constrained_report, continuity_from_below_check, run_ladder
from .dynkin import (
    GameInstance,
    classical_dynkin_value,
    enumerate_rules,
    evaluate_pair,
    game_value,
    saddle_times,
    verify_saddle,
)
from .generators import (
    ConstraintSpec,
    GeneratorSpec,
    eval_constraint,
    eval_generator,
    penalized_driver,
    validate_step,
)
from .lattice import AdaptedProcess, Lattice, Mode, NodeId, build_lattice
from .rbsde import (
    BarrierSpec,
    NodeFunction,
    SolutionTriple,
    skorokhod_residuals,
    solve_drbsde,
    solve_drbsde_penalized,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptedProcess",
    "BarrierSpec",
    "ConstraintSpec",
    "GameInstance",
    "GeneratorSpec",
    "Lattice",
    "Mode",
    "NodeFunction",
    "NodeId",
    "SolutionTriple",
    "StoppingRule",
    "build_lattice",
    "classical_dynkin_value",
    "constrained_report",
    "continuity_from_below_check",
    "enumerate_rules",
    "eval_constraint",
    "eval_generator",
    "evaluate_at_rule",
    "evaluate_pair",
    "game_value",
    "one_step",
    "penalized_driver",
    "run_ladder",
    "saddle_times",
    "skorokhod_residuals",
    "solve_bsde",
    "solve_drbsde",
    "solve_drbsde_penalized",
    "validate_step",
    "verify_saddle",
]
