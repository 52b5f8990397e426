"""Multicomposite optimization with exact penalty reformulations.

The library builds structured composite problems (an outer function applied
to a chain of layer maps, plus a ridge term), evaluates exact one-sided
first and second directional derivatives, certifies penalty weights that
make the lifted reformulation exact, tests tangent/radial cone membership
and d-stationarity of both orders, and runs a small penalty-descent solver.
A recurrent-network training instance exercises the whole pipeline.
"""

__version__ = "0.1.0"

from .cones import (
    ConeMembership,
    lift_direction,
    radial_membership,
    tangent_membership,
)
from .dcalc import (
    DDValue,
    Direction,
    dd_expr,
    dd_F,
    dd_Psi,
    dd_Theta,
    direction_from_flat,
    fd_oracle,
    lift_first,
    zeros_direction,
)
from .expr import (
    Expr,
    add,
    affine,
    const,
    dot,
    leaky,
    mul,
    plus,
    scaled,
    sqnorm,
    square,
    sub,
    theta,
    uref,
    vabs,
    vmax,
)
from .model import (
    CompositeProblem,
    DimensionError,
    EvaluationError,
    InfeasiblePointError,
    LayerMap,
    Point,
    Residuals,
    eval_F,
    eval_g,
    eval_layers,
    eval_Psi_plus_reg,
    eval_Theta,
    point_from_flat,
    reference_point_and_level,
    residuals,
)
from .penalty import (
    PenaltyConfig,
    build_config,
    certify,
    estimate_moduli,
    feasibility_descent_direction,
    suggest_beta,
    thresholds,
)
from .pieces import TooManyPieces, function_pieces, minimize_pieces
from .rnn import (
    RnnSpec,
    RnnThresholds,
    TrainReport,
    desk_instance,
    rnn_penalty_config,
    rnn_tangent_cone_check,
    rnn_thresholds,
    train_and_certify,
)
from .rnn import build_problem as build_rnn_problem
from .serialize import (
    FormatError,
    load_direction,
    load_point,
    load_problem,
    save_direction,
    save_point,
    save_problem,
)
from .solver import SolveConfig, SolveResult, minimize_theta, polish_to_feasible
from .stationarity import (
    INCONCLUSIVE,
    NOT_STATIONARY,
    STATIONARY,
    StationarityReport,
    check_box,
    check_d_stationary_P0,
    check_d_stationary_P1,
    check_second_order,
    check_strong_local_min_sufficient,
    compare_sets_on_point,
)

__all__ = [
    "__version__",
    "ConeMembership",
    "lift_direction",
    "radial_membership",
    "tangent_membership",
    "DDValue",
    "Direction",
    "dd_expr",
    "dd_F",
    "dd_Psi",
    "dd_Theta",
    "direction_from_flat",
    "fd_oracle",
    "lift_first",
    "zeros_direction",
    "Expr",
    "add",
    "affine",
    "const",
    "dot",
    "leaky",
    "mul",
    "plus",
    "scaled",
    "sqnorm",
    "square",
    "sub",
    "theta",
    "uref",
    "vabs",
    "vmax",
    "CompositeProblem",
    "DimensionError",
    "EvaluationError",
    "InfeasiblePointError",
    "LayerMap",
    "Point",
    "Residuals",
    "eval_F",
    "eval_g",
    "eval_layers",
    "eval_Psi_plus_reg",
    "eval_Theta",
    "point_from_flat",
    "reference_point_and_level",
    "residuals",
    "PenaltyConfig",
    "build_config",
    "certify",
    "estimate_moduli",
    "feasibility_descent_direction",
    "suggest_beta",
    "thresholds",
    "TooManyPieces",
    "function_pieces",
    "minimize_pieces",
    "RnnSpec",
    "RnnThresholds",
    "TrainReport",
    "build_rnn_problem",
    "desk_instance",
    "rnn_penalty_config",
    "rnn_tangent_cone_check",
    "rnn_thresholds",
    "train_and_certify",
    "FormatError",
    "load_direction",
    "load_point",
    "load_problem",
    "save_direction",
    "save_point",
    "save_problem",
    "SolveConfig",
    "SolveResult",
    "minimize_theta",
    "polish_to_feasible",
    "INCONCLUSIVE",
    "NOT_STATIONARY",
    "STATIONARY",
    "StationarityReport",
    "check_box",
    "check_d_stationary_P0",
    "check_d_stationary_P1",
    "check_second_order",
    "check_strong_local_min_sufficient",
    "compare_sets_on_point",
]
