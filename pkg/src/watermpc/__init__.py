"""Scenario-based stochastic MPC for flow-based drinking water networks.

The package solves receding-horizon pump and valve scheduling problems
under joint water-demand and electricity-price uncertainty, using an
accelerated proximal gradient method on the Fenchel dual with
tree-structured dual-gradient computation.
"""

from .forecast import ForecastSeries, seasonal_persistence, seasonal_persistence_forecast
from .network import (
    ControlledFlow,
    MixingNode,
    NetworkModel,
    NetworkTopology,
    Tank,
    TopologyError,
    build_lti,
)
from .problem import (
    CostWeights,
    ProblemInstance,
    apply_H,
    apply_H_adjoint,
    assemble_problem,
    eval_f,
    primal_objective,
    prox_g,
    prox_g_conjugate,
)
from .simulate import (
    SimulationConfig,
    SimulationLog,
    kpi_complexity,
    kpi_economic,
    kpi_safety,
    run_closed_loop,
)
from .solver import (
    FactorCache,
    SolverConfig,
    SolverResult,
    dual_gradient,
    estimate_lipschitz,
    factor_step,
    solve,
)
from .tree import (
    ScenarioFan,
    ScenarioTree,
    attach_forecast,
    leaves_to_scenarios,
    reduce_fan_to_tree,
    validate_tree,
    zero_price_errors,
)

__version__ = "0.1.0"

__all__ = [
    "ControlledFlow",
    "CostWeights",
    "FactorCache",
    "ForecastSeries",
    "MixingNode",
    "NetworkModel",
    "NetworkTopology",
    "ProblemInstance",
    "ScenarioFan",
    "ScenarioTree",
    "SimulationConfig",
    "SimulationLog",
    "SolverConfig",
    "SolverResult",
    "Tank",
    "TopologyError",
    "apply_H",
    "apply_H_adjoint",
    "assemble_problem",
    "attach_forecast",
    "build_lti",
    "dual_gradient",
    "estimate_lipschitz",
    "eval_f",
    "factor_step",
    "kpi_complexity",
    "kpi_economic",
    "kpi_safety",
    "leaves_to_scenarios",
    "primal_objective",
    "prox_g",
    "prox_g_conjugate",
    "reduce_fan_to_tree",
    "run_closed_loop",
    "seasonal_persistence",
    "seasonal_persistence_forecast",
    "solve",
    "validate_tree",
    "zero_price_errors",
]
