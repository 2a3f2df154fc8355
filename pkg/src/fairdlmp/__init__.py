"""Fairness-regularized DLMP market engine for radial distribution feeders."""

from .agents import Aggregator, AggregatorBank, Prosumer, aggregate_response, best_response, utility
from .fairness import FairnessContext, jain_gradient, jain_masked, jain_scalar
from .network import RadialNetwork, TopologyOperators, build_topology, parse_feeder
from .powerflow import (ConstraintSet, PowerFlowSolution, SensitivityModel,
                        assemble_constraints, linearization_error, linearize,
                        loss_jacobians, solve_ac)
from .runner import build_market, price_of_fairness, run_scenario, run_sweep
from .scenarios import Scenario, generate_scenario
from .solver import (DlmpBreakdown, MarketConfig, MarketResult, SolverState,
                     augmented_lagrangian, dual_update, kkt_report, price_update,
                     run_market, solve_reference)

__version__ = "0.1.0"
