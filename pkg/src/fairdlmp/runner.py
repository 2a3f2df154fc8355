"""End-to-end orchestration: scenario -> models -> market run -> records."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .agents import AggregatorBank
from .network import RadialNetwork, TopologyOperators, build_topology
from .powerflow import (ConstraintSet, LinearizationErrorReport, SensitivityModel,
                        assemble_constraints, linearization_error, linearize, solve_ac)
from .scenarios import Scenario
from .solver import MarketConfig, MarketResult, run_market


@dataclass(frozen=True)
class MarketSetup:
    """All models built for one scenario, reusable across fairness weights."""

    net: RadialNetwork
    tops: TopologyOperators
    sens: SensitivityModel
    cons: ConstraintSet
    bank: AggregatorBank
    config: MarketConfig
    scenario: Scenario


@dataclass(frozen=True)
class RunRecord:
    scenario_digest: str
    config: MarketConfig
    scenario: Scenario
    result: MarketResult
    linearization: LinearizationErrorReport
    duration_s: float


def build_market(scenario: Scenario, config: MarketConfig | None = None) -> MarketSetup:
    """Parse the feeder, solve the reference point, linearize, and assemble constraints.

    The linearization reference is the AC solution at the flat-price
    pre-solve (every aggregator responding to c0); P0 defaults to a
    fraction of the predicted import there so the balance constraint is
    meaningfully active.
    """
    net = scenario.load_network()
    tops = build_topology(net)
    aggregators = scenario.build_aggregators(net)
    bank = AggregatorBank(aggregators)
    tan_phi = scenario.tan_phi(len(bank))

    c_flat = np.full(len(bank), scenario.c0)
    p_ref = bank.respond(c_flat)
    q_ref = tan_phi * p_ref
    reference = solve_ac(net, p_ref, q_ref)
    sens = linearize(net, tops, reference, tan_phi)

    P0 = scenario.P0
    if P0 is None:
        P0 = scenario.procurement_fraction * sens.predict_import(p_ref)
    cons = assemble_constraints(sens, net, P0, scenario.c0)

    base = config or MarketConfig()
    cfg = replace(base, eta=scenario.eta, fairness_weight=scenario.fairness_weight,
                  c0=scenario.c0, P0=P0)
    return MarketSetup(net=net, tops=tops, sens=sens, cons=cons, bank=bank,
                       config=cfg, scenario=scenario)


def run_scenario(scenario: Scenario, config: MarketConfig | None = None,
                 setup: MarketSetup | None = None) -> RunRecord:
    """One full market run plus a linearization-error report at the converged point."""
    t0 = time.perf_counter()
    ms = setup or build_market(scenario, config)
    result = run_market(ms.net, ms.sens, ms.cons, ms.bank, ms.config)
    q_final = ms.sens.tan_phi * result.p
    linerr = linearization_error(ms.net, ms.sens, result.p, q_final)
    return RunRecord(scenario_digest=scenario.digest(), config=ms.config,
                     scenario=scenario, result=result, linearization=linerr,
                     duration_s=time.perf_counter() - t0)


def price_of_fairness(welfare_at_C: float, welfare_at_0: float,
                      tolerance: float = 1e-9) -> float:
    """Fractional welfare loss of regularization against the unregularized run."""
    if welfare_at_0 <= 0:
        raise ValueError("baseline welfare must be > 0")
    if welfare_at_C > welfare_at_0 * (1.0 + tolerance) + tolerance:
        raise ValueError("regularized welfare exceeds the unregularized baseline")
    return 1.0 - welfare_at_C / welfare_at_0


@dataclass(frozen=True)
class SweepRow:
    fairness_weight: float
    jain: float
    total_welfare: float
    price_of_fairness: float
    converged: bool
    iterations: int


def run_sweep(scenario: Scenario, c_grid: list[float],
              config: MarketConfig | None = None) -> list[SweepRow]:
    """One market run per fairness weight, identical seed/config otherwise."""
    c_grid = sorted(c_grid)
    rows: list[SweepRow] = []
    baseline: float | None = None
    setup_cache: MarketSetup | None = None
    for C in c_grid:
        sc = replace(scenario, fairness_weight=C)
        if setup_cache is None:
            setup_cache = build_market(sc, config)
            ms = setup_cache
        else:
            # models depend only on the feeder and agents, not on C
            ms = replace(setup_cache, config=replace(setup_cache.config, fairness_weight=C),
                         scenario=sc)
        result = run_market(ms.net, ms.sens, ms.cons, ms.bank, ms.config)
        if baseline is None:
            base_run = result if C == 0.0 else run_market(
                ms.net, ms.sens, ms.cons, ms.bank, replace(ms.config, fairness_weight=0.0))
            baseline = base_run.total_welfare
        pof = price_of_fairness(min(result.total_welfare, baseline), baseline)
        rows.append(SweepRow(fairness_weight=C, jain=result.jain,
                             total_welfare=result.total_welfare,
                             price_of_fairness=pof, converged=result.converged,
                             iterations=result.iterations))
    return rows
