"""Shared fixtures: tiny feeders and small market instances with known behavior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from fairdlmp.agents import Aggregator, AggregatorBank, Prosumer
from fairdlmp.network import RadialNetwork, TopologyOperators, build_topology, parse_feeder
from fairdlmp.powerflow import (ConstraintSet, SensitivityModel, assemble_constraints,
                                linearize, solve_ac)
from fairdlmp.solver import MarketConfig

# reactive/real coupling at 0.95 power factor
TAN_PHI = float(np.tan(np.arccos(0.95)))

TWO_NODE_FEEDER = """\
[base]
mva = 1.0
kv = 4.8
v0_pu = 1.0
delta0_rad = 0.0

[nodes]
1

[lines]
0 1 0.01 0.01 10.0 10.0

[aggregators]
A1 1

[limits]
epsilon_pu = 0.1
"""


def two_node_network(epsilon: float = 0.1, p_limit: float = 10.0) -> RadialNetwork:
    return RadialNetwork(
        base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
        parent=[0], r=[0.01], x=[0.01],
        p_limit=[p_limit], q_limit=[p_limit],
        epsilon=epsilon, aggregator_nodes=[1], aggregator_labels=("A1",),
    )


def two_bus_exact(r: float, x: float, p: float, q: float, v0: float = 1.0):
    """Independent closed-form solution of the single-line branch-flow fixed point.

    With receiving-end flow (P, Q) = (p, q) the squared receiving voltage
    solves the quadratic  w^2 + (2(rP+xQ) - v0^2) w + (r^2+x^2)(P^2+Q^2) = 0
    (largest root is the physical branch). Returns (V1, LP, LQ).
    """
    roots = np.roots([1.0, 2.0 * (r * p + x * q) - v0 ** 2,
                      (r ** 2 + x ** 2) * (p ** 2 + q ** 2)])
    w = float(max(root.real for root in roots if abs(root.imag) < 1e-12))
    v1 = np.sqrt(w)
    i2 = (p ** 2 + q ** 2) / w
    return v1, r * i2, x * i2


@dataclass(frozen=True)
class SmallInstance:
    """A fully assembled <= 4-aggregator market with a known binding pattern."""

    name: str
    net: RadialNetwork
    tops: TopologyOperators
    sens: SensitivityModel
    cons: ConstraintSet
    bank: AggregatorBank
    aggregators: list[Aggregator]
    config: MarketConfig


def _four_aggregators() -> list[Aggregator]:
    return [
        Aggregator(node=1, label="A1", prosumers=[Prosumer(3.0, 1.2), Prosumer(2.2, 0.8)]),
        Aggregator(node=2, label="A2", prosumers=[Prosumer(3.6, 1.5), Prosumer(1.8, 1.0)]),
        Aggregator(node=3, label="A3", prosumers=[Prosumer(2.8, 0.9), Prosumer(3.2, 1.4)]),
        Aggregator(node=4, label="A4", prosumers=[Prosumer(2.4, 1.1), Prosumer(3.4, 0.7)]),
    ]


def small_instance(name: str) -> SmallInstance:
    """Three fixed 4-aggregator instances: unconstrained, voltage-binding,
    congestion-binding.

    The binding variants procure 25% above the reference import so the
    optimum presses against a limit placed between the reference and the
    unconstrained-optimum stress level; the budget constant is lowered and
    an explicit price floor below the clearing price is set so only the
    intended constraint is active.
    """
    if name == "congestion":
        parent = [0, 1, 1, 3]        # node 2 and subtree {3, 4} on separate branches
        p_limits = [8.0, 1.25, 8.0, 8.0]
        epsilon = 0.12
    else:
        parent = [0, 1, 2, 3]
        p_limits = [8.0] * 4
        epsilon = 0.065 if name == "voltage" else 0.12
    if name == "unconstrained":
        fraction, budget_c0, floor = 0.9, 2.0, None
    else:
        fraction, budget_c0, floor = 1.25, 1.0, 1.2

    net = RadialNetwork(
        base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
        parent=parent,
        r=[0.004, 0.005, 0.0045, 0.0055], x=[0.004, 0.005, 0.0045, 0.0055],
        p_limit=p_limits, q_limit=[l * 0.5 for l in p_limits],
        epsilon=epsilon, aggregator_nodes=[1, 2, 3, 4],
        aggregator_labels=("A1", "A2", "A3", "A4"),
    )
    tops = build_topology(net)
    aggs = _four_aggregators()
    bank = AggregatorBank(aggs)
    tan_phi = np.full(4, TAN_PHI)
    p_flat = bank.respond(np.full(4, 2.0))
    reference = solve_ac(net, p_flat, tan_phi * p_flat)
    sens = linearize(net, tops, reference, tan_phi)
    P0 = fraction * sens.predict_import(p_flat)
    cons = assemble_constraints(sens, net, P0, budget_c0)
    config = MarketConfig(c0=2.0, P0=P0, price_floor=floor,
                          tol_p=4e-9, tol_feas=1e-7, window=200)
    return SmallInstance(name=name, net=net, tops=tops, sens=sens, cons=cons,
                         bank=bank, aggregators=aggs, config=config)


@pytest.fixture(scope="session")
def instance_unconstrained() -> SmallInstance:
    return small_instance("unconstrained")


@pytest.fixture(scope="session")
def instance_voltage() -> SmallInstance:
    return small_instance("voltage")


@pytest.fixture(scope="session")
def instance_congestion() -> SmallInstance:
    return small_instance("congestion")


def single_prosumer_market():
    """1 prosumer (a=2, b=1): at unit price 1 the closed-form demand is 1.

    P0 is set to the exact linear-model import at that demand, so the
    balance equality pins p = 1 and the clearing price is 1.
    """
    net = two_node_network()
    tops = build_topology(net)
    agg = Aggregator(node=1, label="A1", prosumers=[Prosumer(2.0, 1.0)])
    bank = AggregatorBank([agg])
    tan_phi = np.full(1, TAN_PHI)
    p_flat = bank.respond(np.full(1, 1.0))      # = 1 by construction
    reference = solve_ac(net, p_flat, tan_phi * p_flat)
    sens = linearize(net, tops, reference, tan_phi)
    P0 = sens.predict_import(p_flat)
    cons = assemble_constraints(sens, net, P0, 0.5)
    config = MarketConfig(c0=1.0, P0=P0, price_floor=0.5,
                          tol_p=1e-9, tol_feas=1e-8, window=200)
    return net, sens, cons, bank, [agg], config
