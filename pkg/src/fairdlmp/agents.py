"""Prosumer utility model, closed-form best response, and aggregator responses.

The privacy boundary lives here: everything outside this module sees only
the (unit cost in, aggregate demand / welfare out) interface of an
aggregator, never the per-prosumer (a, b, g) parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class AgentError(ValueError):
    pass


@dataclass(frozen=True)
class Prosumer:
    """Log-utility prosumer: u(x) = a*log(b*x + 1), PV generation g >= 0."""

    a: float
    b: float
    g: float = 0.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise AgentError("utility parameters a, b must be > 0")
        if self.g < 0:
            raise AgentError("generation g must be >= 0")


def utility(pros: Prosumer, x: float) -> float:
    """Utility of consuming x (pu). Concave, increasing, u(0) = 0."""
    if x < 0:
        raise AgentError("consumption must be >= 0")
    return pros.a * math.log(pros.b * x + 1.0)


def payoff(pros: Prosumer, p: float, c: float) -> float:
    """Payoff u(p + g) - c*p of bidding net demand p at unit cost c."""
    return utility(pros, p + pros.g) - c * p


def best_response(pros: Prosumer, c: float) -> float:
    """Payoff-maximizing net demand at unit cost c > 0.

    Closed form: max((a*b - c) / (c*b), 0) - g. Ties at c = a*b resolve
    to zero consumption deterministically.
    """
    if c <= 0:
        raise AgentError("unit cost must be > 0 (nonpositive price is a protocol fault)")
    return max((pros.a * pros.b - c) / (c * pros.b), 0.0) - pros.g


@dataclass
class Aggregator:
    """Node-level intermediary over a group of prosumers.

    last_response / last_welfare cache the most recent aggregate_response.
    """

    node: int
    prosumers: list[Prosumer]
    label: str = ""
    last_response: float | None = field(default=None, compare=False)
    last_welfare: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.prosumers) < 1:
            raise AgentError("aggregator needs at least one prosumer")

    @property
    def size(self) -> int:
        return len(self.prosumers)


def aggregate_response(agg: Aggregator, c: float) -> tuple[float, float]:
    """Aggregate demand and welfare of all prosumers at unit cost c."""
    p_total = 0.0
    w_total = 0.0
    for pros in agg.prosumers:
        p = best_response(pros, c)
        p_total += p
        w_total += utility(pros, p + pros.g)
    agg.last_response = p_total
    agg.last_welfare = w_total
    return p_total, w_total


def distribute_demand(prosumers: list[Prosumer], p_total: float) -> tuple[np.ndarray, float]:
    """Welfare-maximizing split of an aggregate net demand (test oracle).

    Maximizes sum_i u_i(x_i) subject to sum_i (x_i - g_i) = p_total and
    x_i >= 0. Returns the consumptions x and the shadow price mu, i.e. the
    common marginal utility of the active prosumers. Splitting at the
    price mechanism's unit cost c reproduces the best responses exactly,
    so mu is the welfare slope dW/dp at the aggregate p_total.
    """
    a = np.array([p.a for p in prosumers])
    b = np.array([p.b for p in prosumers])
    g = np.array([p.g for p in prosumers])
    total_x = p_total + g.sum()
    if total_x < -1e-12:
        raise AgentError("aggregate below total curtailment (x >= 0 infeasible)")
    total_x = max(total_x, 0.0)
    if total_x == 0.0:
        return np.zeros(len(prosumers)), float((a * b).max())
    # active set at multiplier mu: {i: a_i*b_i > mu}; on that set
    # sum(a_i/mu - 1/b_i) = total_x  =>  mu = sum(a_i) / (total_x + sum(1/b_i))
    thresholds = a * b
    order = np.argsort(-thresholds)
    a_sorted, b_sorted, thr = a[order], b[order], thresholds[order]
    cum_a = np.cumsum(a_sorted)
    cum_ib = np.cumsum(1.0 / b_sorted)
    mu = None
    for m in range(1, len(prosumers) + 1):
        cand = cum_a[m - 1] / (total_x + cum_ib[m - 1])
        lo = thr[m] if m < len(prosumers) else 0.0
        if lo <= cand <= thr[m - 1]:
            mu = cand
            break
    if mu is None:  # numerical corner: fall back to the full set
        mu = cum_a[-1] / (total_x + cum_ib[-1])
    x = np.maximum(a / mu - 1.0 / b, 0.0)
    return x, float(mu)


def welfare_of_aggregate(prosumers: list[Prosumer], p_total: float) -> tuple[float, float]:
    """Welfare and its slope at a given aggregate net demand (full-information oracle)."""
    a = np.array([p.a for p in prosumers])
    b = np.array([p.b for p in prosumers])
    x, mu = distribute_demand(prosumers, p_total)
    w = float((a * np.log(b * x + 1.0)).sum())
    return w, mu


class AggregatorBank:
    """Flat-array view of all aggregators for fast vectorized market loops.

    Responses are order-independent and identical to looping
    aggregate_response over the individual aggregators.
    """

    def __init__(self, aggregators: list[Aggregator]):
        self.aggregators = list(aggregators)
        self.nodes = np.array([agg.node for agg in aggregators], dtype=int)
        self.labels = [agg.label for agg in aggregators]
        self.sizes = np.array([agg.size for agg in aggregators], dtype=int)
        self.a = np.concatenate([[p.a for p in agg.prosumers] for agg in aggregators])
        self.b = np.concatenate([[p.b for p in agg.prosumers] for agg in aggregators])
        self.g = np.concatenate([[p.g for p in agg.prosumers] for agg in aggregators])
        self.index = np.repeat(np.arange(len(aggregators)), self.sizes)
        self.total_generation = np.bincount(self.index, weights=self.g,
                                            minlength=len(aggregators))

    def __len__(self) -> int:
        return len(self.aggregators)

    def respond(self, c: np.ndarray) -> np.ndarray:
        """Aggregate net demand per aggregator at prices c (one entry per aggregator)."""
        cp = c[self.index]
        p = np.maximum((self.a * self.b - cp) / (cp * self.b), 0.0) - self.g
        return np.bincount(self.index, weights=p, minlength=len(self))

    def welfare(self, c: np.ndarray) -> np.ndarray:
        """Per-aggregator welfare at the responses to prices c."""
        cp = c[self.index]
        x = np.maximum((self.a * self.b - cp) / (cp * self.b), 0.0)
        u = self.a * np.log(self.b * x + 1.0)
        return np.bincount(self.index, weights=u, minlength=len(self))
