"""Augmented-Lagrangian market mechanism and verification oracles.

run_market iterates the bilevel loop: broadcast prices, collect
aggregate demands, dual gradient steps on the grid constraints, then a
price reassembly from the dual/penalty terms plus the fairness
gradient. The emitted price is computed literally as the sum of its
four DLMP components, so the decomposition identity holds bitwise.

solve_reference is a full-information oracle for small instances:
projected gradient ascent on the welfare objective over the linear
constraint polytope, followed by an active-set Newton polish, with
KKT residuals reported through kkt_report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import nnls

from .agents import Aggregator, AggregatorBank, welfare_of_aggregate
from .fairness import FairnessContext, jain_gradient, jain_masked, DEFAULT_DEADBAND
from .network import RadialNetwork
from .powerflow import ConstraintSet, SensitivityModel


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarketConfig:
    """Run-time knobs of the ALM loop; eta and fairness weight stay fixed within a run."""

    eta: float = 1e-2
    fairness_weight: float = 0.0
    c0: float = 2.0
    P0: float = 0.0
    tol_p: float | None = None     # default 1e-5 * n_aggregators
    window: int = 100
    max_iter: int = 500_000
    relaxation: float = 1.0        # optional damping of the price assignment
    trace_stride: int = 200
    price_floor: float | None = None  # broadcast clamp; None -> 0.9 * c0
    tol_feas: float = 1e-4
    deadband: float = DEFAULT_DEADBAND

    def resolved_tol_p(self, n_agg: int) -> float:
        return self.tol_p if self.tol_p is not None else 1e-5 * n_agg

    def resolved_price_floor(self) -> float:
        # Just below the wholesale price: low enough that the converged
        # prices sit above it, high enough to bound the demand excursion
        # while the balance dual is still climbing.
        return self.price_floor if self.price_floor is not None else 0.9 * self.c0


@dataclass
class SolverState:
    """Mutable per-iteration state of the ALM loop."""

    c: np.ndarray
    p: np.ndarray
    alpha_lower: np.ndarray
    alpha_upper: np.ndarray
    beta: np.ndarray
    lam: float
    gamma: float
    eta: float
    fairness_weight: float
    iteration: int = 0
    small_step_count: int = 0

    @classmethod
    def initial(cls, cons: ConstraintSet, config: MarketConfig) -> "SolverState":
        n_agg = cons.n_aggregators
        n = len(cons.cl)
        return cls(c=np.full(n_agg, config.c0), p=np.zeros(n_agg),
                   alpha_lower=np.zeros(n), alpha_upper=np.zeros(n),
                   beta=np.zeros(len(cons.cS0)), lam=0.0, gamma=0.0,
                   eta=config.eta, fairness_weight=config.fairness_weight)


@dataclass(frozen=True)
class DlmpBreakdown:
    """Per-aggregator price components; their sum is the emitted price exactly."""

    voltage: np.ndarray
    congestion: np.ndarray
    energy_loss: np.ndarray
    fairness: np.ndarray

    def total(self) -> np.ndarray:
        return self.voltage + self.congestion + self.energy_loss + self.fairness


@dataclass(frozen=True)
class MarketResult:
    p: np.ndarray
    c: np.ndarray
    breakdown: DlmpBreakdown
    jain: float
    welfare_per_aggregator: np.ndarray
    total_welfare: float
    objective: float               # welfare + (C/2) J
    slacks: dict[str, float]
    duals: dict[str, np.ndarray | float]
    iterations: int
    converged: bool
    termination: str
    trace: list[tuple[int, float, float, float, float]]  # (iter, |dp|_1, L_a, max slack, J)


def dual_update(state: SolverState, cons: ConstraintSet, p: np.ndarray,
                c_pay: np.ndarray) -> SolverState:
    """Dual gradient steps with nonnegativity projection on the inequality duals.

    `c_pay` is the price the aggregators actually transacted at (the
    broadcast price after the floor), which is what the budget revenue
    must be evaluated at.
    """
    eta = state.eta
    state.alpha_lower = np.maximum(state.alpha_lower + eta * cons.voltage_lower(p), 0.0)
    state.alpha_upper = np.maximum(state.alpha_upper + eta * cons.voltage_upper(p), 0.0)
    state.beta = np.maximum(state.beta + eta * cons.flow(p), 0.0)
    state.lam = state.lam + eta * cons.balance(p)
    state.gamma = max(state.gamma + eta * cons.budget(p, c_pay), 0.0)
    return state


def price_update(state: SolverState, cons: ConstraintSet,
                 grad_jain: np.ndarray,
                 c_pay: np.ndarray) -> tuple[np.ndarray, DlmpBreakdown]:
    """Assemble the new price vector from its DLMP components.

    Voltage and congestion components carry the dual plus the penalty-
    weighted positive-part violations through the transposed constraint
    slopes; the balance dual and residual price energy and losses; any
    active budget contribution is folded into the energy+loss component;
    the fairness component is -(C/2) grad J so that discounts flow to
    under-allocated aggregators.
    """
    p, eta = state.p, state.eta
    gl = cons.voltage_lower(p)
    gu = cons.voltage_upper(p)
    gS = cons.flow(p)
    h = cons.balance(p)
    gB = cons.budget(p, c_pay)

    c_v = cons.CV.T @ (state.alpha_upper - state.alpha_lower) \
        + eta * cons.CV.T @ (np.maximum(gu, 0.0) - np.maximum(gl, 0.0))
    c_c = cons.CS.T @ state.beta + eta * cons.CS.T @ np.maximum(gS, 0.0)
    c_el = (state.lam + eta * h) * cons.cP0 \
        - (state.gamma + eta * max(gB, 0.0)) * c_pay
    c_f = -0.5 * state.fairness_weight * grad_jain

    c_new = c_v + c_c + c_el + c_f
    if not np.isfinite(c_new).all():
        raise SolverError("non-finite price component: run diverged")
    return c_new, DlmpBreakdown(voltage=c_v, congestion=c_c,
                                energy_loss=c_el, fairness=c_f)


def augmented_lagrangian(state: SolverState, cons: ConstraintSet, p: np.ndarray,
                         total_welfare: float, jain: float,
                         c_pay: np.ndarray) -> float:
    """Diagnostic value of the augmented Lagrangian at the current point."""
    eta = state.eta
    gl = cons.voltage_lower(p)
    gu = cons.voltage_upper(p)
    gS = cons.flow(p)
    h = cons.balance(p)
    gB = cons.budget(p, c_pay)
    val = total_welfare + 0.5 * state.fairness_weight * jain
    val -= state.alpha_lower @ gl + 0.5 * eta * gl @ np.maximum(gl, 0.0)
    val -= state.alpha_upper @ gu + 0.5 * eta * gu @ np.maximum(gu, 0.0)
    val -= state.beta @ gS + 0.5 * eta * gS @ np.maximum(gS, 0.0)
    val -= state.lam * h + 0.5 * eta * h * h
    val -= state.gamma * gB + 0.5 * eta * gB * max(gB, 0.0)
    return float(val)


def _slack_summary(cons: ConstraintSet, p: np.ndarray, c: np.ndarray) -> dict[str, float]:
    return cons.physical_slacks(p, c)


def run_market(net: RadialNetwork, sens: SensitivityModel, cons: ConstraintSet,
               aggregators: list[Aggregator] | AggregatorBank,
               config: MarketConfig) -> MarketResult:
    """Run the bilevel price/demand loop to convergence.

    Terminates when ||dp||_1 stays below tolerance for `window`
    consecutive iterations, or flags non-convergence at max_iter.
    """
    bank = aggregators if isinstance(aggregators, AggregatorBank) else AggregatorBank(aggregators)
    n_agg = len(bank)
    if cons.n_aggregators != n_agg:
        raise SolverError("constraint set and aggregator count mismatch")
    state = SolverState.initial(cons, config)
    tol_p = config.resolved_tol_p(n_agg)
    C = config.fairness_weight
    sizes = bank.sizes
    trace: list[tuple[int, float, float, float, float]] = []

    p_prev = None
    converged = False
    termination = "max_iter"
    grad_jain = np.zeros(n_agg)
    jain_val = float("nan")
    for it in range(1, config.max_iter + 1):
        state.iteration = it
        c_eff = np.maximum(state.c, config.resolved_price_floor())
        p = bank.respond(c_eff)
        state.p = p

        dual_update(state, cons, p, c_eff)

        ctx = None
        mask = p > config.deadband
        if mask.any():
            ctx = FairnessContext.from_allocation(p, c_eff, sizes, config.deadband)
            jain_val = jain_masked(ctx, p)
            grad_jain = jain_gradient(ctx, p, strict=False) if C != 0.0 else np.zeros(n_agg)
        else:
            jain_val = float("nan")
            grad_jain = np.zeros(n_agg)

        c_new, breakdown = price_update(state, cons, grad_jain, c_eff)
        if config.relaxation != 1.0:
            c_new = (1.0 - config.relaxation) * state.c + config.relaxation * c_new
        state.c = c_new

        dp = float(np.abs(p - p_prev).sum()) if p_prev is not None else math.inf
        p_prev = p
        # A floored broadcast can freeze the response while the duals are
        # still climbing, so small steps only count toward termination
        # when the iterate is also feasible to tolerance.
        if dp < tol_p and cons.max_slack(p, c_eff) <= config.tol_feas:
            state.small_step_count += 1
        else:
            state.small_step_count = 0

        if it % config.trace_stride == 0 or state.small_step_count >= config.window:
            w = float(bank.welfare(c_eff).sum())
            la = augmented_lagrangian(state, cons, p, w,
                                      0.0 if math.isnan(jain_val) else jain_val, c_eff)
            trace.append((it, dp, la, cons.max_slack(p, c_eff), jain_val))

        if state.small_step_count >= config.window:
            converged = True
            termination = "small_steps"
            break

    c_eff = np.maximum(state.c, config.resolved_price_floor())
    p = state.p
    welfare = bank.welfare(c_eff)
    total_welfare = float(welfare.sum())
    jain_final = jain_val if not math.isnan(jain_val) else 0.0
    return MarketResult(
        p=p, c=state.c, breakdown=breakdown, jain=jain_final,
        welfare_per_aggregator=welfare, total_welfare=total_welfare,
        objective=total_welfare + 0.5 * C * jain_final,
        slacks=_slack_summary(cons, p, c_eff),
        duals={"alpha_lower": state.alpha_lower, "alpha_upper": state.alpha_upper,
               "beta": state.beta, "lambda": state.lam, "gamma": state.gamma},
        iterations=state.iteration, converged=converged, termination=termination,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# full-information reference oracle (test-only privilege: sees agent parameters)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSolution:
    p: np.ndarray
    mu: np.ndarray                 # welfare slopes at p
    objective: float
    total_welfare: float
    jain: float
    kkt: "KktReport"


def _project_polytope(y: np.ndarray, G: np.ndarray, h: np.ndarray,
                      a_eq: np.ndarray, b_eq: float) -> np.ndarray:
    """Euclidean projection onto {x : G x <= h, a_eq . x = b_eq} via a small QP."""
    from cvxopt import matrix, solvers
    n = len(y)
    P = matrix(np.eye(n))
    q = matrix(-y)
    sol = solvers.qp(P, q, matrix(G), matrix(h),
                     matrix(a_eq.reshape(1, -1)), matrix([float(b_eq)]),
                     options={"show_progress": False, "abstol": 1e-10,
                              "reltol": 1e-10, "feastol": 1e-9})
    if sol["status"] not in ("optimal", "unknown"):
        raise SolverError(f"projection failed: {sol['status']}")
    return np.array(sol["x"]).ravel()


def _objective_pieces(aggregators: list[Aggregator], p: np.ndarray,
                      C: float, weights: np.ndarray | None,
                      deadband: float = DEFAULT_DEADBAND):
    """(objective, gradient, welfare, mu) of Omega at p with fairness weights held fixed."""
    w = np.zeros(len(p))
    mu = np.zeros(len(p))
    for k, agg in enumerate(aggregators):
        w[k], mu[k] = welfare_of_aggregate(agg.prosumers, p[k])
    total_w = float(w.sum())
    grad = mu.copy()
    jain_val = 0.0
    if C != 0.0 and weights is not None:
        z = (p > deadband).astype(float)
        ctx = FairnessContext(z=z, n=np.where(z > 0, weights, 0.0),
                              sizes=np.array([a.size for a in aggregators]),
                              prices=np.maximum(mu, 1e-12), deadband=deadband)
        if ctx.mask_count > 0:
            jain_val = jain_masked(ctx, p)
            grad = grad + 0.5 * C * jain_gradient(ctx, p, strict=False)
    return total_w + 0.5 * C * jain_val, grad, total_w, mu, jain_val


def solve_reference(net: RadialNetwork, sens: SensitivityModel, cons: ConstraintSet,
                    aggregators: list[Aggregator], C: float = 0.0,
                    iterations: int = 4000, outer_rounds: int = 3,
                    step0: float | None = None) -> ReferenceSolution:
    """Full-information maximization of the constrained welfare objective.

    Projected gradient ascent with diminishing steps and feasibility
    projection, then (for C = 0) an active-set Newton polish. Fairness
    weights are handled by an outer fixed-point recomputation matching
    the mechanism's per-iteration weight rule. The budget row is
    verified a posteriori rather than projected (its price vector is
    endogenous).
    """
    n_agg = len(aggregators)
    if n_agg > 6:
        raise SolverError("reference oracle is intended for small instances (<= 6 aggregators)")
    G = np.vstack([-cons.CV, cons.CV, cons.CS])
    h = np.concatenate([-cons.cl, -cons.cu, -cons.cS0])
    a_eq = cons.cP0
    b_eq = cons.P0 - cons.cP00

    sizes = np.array([a.size for a in aggregators])
    # start from an even split of the procurement
    p = _project_polytope(np.full(n_agg, b_eq / max(a_eq.sum(), 1e-12)), G, h, a_eq, b_eq)
    weights = None
    rounds = outer_rounds if C != 0.0 else 1
    for _ in range(rounds):
        if C != 0.0:
            _, _, _, mu, _ = _objective_pieces(aggregators, p, 0.0, None)
            weights = 1.0 / (np.maximum(mu, 1e-9) * sizes)
        if step0 is None:
            # scale the first step to the curvature of the welfare terms
            _, _, _, mu, _ = _objective_pieces(aggregators, p, 0.0, None)
            step = 0.5 * float(np.abs(p).sum() + 1.0) / float(np.abs(mu).sum() + 1.0)
        else:
            step = step0
        best_p, best_obj = p, -math.inf
        for j in range(iterations):
            obj, grad, _, _, _ = _objective_pieces(aggregators, p, C, weights)
            if obj > best_obj:
                best_obj, best_p = obj, p
            t = step / math.sqrt(1.0 + 0.05 * j)
            p = _project_polytope(p + t * grad, G, h, a_eq, b_eq)
        p = best_p
    if C == 0.0:
        p = _newton_polish(aggregators, p, G, h, a_eq, b_eq)

    obj, grad, total_w, mu, jain_val = _objective_pieces(aggregators, p, C, weights)
    kkt = kkt_report(cons, p, grad_objective=grad, prices=mu)
    if kkt.primal > 1e-6:
        raise SolverError(f"reference solve left primal residual {kkt.primal:.2e}")
    return ReferenceSolution(p=p, mu=mu, objective=obj, total_welfare=total_w,
                             jain=jain_val, kkt=kkt)


def _newton_polish(aggregators: list[Aggregator], p: np.ndarray,
                   G: np.ndarray, h: np.ndarray, a_eq: np.ndarray, b_eq: float,
                   tol: float = 1e-11, max_rounds: int = 8) -> np.ndarray:
    """Active-set Newton refinement of a near-optimal point (C = 0 only).

    Solves the KKT system with the near-active inequality rows pinned as
    equalities; rows whose multiplier comes out negative are released.
    """
    n = len(p)

    def mu_and_slope(pv):
        mu = np.zeros(n)
        dmu = np.zeros(n)
        for k, agg in enumerate(aggregators):
            _, m = welfare_of_aggregate(agg.prosumers, pv[k])
            mu[k] = m
            # slope of the water-filling multiplier on the current segment
            a = np.array([pr.a for pr in agg.prosumers])
            b = np.array([pr.b for pr in agg.prosumers])
            active = a * b > m * (1 + 1e-12)
            A_S = a[active].sum() if active.any() else a.sum()
            dmu[k] = -m * m / A_S
        return mu, dmu

    active = np.flatnonzero(G @ p - h > -1e-7)
    for _ in range(max_rounds):
        Ga = G[active]
        for _ in range(60):
            mu, dmu = mu_and_slope(p)
            n_act = len(active)
            K = np.zeros((n + n_act + 1, n + n_act + 1))
            K[:n, :n] = np.diag(dmu)
            K[:n, n:n + n_act] = -Ga.T
            K[:n, -1] = -a_eq
            K[n:n + n_act, :n] = Ga
            K[-1, :n] = a_eq
            rhs = np.concatenate([-mu, -(Ga @ p - h[active]), [-(a_eq @ p - b_eq)]])
            nu_lam = np.zeros(n_act + 1)
            try:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            except np.linalg.LinAlgError:
                return p
            dp_step = sol[:n]
            nu_lam = sol[n:]
            p = p + dp_step
            if np.abs(dp_step).max() < tol:
                break
        nu = nu_lam[:-1]
        if (nu >= -1e-9).all():
            break
        active = active[nu >= -1e-9]
    return p


# ---------------------------------------------------------------------------
# KKT residual report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KktReport:
    """Residual norms of the four KKT groups for the constrained welfare problem."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float
    multipliers: np.ndarray
    balance_multiplier: float


def kkt_report(cons: ConstraintSet, p: np.ndarray, grad_objective: np.ndarray,
               prices: np.ndarray | None = None,
               active_tol: float = 1e-5) -> KktReport:
    """KKT residuals of a point, with best-fit nonnegative multipliers.

    Multipliers for the near-active inequality rows are estimated by
    nonnegative least squares against the objective gradient (the
    equality multiplier is free); the stationarity residual is the
    remaining gradient mismatch. The budget row uses `prices` (defaults
    to the objective gradient, i.e. the welfare slopes).
    """
    c_budget = prices if prices is not None else grad_objective
    G = np.vstack([-cons.CV, cons.CV, cons.CS, -c_budget.reshape(1, -1)])
    slack = np.concatenate([cons.voltage_lower(p), cons.voltage_upper(p),
                            cons.flow(p), [cons.budget(p, c_budget)]])
    h_bal = cons.balance(p)
    primal = float(max(slack.max(initial=0.0), abs(h_bal), 0.0))

    scale = max(1.0, float(np.abs(grad_objective).max()))
    cand = np.flatnonzero(slack > -active_tol * scale)
    # columns: active inequality gradients plus +/- the equality gradient
    A = np.column_stack([G[cand].T, cons.cP0, -cons.cP0]) if len(cand) else \
        np.column_stack([cons.cP0, -cons.cP0])
    coef, _ = nnls(A, grad_objective)
    fit = A @ coef
    stationarity = float(np.abs(grad_objective - fit).max())

    multipliers = np.zeros(len(slack))
    if len(cand):
        multipliers[cand] = coef[:len(cand)]
    balance_multiplier = float(coef[-2] - coef[-1])
    complementarity = float(np.abs(multipliers * slack).max(initial=0.0))
    return KktReport(stationarity=stationarity, primal=max(primal, 0.0),
                     dual=float(min(multipliers.min(initial=0.0), 0.0)),
                     complementarity=complementarity,
                     multipliers=multipliers, balance_multiplier=balance_multiplier)
