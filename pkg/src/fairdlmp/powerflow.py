"""Exact branch-flow solution (oracle) and its linearization.

solve_ac implements the exact nonlinear branch-flow model on the radial
feeder via backward (flow accumulation) / forward (voltage update)
sweeps; it is the oracle everything else is checked against. linearize
builds the voltage-difference linear model and composes affine maps
from aggregator real demands to node voltages, line flows, and the
substation import, eliminating reactive demand through a fixed per-
aggregator power-factor ratio and losses through first-order Jacobians.
The affine offsets are anchored to the exact AC solution at the
expansion point, so the maps are exact there by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RadialNetwork, TopologyOperators

VOLTAGE_COLLAPSE_FLOOR = 0.5
SWEEP_TOL = 1e-13
RESIDUAL_TOL = 1e-10
MAX_SWEEPS = 10_000
FD_STEP = 1e-5


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged branch-flow state. Flows are receiving-end per line."""

    V: np.ndarray        # node voltage magnitudes, pu
    delta: np.ndarray    # node voltage angles, rad
    P: np.ndarray        # real line flows, pu
    Q: np.ndarray        # reactive line flows, pu
    LP: np.ndarray       # real line losses, pu
    LQ: np.ndarray       # reactive line losses, pu
    P0: float            # substation real import, pu
    residual: float      # max sending-end power mismatch
    p_agg: np.ndarray    # aggregator real demands this solution was run at
    q_agg: np.ndarray    # aggregator reactive demands


def _scatter(net: RadialNetwork, p_agg: np.ndarray, q_agg: np.ndarray) -> np.ndarray:
    s = np.zeros(net.node_count, dtype=complex)
    s[net.aggregator_nodes - 1] = np.asarray(p_agg) + 1j * np.asarray(q_agg)
    return s


def solve_ac(net: RadialNetwork, p_agg: np.ndarray, q_agg: np.ndarray,
             max_sweeps: int = MAX_SWEEPS) -> PowerFlowSolution:
    """Exact branch-flow fixed point by backward/forward sweeps.

    Demands are per-aggregator (positive = consumption); all other nodes
    inject nothing. Raises PowerFlowError on sweep-budget exhaustion or
    when any voltage falls below the collapse floor.
    """
    p_agg = np.asarray(p_agg, dtype=float)
    q_agg = np.asarray(q_agg, dtype=float)
    if not (np.isfinite(p_agg).all() and np.isfinite(q_agg).all()):
        raise PowerFlowError("non-finite demand")
    n = net.node_count
    s = _scatter(net, p_agg, q_agg)
    z = net.r + 1j * net.x
    parent = net.parent  # parent[i] = parent node id of node i+1

    U = np.full(n + 1, net.v0 * np.exp(1j * net.delta0), dtype=complex)
    flow = np.zeros(n, dtype=complex)
    loss = np.zeros(n, dtype=complex)
    for sweep in range(max_sweeps):
        # backward: receiving-end flow of line k = local demand +
        # downstream receiving flows + downstream losses
        flow[:] = s
        for i in range(n - 1, -1, -1):
            loss[i] = z[i] * (abs(flow[i]) ** 2) / (abs(U[i + 1]) ** 2)
            u = parent[i]
            if u != 0:
                flow[u - 1] += flow[i] + loss[i]
        # forward: voltage drop from the sending end using receiving-end current
        U_prev = U.copy()
        for i in range(n):
            current = np.conj(flow[i] / U_prev[i + 1])
            U[i + 1] = U[parent[i]] - z[i] * current
        if (np.abs(U[1:]) < VOLTAGE_COLLAPSE_FLOOR).any():
            raise PowerFlowError("voltage below collapse floor (infeasible operating point)")
        if np.max(np.abs(U - U_prev)) < SWEEP_TOL:
            break
    else:
        raise PowerFlowError("backward/forward sweeps did not converge")

    V = np.abs(U[1:])
    delta = np.angle(U[1:])
    LP, LQ = loss.real, loss.imag
    P, Q = flow.real, flow.imag
    residual = _sending_end_residual(net, U, flow, loss)
    if residual > RESIDUAL_TOL:
        raise PowerFlowError(f"sending-end residual {residual:.2e} above tolerance")
    roots = parent == 0
    P0 = float((flow[roots] + loss[roots]).real.sum())
    return PowerFlowSolution(V=V, delta=delta, P=P, Q=Q, LP=LP, LQ=LQ, P0=P0,
                             residual=residual, p_agg=p_agg, q_agg=q_agg)


def _sending_end_residual(net: RadialNetwork, U: np.ndarray,
                          flow: np.ndarray, loss: np.ndarray) -> float:
    """Max mismatch of the exact sending-end power expressions."""
    n = net.node_count
    br = net.r / (net.r**2 + net.x**2)
    bx = net.x / (net.r**2 + net.x**2)
    Vu = np.abs(U[net.parent])
    Vk = np.abs(U[1:])
    th = np.angle(U[net.parent]) - np.angle(U[1:])
    send_p = br * Vu * (Vu - Vk * np.cos(th)) + bx * Vu * Vk * np.sin(th)
    send_q = bx * Vu * (Vu - Vk * np.cos(th)) - br * Vu * Vk * np.sin(th)
    rp = np.abs(send_p - (flow.real + loss.real))
    rq = np.abs(send_q - (flow.imag + loss.imag))
    return float(max(rp.max(), rq.max()))


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensitivityModel:
    """Affine maps from aggregator real demands to grid quantities.

    All maps are exact at the reference solution: the offsets are the AC
    values there minus the slope contribution. Reactive demand is
    eliminated through q = tan_phi * p before composition.
    """

    Br: np.ndarray           # susceptance diagonal r/(r^2+x^2)
    Bx: np.ndarray           # susceptance diagonal x/(r^2+x^2)
    M: np.ndarray            # 2N x 2N voltage-difference block matrix
    C: np.ndarray            # M^{-1}
    JPp: np.ndarray          # dL^P/dp (N x A), q held fixed
    JQq: np.ndarray          # dL^Q/dq (N x A), p held fixed
    JPq: np.ndarray          # dL^P/dq cross block
    JQp: np.ndarray          # dL^Q/dp cross block
    tan_phi: np.ndarray      # reactive coupling ratio per aggregator
    CV: np.ndarray           # voltage slope (N x A)
    v_offset: np.ndarray     # voltage offset, V(p) = CV p + v_offset
    CP: np.ndarray           # real flow slope (N x A)
    p_offset: np.ndarray
    CQ: np.ndarray           # reactive flow slope (N x A)
    q_offset: np.ndarray
    GLP: np.ndarray          # total real-loss slope dL^P/dp with coupling
    lp_offset: np.ndarray
    cP0: np.ndarray          # substation import row (A,)
    cP00: float              # import offset
    reference: PowerFlowSolution

    def predict_voltage(self, p_agg: np.ndarray) -> np.ndarray:
        return self.CV @ p_agg + self.v_offset

    def predict_flows(self, p_agg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.CP @ p_agg + self.p_offset, self.CQ @ p_agg + self.q_offset

    def predict_losses(self, p_agg: np.ndarray) -> np.ndarray:
        return self.GLP @ p_agg + self.lp_offset

    def predict_import(self, p_agg: np.ndarray) -> float:
        return float(self.cP0 @ p_agg + self.cP00)


def loss_jacobians(net: RadialNetwork, reference: PowerFlowSolution,
                   step: float = FD_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Loss Jacobians [dL^P_l/dp_k] and [dL^Q_l/dq_k] at the reference.

    Central finite differences on the AC oracle, one aggregator column
    at a time. Columns are independent of evaluation order.
    """
    JPp, _, _, JQq = _loss_jacobian_blocks(net, reference, step)
    return JPp, JQq


def _loss_jacobian_blocks(net: RadialNetwork, reference: PowerFlowSolution,
                          step: float = FD_STEP):
    p0, q0 = reference.p_agg, reference.q_agg
    n_agg = len(p0)
    n = net.node_count
    JPp = np.zeros((n, n_agg)); JQp = np.zeros((n, n_agg))
    JPq = np.zeros((n, n_agg)); JQq = np.zeros((n, n_agg))
    for k in range(n_agg):
        dp = np.zeros(n_agg); dp[k] = step
        hi = solve_ac(net, p0 + dp, q0)
        lo = solve_ac(net, p0 - dp, q0)
        JPp[:, k] = (hi.LP - lo.LP) / (2 * step)
        JQp[:, k] = (hi.LQ - lo.LQ) / (2 * step)
        hi = solve_ac(net, p0, q0 + dp)
        lo = solve_ac(net, p0, q0 - dp)
        JPq[:, k] = (hi.LP - lo.LP) / (2 * step)
        JQq[:, k] = (hi.LQ - lo.LQ) / (2 * step)
    return JPp, JQp, JPq, JQq


def linearize(net: RadialNetwork, tops: TopologyOperators,
              reference: PowerFlowSolution, tan_phi: np.ndarray) -> SensitivityModel:
    """Build the linear grid model around a converged AC reference."""
    n = net.node_count
    agg = net.aggregator_nodes - 1
    n_agg = len(agg)
    tan_phi = np.asarray(tan_phi, dtype=float)
    if tan_phi.shape != (n_agg,):
        raise ValueError("tan_phi must have one entry per aggregator")

    br = net.r / (net.r**2 + net.x**2)
    bx = net.x / (net.r**2 + net.x**2)
    Br = np.diag(br)
    Bx = np.diag(bx)
    F = tops.parent_difference  # rows: +1 at parent (if not substation), -1 at self
    M = np.block([[Br @ F, Bx @ F],
                  [Bx @ F, -Br @ F]])
    try:
        C = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise PowerFlowError("singular voltage-difference matrix (degenerate impedances)") from exc

    JPp, JQp, JPq, JQq = _loss_jacobian_blocks(net, reference)

    S = np.zeros((n, n_agg))
    S[agg, np.arange(n_agg)] = 1.0
    Sq = S * tan_phi  # q = tan_phi o p, columnwise

    # total loss slopes along the coupled direction (p_k, q_k = tan_phi_k p_k)
    GLP = JPp + JPq * tan_phi
    GLQ = JQp + JQq * tan_phi

    IT = np.eye(n) + tops.T
    # receiving-end flows: P = (I+T) p_full + T L^P
    CP = IT @ S + tops.T @ GLP
    CQ = IT @ Sq + tops.T @ GLQ

    # voltages: M [V; d] = [(I+T)(p_full + L^P); (I+T)(q_full + L^Q)] - N_vec
    top = IT @ (S + GLP)
    bot = IT @ (Sq + GLQ)
    Vd_slope = C @ np.vstack([top, bot])
    CV = Vd_slope[:n, :]

    # substation import: total demand + total real losses
    cP0 = S.sum(axis=0) + GLP.sum(axis=0)

    # anchor all offsets to the exact AC reference
    p0 = reference.p_agg
    v_offset = reference.V - CV @ p0
    p_offset = reference.P - CP @ p0
    q_offset = reference.Q - CQ @ p0
    lp_offset = reference.LP - GLP @ p0
    cP00 = reference.P0 - float(cP0 @ p0)

    return SensitivityModel(
        Br=Br, Bx=Bx, M=M, C=C, JPp=JPp, JQq=JQq, JPq=JPq, JQp=JQp,
        tan_phi=tan_phi, CV=CV, v_offset=v_offset, CP=CP, p_offset=p_offset,
        CQ=CQ, q_offset=q_offset, GLP=GLP, lp_offset=lp_offset,
        cP0=cP0, cP00=cP00, reference=reference,
    )


# ---------------------------------------------------------------------------
# constraint assembly
# ---------------------------------------------------------------------------

class InfeasibleReferenceError(ValueError):
    """Limits are tighter than the reference operating point."""


@dataclass(frozen=True)
class ConstraintSet:
    """Linear constraint blocks over aggregator real demands p.

    Rows encode, in order: voltage lower (-CV p + cl <= 0, N rows),
    voltage upper (CV p + cu <= 0, N rows), flow box (CS p + cS0 <= 0,
    4N rows: +P, -P, +Q, -Q), the power balance equality
    (cP0 . p + cP00 - P0 = 0), and the weak budget row
    (-c . p + c0 * P0 <= 0) whose price vector is supplied at evaluation
    time.

    Voltage and flow rows are stored normalized to unit row norm so one
    dual step size conditions every block equally; scale_v / scale_s
    hold the original row norms, and the slack helpers report physical
    (per-unit) violations.
    """

    CV: np.ndarray
    cl: np.ndarray
    cu: np.ndarray
    CS: np.ndarray
    cS0: np.ndarray
    cP0: np.ndarray
    cP00: float
    P0: float
    c0: float
    scale_v: np.ndarray = None
    scale_s: np.ndarray = None

    def __post_init__(self):
        if self.scale_v is None:
            object.__setattr__(self, "scale_v", np.ones(self.CV.shape[0]))
        if self.scale_s is None:
            object.__setattr__(self, "scale_s", np.ones(self.CS.shape[0]))

    @property
    def n_aggregators(self) -> int:
        return self.CV.shape[1]

    def voltage_lower(self, p: np.ndarray) -> np.ndarray:
        return -self.CV @ p + self.cl

    def voltage_upper(self, p: np.ndarray) -> np.ndarray:
        return self.CV @ p + self.cu

    def flow(self, p: np.ndarray) -> np.ndarray:
        return self.CS @ p + self.cS0

    def balance(self, p: np.ndarray) -> float:
        return float(self.cP0 @ p + self.cP00 - self.P0)

    def budget(self, p: np.ndarray, c: np.ndarray) -> float:
        return float(-c @ p + self.c0 * self.P0)

    def physical_slacks(self, p: np.ndarray, c: np.ndarray) -> dict[str, float]:
        """Per-block worst slack in physical (per-unit) units (<= 0 feasible)."""
        nv = self.CV.shape[0]
        return {
            "voltage_lower": float((self.voltage_lower(p) * self.scale_v).max()),
            "voltage_upper": float((self.voltage_upper(p) * self.scale_v).max()),
            "flow": float((self.flow(p) * self.scale_s).max()),
            "balance": float(abs(self.balance(p))),
            "budget": float(self.budget(p, c)),
        }

    def max_slack(self, p: np.ndarray, c: np.ndarray) -> float:
        """Largest physical constraint violation (<= 0 means feasible)."""
        return max(self.physical_slacks(p, c).values())


def assemble_constraints(sens: SensitivityModel, net: RadialNetwork,
                         P0: float, c0: float) -> ConstraintSet:
    """Rearranged linear constraint blocks from the sensitivity model."""
    if P0 < 0:
        raise ValueError("procurement P0 must be >= 0")
    if c0 <= 0:
        raise ValueError("wholesale unit cost c0 must be > 0")
    v0, eps = net.v0, net.epsilon
    cl = (v0 - eps) - sens.v_offset
    cu = sens.v_offset - (v0 + eps)
    CS = np.vstack([sens.CP, -sens.CP, sens.CQ, -sens.CQ])
    cS0 = np.concatenate([sens.p_offset - net.p_limit,
                          -sens.p_offset - net.p_limit,
                          sens.q_offset - net.q_limit,
                          -sens.q_offset - net.q_limit])
    # unit row norms so a single dual step size conditions every block
    scale_v = np.maximum(np.linalg.norm(sens.CV, axis=1), 1e-12)
    scale_s = np.maximum(np.linalg.norm(CS, axis=1), 1e-12)
    cons = ConstraintSet(CV=sens.CV / scale_v[:, None], cl=cl / scale_v,
                         cu=cu / scale_v, CS=CS / scale_s[:, None],
                         cS0=cS0 / scale_s, cP0=sens.cP0, cP00=sens.cP00,
                         P0=P0, c0=c0, scale_v=scale_v, scale_s=scale_s)
    p_ref = sens.reference.p_agg
    worst = max(cons.voltage_lower(p_ref).max(), cons.voltage_upper(p_ref).max(),
                cons.flow(p_ref).max())
    if worst > 0:
        raise InfeasibleReferenceError(
            f"reference operating point violates limits by {worst:.3e}")
    return cons


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearizationErrorReport:
    """Componentwise absolute errors of the affine maps against the AC oracle."""

    voltage_error: np.ndarray
    flow_error: np.ndarray
    loss_error: np.ndarray
    max_voltage_error: float
    max_flow_error: float
    max_loss_error: float
    predicted_voltage: np.ndarray
    actual_voltage: np.ndarray
    predicted_flow: np.ndarray
    actual_flow: np.ndarray
    predicted_loss: np.ndarray
    actual_loss: np.ndarray


def linearization_error(net: RadialNetwork, sens: SensitivityModel,
                        p_agg: np.ndarray, q_agg: np.ndarray) -> LinearizationErrorReport:
    """Compare affine predictions at p_agg against a fresh AC solve at (p_agg, q_agg)."""
    exact = solve_ac(net, p_agg, q_agg)
    v_pred = sens.predict_voltage(p_agg)
    p_pred, _ = sens.predict_flows(p_agg)
    l_pred = sens.predict_losses(p_agg)
    dv = np.abs(v_pred - exact.V)
    dp = np.abs(p_pred - exact.P)
    dl = np.abs(l_pred - exact.LP)
    return LinearizationErrorReport(
        voltage_error=dv, flow_error=dp, loss_error=dl,
        max_voltage_error=float(dv.max()), max_flow_error=float(dp.max()),
        max_loss_error=float(dl.max()),
        predicted_voltage=v_pred, actual_voltage=exact.V,
        predicted_flow=p_pred, actual_flow=exact.P,
        predicted_loss=l_pred, actual_loss=exact.LP,
    )
