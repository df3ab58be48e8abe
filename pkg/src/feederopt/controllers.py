"""Day-long loss minimization under global, local and no VAR control.

Flows and voltages are affine in the decisions under the linearized branch
equations, so they are substituted out and the program is a QP over

* ``beta[t, i]``  battery rate at storage node ``i`` in slot ``t``
* ``q[t, i]``     inverter VAR at PV node ``i`` (global control only)

Decisions are expressed in units of ``power_scale`` and the objective is
divided by ``objective_scale`` so the QP handed to the solver is O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .distflow import (
    BetaIndex,
    ControlSchedule,
    LossModel,
    NetworkState,
    injection_matrix,
    linear_flow,
    total_loss,
)
from .feeder import FeederTopology
from .profiles import NodeProfiles
from .qp import QPSolution, QPStatus, QuadraticProgram, solve_qp

FEASIBILITY_TOL = 1e-6


class ControllerKind(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    NO_CONTROL = "no_control"
    PASSIVE = "passive"  # beta = 0 and q = 0, diagnostics only


@dataclass(frozen=True)
class ControlOptions:
    epsilon: float = 0.05
    beta_index: BetaIndex = BetaIndex.COLOCATED
    terminal_soc: str = "free"  # "free" | "zero"
    voltage_penalty: float | None = None  # soft voltage bounds with this quadratic weight
    regularization: float = 1e-9
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 50_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta_index", BetaIndex(self.beta_index))
        if self.terminal_soc not in ("free", "zero"):
            raise ValueError(f"terminal_soc must be 'free' or 'zero', got {self.terminal_soc!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def local_control_law(q_c, q_g_max):
    """Cancel local VAR demand up to the inverter's headroom, keeping its sign."""
    q_c = np.asarray(q_c, dtype=float)
    q_g_max = np.asarray(q_g_max, dtype=float)
    if np.any(q_g_max < 0):
        raise ValueError("q_g_max must be non-negative")
    out = np.where(np.abs(q_c) <= q_g_max, q_c, np.sign(q_c) * q_g_max)
    return out if out.ndim else float(out)


@dataclass
class VariableMap:
    """Layout of the decision vector and constraint rows of a feeder QP."""

    n: int
    T: int
    battery_nodes: tuple[int, ...]
    var_nodes: tuple[int, ...]
    power_scale: float
    objective_scale: float
    objective_constant: float
    n_voltage_rows: int = 0
    voltage_row_nodes: np.ndarray = field(default=None, repr=False)
    n_slack: int = 0

    @property
    def n_beta(self) -> int:
        return len(self.battery_nodes) * self.T

    @property
    def n_q(self) -> int:
        return len(self.var_nodes) * self.T

    @property
    def size(self) -> int:
        return self.n_beta + self.n_q + self.n_slack

    def beta_col(self, i: int, t: int) -> int:
        return t * len(self.battery_nodes) + i

    def q_col(self, i: int, t: int) -> int:
        return self.n_beta + t * len(self.var_nodes) + i

    def row_label(self, row: int) -> str:
        mb, mq = len(self.battery_nodes), len(self.var_nodes)
        nb, nq = mb * self.T, mq * self.T
        if row < nb:
            t, i = divmod(row, mb)
            return f"battery bound: node {self.battery_nodes[i]}, b(slot {t + 2})"
        row -= nb
        if row < nq:
            t, i = divmod(row, mq)
            return f"VAR capability: node {self.var_nodes[i]}, slot {t + 1}"
        row -= nq
        per_slot = self.voltage_row_nodes.size
        t, k = divmod(row, per_slot)
        return f"voltage bound: node {self.voltage_row_nodes[k]}, slot {t + 1}"

    def unpack(self, x: np.ndarray, q_fixed: np.ndarray) -> ControlSchedule:
        beta = np.zeros((self.n + 1, self.T))
        q_g = np.array(q_fixed, dtype=float, copy=True)
        mb, mq = len(self.battery_nodes), len(self.var_nodes)
        if mb:
            beta[list(self.battery_nodes)] = self.power_scale * x[: self.n_beta].reshape(self.T, mb).T
        if mq:
            q_g[list(self.var_nodes)] = self.power_scale * x[self.n_beta : self.n_beta + self.n_q].reshape(self.T, mq).T
        return ControlSchedule(beta, q_g)

    def qp_to_loss(self, qp_objective: float) -> float:
        return self.objective_scale * qp_objective + self.objective_constant


@dataclass
class FeederProgram:
    qp: QuadraticProgram
    vmap: VariableMap
    q_fixed: np.ndarray
    fixed_violations: list[str]  # bounds broken by rows that no decision can move


def _power_scale(profiles: NodeProfiles, B_max: float) -> float:
    mags = [np.abs(profiles.p_c).max(), np.abs(profiles.q_c).max(), np.abs(profiles.p_g).max(), profiles.q_g_max.max()]
    s = max(mags)
    if s == 0:
        s = B_max / profiles.grid.dt if B_max > 0 else 1.0
    return float(s)


def build_program(
    topology: FeederTopology,
    profiles: NodeProfiles,
    B_max: float,
    options: ControlOptions = ControlOptions(),
    *,
    q_fixed: np.ndarray | None = None,
    battery_nodes=None,
) -> FeederProgram:
    """Assemble the loss-minimization QP.

    With ``q_fixed=None`` inverter VARs at every PV node are decisions
    (global control); otherwise they are held at ``q_fixed`` and only the
    battery rates are optimized.
    """
    n, T = topology.n, profiles.T
    if profiles.n != n:
        raise ValueError(f"profiles cover {profiles.n} nodes, feeder has {n}")
    if B_max < 0:
        raise ValueError("B_max must be non-negative")
    dt = profiles.grid.dt
    eps = options.epsilon
    battery_nodes = tuple(profiles.pv_nodes if battery_nodes is None else battery_nodes)
    var_nodes = tuple(profiles.pv_nodes) if q_fixed is None else ()
    q_fixed = np.zeros((n + 1, T)) if q_fixed is None else np.asarray(q_fixed, dtype=float)
    mb, mq = len(battery_nodes), len(var_nodes)
    s = _power_scale(profiles, B_max)

    r, xs = topology.r, topology.x
    D = injection_matrix(n)[:n]
    Db = injection_matrix(n, options.beta_index, battery=True)[:n]
    P0 = D @ (profiles.p_c - profiles.p_g)  # (n, T)
    Q0 = D @ (profiles.q_c - q_fixed)
    Mb = s * Db[:, list(battery_nodes)]  # dP / dbeta~
    Mq = -s * D[:, list(var_nodes)]  # dQ / dq~

    Hb = 2.0 * Mb.T @ (r[:, None] * Mb)
    Hq = 2.0 * Mq.T @ (r[:, None] * Mq)
    fb = 2.0 * Mb.T @ (r[:, None] * P0)  # (mb, T)
    fq = 2.0 * Mq.T @ (r[:, None] * Q0)
    diag = np.concatenate([np.diag(Hb), np.diag(Hq)])
    c = float(diag.max()) if diag.size and diag.max() > 0 else 1.0
    const = float(np.sum(r[:, None] * (P0**2 + Q0**2)))

    cum = np.tril(np.ones((n, n)))  # row j-1 sums segments 0..j-1 -> node j
    V0 = 1.0 - cum @ (r[:, None] * P0 + xs[:, None] * Q0)  # (n, T)
    Gb = -cum @ (r[:, None] * Mb)
    Gq = -cum @ (xs[:, None] * Mq)
    G = np.hstack([Gb, Gq])
    row_norm = np.abs(G).max(axis=1) if G.shape[1] else np.zeros(n)
    live = row_norm > 1e-14 * max(1.0, row_norm.max(initial=0.0))
    fixed_violations = []
    for j in np.flatnonzero(~live):
        bad = np.flatnonzero((V0[j] < 1 - eps - FEASIBILITY_TOL) | (V0[j] > 1 + eps + FEASIBILITY_TOL))
        fixed_violations += [f"voltage bound: node {j + 1}, slot {t + 1}" for t in bad]
    live_nodes = np.flatnonzero(live)
    Gl = G[live] / row_norm[live][:, None]
    nv = live_nodes.size

    vmap = VariableMap(n, T, battery_nodes, var_nodes, s, c, const, nv * T, live_nodes + 1)
    eye_T = sp.identity(T, format="csr")

    H_blocks = [sp.kron(eye_T, sp.csr_matrix(Hb / c)), sp.kron(eye_T, sp.csr_matrix(Hq / c))]
    f_parts = [(fb / c).T.ravel(), (fq / c).T.ravel()]

    # battery: 0 <= dt*s*sum_{k<=t} beta~(k) <= B_max
    A_bat = sp.kron(sp.csr_matrix(np.tril(np.ones((T, T)))), sp.identity(mb), format="csr")
    l_bat = np.zeros(mb * T)
    u_bat = np.full(mb * T, B_max / (dt * s))
    if options.terminal_soc == "zero" and mb:
        u_bat[(T - 1) * mb :] = 0.0
    # VAR capability box
    A_q = sp.identity(mq * T, format="csr")
    cap = (profiles.q_g_max[list(var_nodes)] / s).T.ravel() if mq else np.zeros(0)
    # voltage rows, per slot
    # decision vector holds every beta first, then every q, each slot-major
    A_v = sp.hstack(
        [sp.kron(eye_T, sp.csr_matrix(Gl[:, :mb])), sp.kron(eye_T, sp.csr_matrix(Gl[:, mb:]))], format="csr"
    )
    scale_rows = row_norm[live][:, None]
    l_v = ((1 - eps - V0[live]) / scale_rows).T.ravel()
    u_v = ((1 + eps - V0[live]) / scale_rows).T.ravel()

    nbq = mb * T + mq * T
    n_slack = 0
    if options.voltage_penalty is not None and nv:
        n_slack = nv * T
        # slack measured in normalized row units; penalty weight in p.u. voltage^2
        w = options.voltage_penalty * np.tile(row_norm[live] ** 2, T) * 2.0 / c
        H_blocks.append(sp.diags(w))
        f_parts.append(np.zeros(n_slack))
        vmap.n_slack = n_slack

    H = sp.block_diag(H_blocks, format="csc") if nbq + n_slack else sp.csc_matrix((0, 0))
    H = H + options.regularization * sp.identity(H.shape[0], format="csc")
    f = np.concatenate(f_parts)

    def pad(block, left, right):
        return sp.hstack([sp.csr_matrix((block.shape[0], left)), block, sp.csr_matrix((block.shape[0], right))])

    A_rows = [
        pad(A_bat, 0, mq * T + n_slack),
        pad(A_q, mb * T, n_slack),
        sp.hstack([A_v, -sp.identity(n_slack)]) if n_slack else pad(A_v, 0, 0),
    ]
    A = sp.vstack(A_rows, format="csc")
    l = np.concatenate([l_bat, -cap, l_v])
    u = np.concatenate([u_bat, cap, u_v])
    qp = QuadraticProgram(H, f, A, l, u)
    return FeederProgram(qp, vmap, q_fixed, fixed_violations)


def build_global_program(topology, profiles, B_max, epsilon=0.05, options: ControlOptions | None = None) -> FeederProgram:
    options = options or ControlOptions(epsilon=epsilon)
    return build_program(topology, profiles, B_max, options)


@dataclass
class OptimizationResult:
    kind: ControllerKind
    schedule: ControlSchedule
    state: NetworkState
    loss: float
    feasible: bool
    status: str
    solver_report: QPSolution | None = None
    binding: str | None = None
    violations: list[str] = field(default_factory=list)

    def report_line(self) -> str:
        """``controller,status,iterations,primal_res,dual_res``"""
        s = self.solver_report
        if s is None:
            return f"{self.kind.value},{self.status},0,0,0"
        return f"{self.kind.value},{self.status},{s.iterations},{s.primal_residual:.3e},{s.dual_residual:.3e}"


def check_schedule(
    topology: FeederTopology,
    profiles: NodeProfiles,
    schedule: ControlSchedule,
    state: NetworkState,
    B_max: float,
    options: ControlOptions,
    tol: float = FEASIBILITY_TOL,
) -> list[str]:
    """Describe every battery, VAR or voltage bound broken by more than ``tol``."""
    out = []
    b = state.b[:, 1:]
    for j, t in zip(*np.nonzero((b < -tol) | (b > B_max + tol))):
        out.append(f"battery bound: node {j}, b(slot {t + 2}) = {b[j, t]:.6g}")
    if options.terminal_soc == "zero":
        for j in np.flatnonzero(np.abs(state.b[:, -1]) > tol):
            out.append(f"terminal charge: node {j}, b = {state.b[j, -1]:.6g}")
    over = np.abs(schedule.q_g) - profiles.q_g_max
    for j, t in zip(*np.nonzero(over > tol)):
        out.append(f"VAR capability: node {j}, slot {t + 1}")
    if options.voltage_penalty is None:
        eps = options.epsilon
        V = state.V[1:]
        for j, t in zip(*np.nonzero((V < 1 - eps - tol) | (V > 1 + eps + tol))):
            out.append(f"voltage bound: node {j + 1}, slot {t + 1}, V = {V[j, t]:.6f}")
    return out


def solve_controller(
    kind: ControllerKind | str,
    topology: FeederTopology,
    profiles: NodeProfiles,
    B_max: float,
    epsilon: float | None = None,
    options: ControlOptions | None = None,
) -> OptimizationResult:
    """Optimize battery rates (and VARs for global control) for one regime.

    * global: VARs free within inverter capability.
    * local: VARs pinned by :func:`local_control_law` at each node.
    * no_control: VARs zero; batteries still optimized.
    * passive: nothing optimized, both controls zero.
    """
    kind = ControllerKind(kind)
    options = options or ControlOptions()
    if epsilon is not None:
        options = ControlOptions(**{**options.__dict__, "epsilon": epsilon})
    n, T = topology.n, profiles.T

    if kind is ControllerKind.PASSIVE:
        schedule = ControlSchedule.zeros(n, T)
        state = linear_flow(topology, profiles, schedule, options.beta_index)
        viol = check_schedule(topology, profiles, schedule, state, B_max, options)
        return OptimizationResult(
            kind, schedule, state, total_loss(state, topology), not viol,
            "solved" if not viol else "infeasible", None, viol[0] if viol else None, viol,
        )

    if kind is ControllerKind.GLOBAL:
        q_fixed = None
    elif kind is ControllerKind.LOCAL:
        q_fixed = local_control_law(profiles.q_c, profiles.q_g_max)
    else:
        q_fixed = np.zeros((n + 1, T))
    prog = build_program(topology, profiles, B_max, options, q_fixed=q_fixed)

    if prog.fixed_violations and options.voltage_penalty is None:
        schedule = ControlSchedule(np.zeros((n + 1, T)), prog.q_fixed.copy())
        state = linear_flow(topology, profiles, schedule, options.beta_index)
        return OptimizationResult(
            kind, schedule, state, float("nan"), False, QPStatus.INFEASIBLE.value,
            None, prog.fixed_violations[0], prog.fixed_violations,
        )

    sol = solve_qp(prog.qp, options.eps_abs, options.eps_rel, options.max_iter)
    schedule = prog.vmap.unpack(sol.x, prog.q_fixed)
    state = linear_flow(topology, profiles, schedule, options.beta_index)
    if sol.status is QPStatus.INFEASIBLE:
        row = int(np.argmax(np.abs(sol.certificate)))
        return OptimizationResult(
            kind, schedule, state, float("nan"), False, sol.status.value, sol, prog.vmap.row_label(row),
        )
    viol = check_schedule(topology, profiles, schedule, state, B_max, options)
    feasible = sol.status is QPStatus.SOLVED and not viol
    loss = total_loss(state, topology, LossModel.LINEAR)
    return OptimizationResult(
        kind, schedule, state, loss, feasible, sol.status.value, sol, viol[0] if viol else None, viol,
    )
