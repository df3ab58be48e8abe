"""Branch-flow (DistFlow) evaluation on a single-branch radial feeder.

Conventions used throughout:

* ``P[j, t]``, ``Q[j, t]`` are the flows on the segment leaving node ``j``
  towards node ``j + 1``; ``P[n] = Q[n] = 0``.
* ``V[j, t]`` is the voltage magnitude at node ``j`` with ``V[0] = 1``.
* Positive ``beta`` charges the battery and so draws power from the feeder.
* ``b[j, t]`` is stored energy at the start of slot ``t + 1`` (1-based), so
  ``b[:, 0] = 0`` and ``b[:, T]`` is the end-of-day state of charge.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .feeder import FeederTopology
from .profiles import NodeProfiles


class BetaIndex(str, Enum):
    """Which node's battery enters the update across segment j.

    ``colocated``: the battery at node j+1, next to that node's load.
    ``paper_literal``: the battery at node j, one segment upstream of its load.
    """

    COLOCATED = "colocated"
    UPSTREAM = "paper_literal"


class LossModel(str, Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class SweepDivergence(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class ControlSchedule:
    """Battery rates and inverter VARs, arrays of shape ``(n + 1, T)``."""

    beta: np.ndarray
    q_g: np.ndarray

    @classmethod
    def zeros(cls, n: int, T: int) -> "ControlSchedule":
        return cls(np.zeros((n + 1, T)), np.zeros((n + 1, T)))

    def validate(self, profiles: NodeProfiles, tol: float = 1e-9) -> None:
        shape = (profiles.n + 1, profiles.T)
        if self.beta.shape != shape or self.q_g.shape != shape:
            raise ValueError(f"schedule shape {self.beta.shape}/{self.q_g.shape} != {shape}")
        over = np.abs(self.q_g) - profiles.q_g_max
        if np.any(over > tol):
            j, t = np.unravel_index(np.argmax(over), over.shape)
            raise ValueError(f"|q_g| exceeds capability at node {j}, slot {t + 1} by {over[j, t]:.3g}")
        mask = np.ones(profiles.n + 1, dtype=bool)
        mask[list(profiles.pv_nodes)] = False
        if np.any(self.beta[mask] != 0):
            raise ValueError("battery rate set at a node without storage")


@dataclass
class NetworkState:
    P: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    b: np.ndarray
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.P.shape[0] - 1

    @property
    def T(self) -> int:
        return self.P.shape[1]


@dataclass
class BatteryTrajectory:
    b: np.ndarray
    violations: list[int] = field(default_factory=list)  # 1-based slots where b leaves [0, B_max]

    @property
    def ok(self) -> bool:
        return not self.violations


def injection_matrix(n: int, convention: BetaIndex | str = BetaIndex.COLOCATED, battery: bool = False) -> np.ndarray:
    """0/1 matrix ``D`` with ``D[j, k] = 1`` when node k's injection crosses segment j.

    Loads always sit downstream of the segments that feed them (``k > j``).
    Battery terms follow ``convention``.
    """
    j = np.arange(n + 1)[:, None]
    k = np.arange(n + 1)[None, :]
    if battery and BetaIndex(convention) is BetaIndex.UPSTREAM:
        D = (k >= j) & (k <= n - 1)
    else:
        D = k > j
    D = D.astype(float)
    D[n] = 0.0
    return D


def battery_trajectory(beta, B_max: float, dt: float, tol: float = 1e-9) -> BatteryTrajectory:
    """Integrate b(t+1) = b(t) + beta(t)*dt from b(1) = 0 and flag bound violations."""
    beta = np.asarray(beta, dtype=float)
    b = np.concatenate([[0.0], np.cumsum(beta) * dt])
    bad = np.flatnonzero((b < -tol) | (b > B_max + tol))
    return BatteryTrajectory(b, [int(i) + 1 for i in bad])


def _stored_energy(beta: np.ndarray, dt: float) -> np.ndarray:
    return np.concatenate([np.zeros((beta.shape[0], 1)), np.cumsum(beta, axis=1) * dt], axis=1)


def linear_flow(
    topology: FeederTopology,
    profiles: NodeProfiles,
    controls: ControlSchedule,
    beta_index: BetaIndex | str = BetaIndex.COLOCATED,
) -> NetworkState:
    """Lossless flows and first-order voltage drops (V_0 = 1)."""
    n = topology.n
    if profiles.n != n:
        raise ValueError(f"profiles cover {profiles.n} nodes, feeder has {n}")
    net_p = profiles.p_c - profiles.p_g
    net_q = profiles.q_c - controls.q_g
    P = injection_matrix(n) @ net_p + injection_matrix(n, beta_index, battery=True) @ controls.beta
    Q = injection_matrix(n) @ net_q
    drop = topology.r[:, None] * P[:n] + topology.x[:, None] * Q[:n]
    V = np.ones((n + 1, profiles.T))
    V[1:] = 1.0 - np.cumsum(drop, axis=0)
    return NetworkState(P, Q, V, _stored_energy(controls.beta, profiles.grid.dt))


def _segment_injections(profiles: NodeProfiles, controls: ControlSchedule, beta_index) -> tuple[np.ndarray, np.ndarray]:
    """Real/reactive power drawn across segment j by its receiving end, shape (n, T)."""
    p = (profiles.p_c - profiles.p_g)[1:]
    q = (profiles.q_c - controls.q_g)[1:]
    if BetaIndex(beta_index) is BetaIndex.UPSTREAM:
        p = p + controls.beta[:-1]
    else:
        p = p + controls.beta[1:]
    return p, q


def nonlinear_sweep(
    topology: FeederTopology,
    profiles: NodeProfiles,
    controls: ControlSchedule,
    tol: float = 1e-10,
    max_iter: int = 100,
    beta_index: BetaIndex | str = BetaIndex.COLOCATED,
) -> NetworkState:
    """Solve the full branch-flow equations by backward/forward sweep from a flat start.

    Every slot is swept at once (slots are independent). Stops when the
    voltage, P and Q iterates all move by less than ``tol`` in max norm.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, T = topology.n, profiles.T
    r = topology.r[:, None]
    x = topology.x[:, None]
    p_inj, q_inj = _segment_injections(profiles, controls, beta_index)

    P = np.zeros((n + 1, T))
    Q = np.zeros((n + 1, T))
    V = np.ones((n + 1, T))
    resid = np.inf
    # overflow on a diverging iterate is caught by the collapse check below
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            P_old, Q_old, V_old = P.copy(), Q.copy(), V.copy()
            loss = (P[:n] ** 2 + Q[:n] ** 2) / V[:n] ** 2
            for j in range(n - 1, -1, -1):
                P[j] = P[j + 1] + p_inj[j] + r[j] * loss[j]
                Q[j] = Q[j + 1] + q_inj[j] + x[j] * loss[j]
            V2 = np.ones(T)
            for j in range(n):
                flow2 = (P[j] ** 2 + Q[j] ** 2) / V2
                V2 = V2 - 2.0 * (r[j] * P[j] + x[j] * Q[j]) + (r[j] ** 2 + x[j] ** 2) * flow2
                if np.any(V2 <= 0) or not np.all(np.isfinite(V2)):
                    raise SweepDivergence(
                        f"voltage collapse at node {j + 1} on iteration {it}", float("inf"), it
                    )
                V[j + 1] = np.sqrt(V2)
            resid = max(
                np.max(np.abs(V - V_old)),
                np.max(np.abs(P - P_old)),
                np.max(np.abs(Q - Q_old)),
            )
            if resid < tol:
                return NetworkState(P, Q, V, _stored_energy(controls.beta, profiles.grid.dt), iterations=it)
    raise SweepDivergence(f"sweep did not converge in {max_iter} iterations (residual {resid:.3e})", resid, max_iter)


def distflow_residual(
    topology: FeederTopology,
    profiles: NodeProfiles,
    controls: ControlSchedule,
    state: NetworkState,
    beta_index: BetaIndex | str = BetaIndex.COLOCATED,
) -> float:
    """Max absolute violation of the nonlinear branch equations by ``state``."""
    n = topology.n
    r = topology.r[:, None]
    x = topology.x[:, None]
    p_inj, q_inj = _segment_injections(profiles, controls, beta_index)
    P, Q, V = state.P, state.Q, state.V
    flow2 = (P[:n] ** 2 + Q[:n] ** 2) / V[:n] ** 2
    res_p = P[1:] - (P[:n] - r * flow2 - p_inj)
    res_q = Q[1:] - (Q[:n] - x * flow2 - q_inj)
    res_v = V[1:] ** 2 - (V[:n] ** 2 - 2 * (r * P[:n] + x * Q[:n]) + (r**2 + x**2) * flow2)
    return float(max(np.abs(res_p).max(), np.abs(res_q).max(), np.abs(res_v).max(), abs(P[n]).max(), abs(Q[n]).max()))


def total_loss(state: NetworkState, topology: FeederTopology, model: LossModel | str = LossModel.LINEAR) -> float:
    """Daily resistive loss: sum over slots and segments of r (P^2 + Q^2) / V^2.

    The linear model divides by the substation voltage, the nonlinear one by
    the sending-end voltage of each segment.
    """
    n = topology.n
    flow2 = state.P[:n] ** 2 + state.Q[:n] ** 2
    if LossModel(model) is LossModel.LINEAR:
        denom = state.V[0][None, :] ** 2
    else:
        denom = state.V[:n] ** 2
    return float(np.sum(topology.r[:, None] * flow2 / denom))


def write_state_csv(state: NetworkState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "slot", "P_pu", "Q_pu", "V_pu", "b_pu"])
        for j in range(state.n + 1):
            for t in range(state.T):
                w.writerow([j, t + 1, repr(float(state.P[j, t])), repr(float(state.Q[j, t])), repr(float(state.V[j, t])), repr(float(state.b[j, t]))])


def write_schedule_csv(schedule: ControlSchedule, path) -> None:
    n1, T = schedule.beta.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "slot", "beta_pu", "q_g_pu"])
        for j in range(n1):
            for t in range(T):
                w.writerow([j, t + 1, repr(float(schedule.beta[j, t])), repr(float(schedule.q_g[j, t]))])
