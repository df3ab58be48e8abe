"""Convex QP solver: ADMM operator splitting with an active-set polish.

Solves::

    minimize    1/2 x' H x + f' x
    subject to  l <= A x <= u

The ADMM iteration follows the usual splitting with a single quasi-definite
KKT factorization per penalty value. Once the residuals pass tolerance the
guessed active set is refined into an exact KKT solve ("polish") and kept
only if it is at least as good and dual-sign consistent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_SCALE = 1e3


class QPStatus(str, Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass
class QuadraticProgram:
    H: sp.spmatrix
    f: np.ndarray
    A: sp.spmatrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self) -> None:
        self.f = np.asarray(self.f, dtype=float).ravel()
        nx = self.f.size
        self.H = sp.csc_matrix(self.H, dtype=float) if self.H is not None else sp.csc_matrix((nx, nx))
        if self.A is None:
            self.A = sp.csc_matrix((0, nx))
        self.A = sp.csc_matrix(self.A, dtype=float)
        m = self.A.shape[0]
        self.l = np.full(m, -np.inf) if self.l is None else np.asarray(self.l, dtype=float).ravel()
        self.u = np.full(m, np.inf) if self.u is None else np.asarray(self.u, dtype=float).ravel()
        if self.H.shape != (nx, nx):
            raise ValueError(f"H has shape {self.H.shape}, expected {(nx, nx)}")
        if self.A.shape[1] != nx:
            raise ValueError(f"A has {self.A.shape[1]} columns, expected {nx}")
        if self.l.shape != (m,) or self.u.shape != (m,):
            raise ValueError(f"bounds must have length {m}")
        if np.any(self.l > self.u):
            i = int(np.argmax(self.l > self.u))
            raise ValueError(f"l > u in row {i}: {self.l[i]} > {self.u[i]}")
        asym = abs(self.H - self.H.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(self.H).max()):
            raise ValueError("H must be symmetric")

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.H @ x) + self.f @ x)


@dataclass
class QPSolution:
    x: np.ndarray
    y: np.ndarray
    status: QPStatus
    primal_residual: float
    dual_residual: float
    objective: float
    iterations: int
    polished: bool = False
    rho: float = float("nan")
    certificate: np.ndarray | None = field(default=None, repr=False)

    @property
    def solved(self) -> bool:
        return self.status is QPStatus.SOLVED


def check_kkt(qp: QuadraticProgram, x, y) -> tuple[float, float]:
    """Primal bound violation and stationarity residual, both in max norm."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (qp.n,) or y.shape != (qp.m,):
        raise ValueError(f"expected x of length {qp.n} and y of length {qp.m}")
    Ax = qp.A @ x
    prim = _inf_norm(np.clip(Ax, qp.l, qp.u) - Ax)
    dual = _inf_norm(qp.H @ x + qp.f + qp.A.T @ y)
    return prim, dual


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


class _Kkt:
    """Factorized [[H + sigma I, A'], [A, -diag(1/rho)]]."""

    def __init__(self, H, A, sigma, rho_vec):
        n = H.shape[0]
        K = sp.bmat(
            [[H + sigma * sp.eye(n, format="csc"), A.T], [A, sp.diags(-1.0 / rho_vec)]],
            format="csc",
        )
        self.n = n
        self.lu = spla.splu(K)

    def solve(self, rhs):
        return self.lu.solve(rhs)


def _rho_vector(l, u, rho):
    rho_vec = np.full(l.size, rho)
    free = np.isinf(l) & np.isinf(u)
    eq = (u - l) < 1e-12
    rho_vec[free] = RHO_MIN
    rho_vec[eq] = rho * RHO_EQ_SCALE
    return rho_vec


def _infeasibility_certificate(qp: QuadraticProgram, dy: np.ndarray, eps: float) -> bool:
    norm = _inf_norm(dy)
    if norm == 0:
        return False
    dy = dy / norm
    tiny = 1e-12
    pos = dy > tiny
    neg = dy < -tiny
    if np.any(pos & np.isinf(qp.u)) or np.any(neg & np.isinf(qp.l)):
        return False
    if _inf_norm(qp.A.T @ dy) > eps:
        return False
    support = qp.u[pos] @ dy[pos] + qp.l[neg] @ dy[neg]
    return support < -eps


def _polish(qp: QuadraticProgram, x, z, y, delta=1e-7, refine=10, rounds=25):
    """Exact KKT solve on the active set guessed from (z, y), with repair rounds."""
    l, u = qp.l, qp.u
    H, A, f = qp.H, qp.A, qp.f
    eq = (u - l) < 1e-12
    lower = ((z - l < -y) | eq) & np.isfinite(l)
    upper = ((u - z < y) & ~eq) & np.isfinite(u)
    n = qp.n
    scale = max(1.0, _inf_norm(y))
    for _ in range(rounds):
        act = np.flatnonzero(lower | upper)
        A_act = A[act]
        b = np.where(lower[act], l[act], u[act])
        H_reg = H + delta * sp.eye(n, format="csc")
        if act.size:
            K_reg = sp.bmat([[H_reg, A_act.T], [A_act, -delta * sp.eye(act.size, format="csc")]], format="csc")
            K = sp.bmat([[H, A_act.T], [A_act, None]], format="csc")
        else:
            K_reg, K = sp.csc_matrix(H_reg), sp.csc_matrix(H)
        rhs = np.concatenate([-f, b])
        try:
            lu = spla.splu(K_reg)
        except RuntimeError:
            return None
        sol = lu.solve(rhs)
        for _ in range(refine):
            sol = sol + lu.solve(rhs - K @ sol)
        xp = sol[:n]
        yp = np.zeros(qp.m)
        yp[act] = sol[n:]

        Ax = A @ xp
        tol = 1e-9 * max(1.0, _inf_norm(Ax))
        sign_tol = 1e-9 * scale
        wrong_lower = lower & ~eq & (yp > sign_tol)
        wrong_upper = upper & (yp < -sign_tol)
        below = (Ax < l - tol) & ~lower
        above = (Ax > u + tol) & ~upper
        if not (wrong_lower.any() or wrong_upper.any() or below.any() or above.any()):
            return xp, yp
        lower = (lower & ~wrong_lower) | below
        upper = (upper & ~wrong_upper) | above
    return None


def solve_qp(
    qp: QuadraticProgram,
    eps_abs: float = 1e-6,
    eps_rel: float = 1e-6,
    max_iter: int = 50_000,
    *,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    adaptive_interval: int = 50,
    adaptive_ratio: float = 10.0,
    check_interval: int = 10,
    eps_pinf: float = 1e-5,
    polish: bool = True,
    early_polish: int = 25,
) -> QPSolution:
    """Solve ``qp`` to absolute/relative residual tolerances.

    Returns status ``SOLVED`` only if the final (x, y) pass ``check_kkt`` within
    ``eps_abs + eps_rel * scale``. A primal infeasibility certificate (a dual
    direction ``dy`` with ``A' dy = 0`` and negative support) yields
    ``INFEASIBLE`` with the normalized certificate attached.

    With ``early_polish > 0`` a polish is also attempted at iterations
    ``early_polish * 2**k``; a polished point that satisfies the KKT
    conditions to ``eps_abs`` (including dual signs) ends the solve early.
    """
    n, m = qp.n, qp.m
    if n == 0:
        zeros = np.zeros(m)
        ok = bool(np.all(qp.l <= 0) and np.all(qp.u >= 0))
        status = QPStatus.SOLVED if ok else QPStatus.INFEASIBLE
        prim = _inf_norm(np.maximum(qp.l, 0) + np.minimum(qp.u, 0)) if m else 0.0
        return QPSolution(np.zeros(0), zeros, status, prim, 0.0, 0.0, 0)

    H, A, f, l, u = qp.H, qp.A, qp.f, qp.l, qp.u
    x = np.zeros(n)
    z = np.clip(np.zeros(m), l, u)
    y = np.zeros(m)
    rho_vec = _rho_vector(l, u, rho)
    kkt = _Kkt(H, A, sigma, rho_vec)
    y_prev = y.copy()
    status = QPStatus.MAX_ITER
    certificate = None
    it = 0
    next_polish = early_polish if (polish and early_polish > 0) else max_iter + 1
    polished = False

    def tolerances(x, z, y):
        Ax = A @ x
        Hx = H @ x
        Aty = A.T @ y
        prim = _inf_norm(Ax - z)
        dual = _inf_norm(Hx + f + Aty)
        prim_scale = max(_inf_norm(Ax), _inf_norm(z))
        dual_scale = max(_inf_norm(Hx), _inf_norm(Aty), _inf_norm(f))
        return prim, dual, prim_scale, dual_scale

    for it in range(1, max_iter + 1):
        sol = kkt.solve(np.concatenate([sigma * x - f, z - y / rho_vec]))
        xt = sol[:n]
        zt = z + (sol[n:] - y) / rho_vec
        x = alpha * xt + (1 - alpha) * x
        z_relax = alpha * zt + (1 - alpha) * z
        z = np.clip(z_relax + y / rho_vec, l, u)
        y = y + rho_vec * (z_relax - z)

        if it == next_polish:
            next_polish *= 2
            out = _polish(qp, x, z, y)
            if out is not None:
                xp, yp = out
                if max(check_kkt(qp, xp, yp)) <= eps_abs:
                    x, y, polished = xp, yp, True
                    status = QPStatus.SOLVED
                    break
        if it % check_interval and it % adaptive_interval:
            continue
        prim, dual, ps, ds = tolerances(x, z, y)
        if prim <= eps_abs + eps_rel * ps and dual <= eps_abs + eps_rel * ds:
            status = QPStatus.SOLVED
            break
        if m and _infeasibility_certificate(qp, y - y_prev, eps_pinf):
            status = QPStatus.INFEASIBLE
            dy = y - y_prev
            certificate = dy / _inf_norm(dy)
            break
        y_prev = y.copy()
        if it % adaptive_interval == 0 and m:
            prim_n = prim / max(ps, 1e-30)
            dual_n = dual / max(ds, 1e-30)
            ratio = prim_n / max(dual_n, 1e-30)
            if ratio > adaptive_ratio or ratio < 1.0 / adaptive_ratio:
                new_rho = min(max(rho * math.sqrt(ratio), RHO_MIN), RHO_MAX)
                if new_rho != rho:
                    rho = new_rho
                    rho_vec = _rho_vector(l, u, rho)
                    kkt = _Kkt(H, A, sigma, rho_vec)

    if status is QPStatus.INFEASIBLE:
        prim, dual = check_kkt(qp, x, y)
        return QPSolution(x, y, status, prim, dual, qp.objective(x), it, rho=rho, certificate=certificate)

    if polish and status is QPStatus.SOLVED and not polished:
        out = _polish(qp, x, z, y)
        if out is not None:
            xp, yp = out
            p_prim, p_dual = check_kkt(qp, xp, yp)
            a_prim, a_dual = check_kkt(qp, x, y)
            if max(p_prim, p_dual) <= max(a_prim, a_dual, eps_abs):
                x, y, polished = xp, yp, True

    prim, dual = check_kkt(qp, x, y)
    if status is QPStatus.SOLVED:
        Ax = A @ x
        ps = _inf_norm(Ax)
        ds = max(_inf_norm(H @ x), _inf_norm(A.T @ y), _inf_norm(f))
        if prim > eps_abs + eps_rel * ps or dual > eps_abs + eps_rel * ds:
            status = QPStatus.MAX_ITER
    log.debug("qp n=%d m=%d status=%s it=%d prim=%.2e dual=%.2e polished=%s", n, m, status.value, it, prim, dual, polished)
    return QPSolution(x, y, status, prim, dual, qp.objective(x), it, polished=polished, rho=rho)


def write_qp_triplets(qp: QuadraticProgram, path) -> None:
    """Plain-text dump: section headers followed by ``i j v`` triplets or values."""
    H = sp.coo_matrix(qp.H)
    A = sp.coo_matrix(qp.A)
    with open(path, "w") as fh:
        fh.write(f"dims {qp.n} {qp.m}\n")
        fh.write(f"H {H.nnz}\n")
        for i, j, v in zip(H.row, H.col, H.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
        fh.write(f"f {qp.n}\n")
        fh.writelines(f"{float(v)!r}\n" for v in qp.f)
        fh.write(f"A {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
        fh.write(f"l {qp.m}\n")
        fh.writelines(f"{float(v)!r}\n" for v in qp.l)
        fh.write(f"u {qp.m}\n")
        fh.writelines(f"{float(v)!r}\n" for v in qp.u)


def read_qp_triplets(path) -> QuadraticProgram:
    with open(path) as fh:
        lines = iter(fh.read().split("\n"))

    def header(name):
        tag, *rest = next(lines).split()
        if tag != name:
            raise ValueError(f"expected section {name!r}, found {tag!r}")
        return [int(v) for v in rest]

    n, m = header("dims")

    def triplets(name, shape):
        (nnz,) = header(name)
        rows, cols, vals = [], [], []
        for _ in range(nnz):
            i, j, v = next(lines).split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
        return sp.coo_matrix((vals, (rows, cols)), shape=shape)

    def vector(name):
        (k,) = header(name)
        return np.array([float(next(lines)) for _ in range(k)])

    H = triplets("H", (n, n))
    f = vector("f")
    A = triplets("A", (m, n))
    return QuadraticProgram(H, f, A, vector("l"), vector("u"))
