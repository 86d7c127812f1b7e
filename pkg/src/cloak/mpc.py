"""The cloud-side computation: condensed finite-horizon QP, its solver, and a
deadbeat state estimator.

The QP is ``min 1/2 U^T H U + f^T U + const`` subject to ``A_ineq U <= b_ineq``
where ``U = (u_0, ..., u_N)`` stacks the inputs over the horizon.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import nnls

from .linalg import nullspace, numerical_rank
from .objective import ControlObjective
from .sysmodel import LiftedSystem

log = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITERS = "max_iters"
INFEASIBLE = "primal_infeasible"
NUMERICAL = "numerical_error"


@dataclass(frozen=True)
class CondensedQP:
    """Decision vector ``V``; the stacked inputs are ``U = T V + t``.

    Without pre-stabilization ``T`` and ``t`` are None and ``V`` is ``U``.
    When known, ``J`` and ``r`` give the objective as ``||J V + r||^2``, so
    ``H = 2 J^T J``; solves then work with ``J`` and avoid squaring its
    condition number.
    """

    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    x0: np.ndarray
    const: float = 0.0
    T: np.ndarray | None = None
    t: np.ndarray | None = None
    J: np.ndarray | None = None
    r: np.ndarray | None = None

    @property
    def nvar(self) -> int:
        return self.H.shape[0]

    def objective(self, V) -> float:
        V = np.asarray(V, dtype=float).reshape(-1)
        return float(0.5 * V @ self.H @ V + self.f @ V + self.const)

    def inputs(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float).reshape(-1)
        if self.T is None:
            return V.copy()
        return self.T @ V + self.t


@dataclass
class SolverConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_iters: int = 20000
    method: str = "admm"
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    check_every: int = 25
    polish: bool = True

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.method not in ("admm",):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class QPResult:
    U: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    kkt: dict = field(default_factory=dict)
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status == SOLVED

    def diagnostics(self) -> dict:
        return {"status": self.status, "iterations": self.iterations,
                "polished": self.polished, "kkt": dict(self.kkt)}


def horizon_maps(A, B, N: int):
    """``Phi[i] = A^i`` and ``Gamma[i]`` with ``x_i = Phi[i] x_0 + Gamma[i] V``."""
    n1, m = B.shape
    Phi = np.empty((N + 1, n1, n1))
    Gamma = np.zeros((N + 1, n1, m * (N + 1)))
    Phi[0] = np.eye(n1)
    for i in range(1, N + 1):
        Phi[i] = A @ Phi[i - 1]
        Gamma[i] = A @ Gamma[i - 1]
        Gamma[i][:, (i - 1) * m: i * m] += B
    return Phi, Gamma


def stabilizing_feedback(sys: LiftedSystem, M) -> np.ndarray:
    """LQR gain ``K`` (lifted, zero affine column) for the bare part of ``sys``.

    Weights are the blocks of ``M``, cross term included.
    """
    n, m = sys.n, sys.m
    M = np.asarray(M, dtype=float)
    A, B = sys.A[:n, :n], sys.B[:n]
    Q, S, R = M[:n, :n], M[:n, n + 1:], M[n + 1:, n + 1:]
    try:
        X = sla.solve_discrete_are(A, B, Q, R, s=S)
        Kb = -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A + S.T)
    except (np.linalg.LinAlgError, ValueError):
        X = sla.solve_discrete_are(A, B, np.eye(n), np.eye(m))
        Kb = -np.linalg.solve(np.eye(m) + B.T @ X @ B, B.T @ X @ A)
    K = np.zeros((m, n + 1))
    K[:, :n] = Kb
    return K


def condense(sys: LiftedSystem, obj: ControlObjective, x0, feedback=None) -> CondensedQP:
    """Eliminate the states through the dynamics.

    With ``feedback = K`` the inputs are parametrized as ``u_i = K x_i + v_i``
    and ``V`` stacks the ``v_i``. Same problem, better conditioned when
    ``A + B K`` is stable.
    """
    if (sys.n, sys.m) != (obj.n, obj.m):
        raise ValueError(f"system dims {(sys.n, sys.m)} differ from objective "
                         f"dims {(obj.n, obj.m)}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n + 1:
        raise ValueError("x0 must be a lifted state")
    N, m, n1 = obj.N, sys.m, sys.n + 1
    nv = m * (N + 1)
    K = np.zeros((m, n1)) if feedback is None else np.asarray(feedback, dtype=float)
    Phi, Gamma = horizon_maps(sys.A + sys.B @ K, sys.B, N)
    R = np.linalg.cholesky(obj.M).T
    k = n1 + m
    J = np.zeros(((N + 1) * k, nv))
    r = np.zeros((N + 1) * k)
    T = np.zeros((nv, nv))
    t = np.zeros(nv)
    A_rows, b_rows = [], []
    for i in range(N + 1):
        sl = slice(i * m, (i + 1) * m)
        E = np.zeros((k, nv))
        E[:n1] = Gamma[i]
        E[n1:] = K @ Gamma[i]
        E[n1:, sl] += np.eye(m)
        free_x = Phi[i] @ x0
        free_u = K @ free_x
        T[sl], t[sl] = E[n1:], free_u
        e = np.concatenate([free_x - obj.x_ref[i], free_u - obj.u_ref[i]])
        J[i * k:(i + 1) * k] = R @ E
        r[i * k:(i + 1) * k] = R @ e
        if obj.h:
            A_rows.append(obj.D @ E)
            b_rows.append(-obj.D @ np.concatenate([free_x, free_u]))
    H = 2.0 * J.T @ J
    H = 0.5 * (H + H.T)
    f = 2.0 * J.T @ r
    const = float(r @ r)
    A = np.vstack(A_rows) if A_rows else np.zeros((0, nv))
    b = np.concatenate(b_rows) if b_rows else np.zeros(0)
    # Rows on the current state alone involve no decision variable; the
    # measured state may sit on (or a roundoff past) such a bound.
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-12 * max(1.0, float(norms.max(initial=0.0)))
    if not np.all(b[~keep] >= -1e-9 * max(1.0, float(np.abs(b).max(initial=0.0)))):
        log.warning("current state violates %d constraint(s)", int(np.sum(b[~keep] < 0)))
    A, b = A[keep], b[keep]
    if feedback is None:
        return CondensedQP(H, f, A, b, x0, const, J=J, r=r)
    return CondensedQP(H, f, A, b, x0, const, T, t, J, r)


# -- solver -------------------------------------------------------------------

def kkt_residuals(qp: CondensedQP, U, y) -> dict:
    """Absolute residuals and the scales they are judged against."""
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    AU = qp.A_ineq @ U
    slack = AU - qp.b_ineq
    HU = qp.H @ U
    Aty = qp.A_ineq.T @ y
    # the factored gradient avoids cancellation between H U and f
    grad = HU + qp.f if qp.J is None else 2.0 * qp.J.T @ (qp.J @ U + qp.r)
    inf = lambda v: float(np.max(np.abs(v))) if np.size(v) else 0.0  # noqa: E731
    return {
        "stationarity": inf(grad + Aty),
        "stationarity_scale": max(inf(HU), inf(qp.f), inf(Aty)),
        "primal": float(np.max(np.maximum(slack, 0.0))) if slack.size else 0.0,
        "primal_scale": max(inf(AU), inf(qp.b_ineq)),
        "dual": float(np.max(np.maximum(-y, 0.0))) if y.size else 0.0,
        "dual_scale": inf(y),
        "complementarity": inf(y * slack),
        "complementarity_scale": inf(y) * max(inf(AU), inf(qp.b_ineq)),
    }


def kkt_satisfied(kkt: dict, cfg: SolverConfig) -> bool:
    return all(kkt[k] <= cfg.abs_tol + cfg.rel_tol * kkt[k + "_scale"]
               for k in ("stationarity", "primal", "dual", "complementarity"))


def _ls_solve(qp: CondensedQP, active: np.ndarray):
    """Minimize ``||J V + r||`` on ``A_a V = b_a`` by the nullspace method.

    Orthogonal factorizations of ``J`` only, so the error grows with
    ``cond(J)`` rather than ``cond(H) = cond(J)^2``.
    """
    nv = qp.nvar
    Aa, ba = qp.A_ineq[active], qp.b_ineq[active]
    if active.size:
        Vp = np.linalg.lstsq(Aa, ba, rcond=None)[0]
        Z = nullspace(Aa)
    else:
        Vp, Z = np.zeros(nv), np.eye(nv)
    V = Vp
    if Z.shape[1]:
        w = np.linalg.lstsq(qp.J @ Z, -(qp.J @ Vp + qp.r), rcond=None)[0]
        V = Vp + Z @ w
    y = np.zeros(qp.A_ineq.shape[0])
    if active.size:
        grad = 2.0 * qp.J.T @ (qp.J @ V + qp.r)
        y[active] = np.linalg.lstsq(Aa.T, -grad, rcond=None)[0]
    return V, y


def _kkt_solve(qp: CondensedQP, active: np.ndarray):
    if qp.J is not None:
        return _ls_solve(qp, active)
    nv = qp.nvar
    Aa = qp.A_ineq[active]
    K = np.zeros((nv + active.size, nv + active.size))
    K[:nv, :nv] = qp.H
    K[:nv, nv:] = Aa.T
    K[nv:, :nv] = Aa
    rhs = np.concatenate([-qp.f, qp.b_ineq[active]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    # one round of iterative refinement
    sol = sol + np.linalg.lstsq(K, rhs - K @ sol, rcond=None)[0]
    y = np.zeros(qp.A_ineq.shape[0])
    y[active] = sol[nv:]
    return sol[:nv], y


def _polish(qp: CondensedQP, z, y, max_rounds: int = 10):
    """Solve the equality-constrained QP on the active set guessed from ADMM.

    The guess is then corrected until multipliers and slacks have consistent
    signs, so an accepted point is the exact optimum up to roundoff rather
    than merely within the KKT tolerance. Multipliers come from a
    nonnegative least-squares fit, which stays valid when the active rows
    are linearly dependent.
    """
    active = qp.b_ineq - z < y
    best = None
    for _ in range(max_rounds):
        idx = np.flatnonzero(active)
        U, yy = _kkt_solve(qp, idx)
        grad = qp.H @ U + qp.f if qp.J is None else 2.0 * qp.J.T @ (qp.J @ U + qp.r)
        if idx.size:
            y_nn, _ = nnls(-qp.A_ineq[idx].T, grad)
            y_fit = np.zeros_like(yy)
            y_fit[idx] = y_nn
            resid = np.max(np.abs(grad + qp.A_ineq.T @ y_fit))
            if resid <= 1e-11 * max(1.0, float(np.max(np.abs(grad)))):
                yy = y_fit
        kkt = kkt_residuals(qp, U, yy)
        score = kkt["primal"] + kkt["dual"] + kkt["stationarity"]
        if best is None or score < best[3]:
            best = (U, yy, kkt, score)
        slack = qp.A_ineq @ U - qp.b_ineq
        tiny_y = 1e-13 * max(1.0, float(np.abs(yy).max(initial=0.0)))
        tiny_s = 1e-13 * max(1.0, kkt["primal_scale"])
        drop = active & (yy < -tiny_y)
        add = ~active & (slack > tiny_s)
        if not (drop.any() or add.any()):
            break
        active = (active & ~drop) | add
    return best[:3]


def solve(qp: CondensedQP, cfg: SolverConfig | None = None) -> QPResult:
    """ADMM (operator splitting) with periodic active-set polishing.

    Stops once the KKT residuals meet ``abs_tol + rel_tol * scale``.
    """
    cfg = cfg or SolverConfig()
    try:
        return _solve(qp, cfg)
    except np.linalg.LinAlgError as exc:
        # H is not numerically positive definite (e.g. a badly conditioned
        # condensation without pre-stabilization)
        log.warning("QP solver failed: %s", exc)
        nv, nc = qp.nvar, qp.A_ineq.shape[0]
        return QPResult(np.zeros(nv), np.zeros(nc), NUMERICAL, 0,
                        kkt_residuals(qp, np.zeros(nv), np.zeros(nc)))


def _solve(qp: CondensedQP, cfg: SolverConfig) -> QPResult:
    nv, nc = qp.nvar, qp.A_ineq.shape[0]
    H, f, A, b = qp.H, qp.f, qp.A_ineq, qp.b_ineq
    if nc == 0 and qp.J is not None:
        U = _ls_solve(qp, np.zeros(0, dtype=int))[0]
        return QPResult(U, np.zeros(0), SOLVED, 0, kkt_residuals(qp, U, np.zeros(0)))
    if nc == 0:
        fac = sla.cho_factor(H)
        U = sla.cho_solve(fac, -f)
        U = U + sla.cho_solve(fac, -f - H @ U)
        kkt = kkt_residuals(qp, U, np.zeros(0))
        return QPResult(U, np.zeros(0), SOLVED, 0, kkt)

    # Row equilibration keeps rho meaningful across constraint scales.
    row_scale = 1.0 / np.maximum(np.linalg.norm(A, axis=1), 1e-12)
    As, bs = A * row_scale[:, None], b * row_scale
    rho, sigma, alpha = cfg.rho, cfg.sigma, cfg.alpha
    I = np.eye(nv)

    def factor(r):
        return sla.cho_factor(H + sigma * I + r * As.T @ As)

    fac = factor(rho)
    x = np.zeros(nv)
    z = np.minimum(As @ x, bs)
    y = np.zeros(nc)
    y_prev = y.copy()
    best = None
    status = MAX_ITERS
    it = 0
    for it in range(1, cfg.max_iters + 1):
        xt = sla.cho_solve(fac, sigma * x - f + As.T @ (rho * z - y))
        zt = As @ xt
        x = alpha * xt + (1 - alpha) * x
        zr = alpha * zt + (1 - alpha) * z
        z_new = np.minimum(zr + y / rho, bs)
        y = y + rho * (zr - z_new)
        z = z_new
        if it % cfg.check_every:
            continue
        y_orig = y * row_scale
        kkt = kkt_residuals(qp, x, y_orig)
        if best is None or kkt["primal"] + kkt["stationarity"] < best[2]["primal"] + best[2]["stationarity"]:
            best = (x.copy(), y_orig.copy(), kkt)
        if cfg.polish:
            Up, yp, kp = _polish(qp, z / row_scale, y_orig)
            if kkt_satisfied(kp, cfg):
                return QPResult(Up, yp, SOLVED, it, kp, polished=True)
        if kkt_satisfied(kkt, cfg):
            status = SOLVED
            break
        dy = y - y_prev
        ndy = float(np.max(np.abs(dy)))
        if ndy > 0:
            eps = 1e-5 * ndy
            if (np.max(np.abs(As.T @ dy)) <= eps and np.max(np.maximum(-dy, 0.0)) <= eps
                    and bs @ np.maximum(dy, 0.0) < -eps):
                status = INFEASIBLE
                break
        y_prev = y.copy()
        # residual-balancing rho update
        rp = np.max(np.abs(As @ x - z)) / max(np.max(np.abs(As @ x)), np.max(np.abs(z)), 1e-12)
        rd = np.max(np.abs(H @ x + f + As.T @ y)) / max(
            np.max(np.abs(H @ x)), np.max(np.abs(As.T @ y)), np.max(np.abs(f)), 1e-12)
        if rd > 0 and rp > 0:
            new_rho = float(np.clip(rho * np.sqrt(rp / rd), 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                fac = factor(rho)
    if status == SOLVED:
        y_orig = y * row_scale
        return QPResult(x, y_orig, SOLVED, it, kkt_residuals(qp, x, y_orig))
    log.warning("QP solver stopped with status %s after %d iterations", status, it)
    Ub, yb, kb = best if best is not None else (x, y * row_scale, kkt_residuals(qp, x, y * row_scale))
    return QPResult(Ub, yb, status, it, kb)


# -- estimation ---------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    x: np.ndarray
    flagged: bool
    window: int


def schur_metric(M, n1: int) -> np.ndarray:
    """State-block Schur complement of ``M``: ``min_du d^T M d`` as a form in ``dx``."""
    M = np.asarray(M, dtype=float)
    Mxx, Mxu, Muu = M[:n1, :n1], M[:n1, n1:], M[n1:, n1:]
    W = Mxx - Mxu @ np.linalg.solve(Muu, Mxu.T)
    return 0.5 * (W + W.T)


def deadbeat_estimate(sys: LiftedSystem, y_window, u_window, prior=None,
                      weight=None) -> Estimate:
    """Current lifted state from the last outputs ``y_{k-w+1..k}`` and the
    ``w - 1`` inputs applied between them.

    Every state in the window is an unknown, tied together by the dynamics
    and pinned by the outputs. This is the window-start observability
    problem rolled forward, written so that powers of ``A`` are never formed:
    for unstable ``A`` those lose several digits to cancellation.

    With an observable window the estimate is exact and unflagged. Otherwise
    the output-consistent states form an affine set; the one closest to
    ``prior`` in the ``weight`` norm is returned and flagged.
    """
    Y = np.atleast_2d(np.asarray(y_window, dtype=float))
    w = Y.shape[0]
    U = np.asarray(u_window, dtype=float).reshape(-1, sys.m) if w > 1 else np.zeros((0, sys.m))
    if U.shape[0] != w - 1:
        raise ValueError(f"{w} outputs need {w - 1} inputs, got {U.shape[0]}")
    n1, q = sys.n + 1, sys.C.shape[0]
    rows = w * q + (w - 1) * n1
    K = np.zeros((rows, w * n1))
    rhs = np.zeros(rows)
    for j in range(w):
        K[j * q:(j + 1) * q, j * n1:(j + 1) * n1] = sys.C
        rhs[j * q:(j + 1) * q] = Y[j]
    off = w * q
    for j in range(w - 1):
        r = slice(off + j * n1, off + (j + 1) * n1)
        K[r, j * n1:(j + 1) * n1] = -sys.A
        K[r, (j + 1) * n1:(j + 2) * n1] = np.eye(n1)
        rhs[r] = sys.B @ U[j]
    X = np.linalg.lstsq(K, rhs, rcond=None)[0]
    xk = X[-n1:]
    if numerical_rank(K) == w * n1:
        return Estimate(xk, False, w)
    N = nullspace(K)[-n1:]
    if N.size:
        prior = np.zeros(n1) if prior is None else np.asarray(prior, dtype=float)
        W = np.eye(n1) if weight is None else np.asarray(weight, dtype=float)
        R = np.linalg.cholesky(W).T
        a = np.linalg.lstsq(R @ N, -R @ (xk - prior), rcond=None)[0]
        xk = xk + N @ a
    return Estimate(xk, True, w)
