"""Quadratic tracking costs and affine constraints over lifted ``eta = (x, u)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .group import Isomorphism


def _ro(a, ndim=2) -> np.ndarray:
    a = np.array(a, dtype=float)
    a = np.atleast_2d(a) if ndim == 2 else a
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ControlObjective:
    """``J = sum_i d_i^T M d_i`` with ``d_i = (x_i - x_ref_i, u_i - u_ref_i)``,
    subject to ``D eta_i <= 0`` for ``i = 0..N``.
    """

    M: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    D: np.ndarray
    N: int

    def __post_init__(self):
        M = _ro(self.M)
        x_ref = _ro(self.x_ref)
        u_ref = _ro(self.u_ref)
        N = int(self.N)
        if N < 0:
            raise ValueError("horizon must be non-negative")
        if x_ref.shape[0] != N + 1 or u_ref.shape[0] != N + 1:
            raise ValueError(f"references must have N + 1 = {N + 1} rows")
        k = x_ref.shape[1] + u_ref.shape[1]
        if M.shape != (k, k):
            raise ValueError(f"M has shape {M.shape}, expected {(k, k)}")
        D = np.zeros((0, k)) if self.D is None or np.size(self.D) == 0 else self.D
        D = _ro(D)
        if D.shape[1] != k:
            raise ValueError(f"D has {D.shape[1]} columns, expected {k}")
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError("M is not symmetric")
        w = np.linalg.eigvalsh(M)
        if w[0] <= 1e-10 * w[-1]:
            raise ValueError("M is not positive definite")
        if np.any(np.abs(x_ref[:, -1] - 1.0) > 1e-12):
            raise ValueError("lifted references must end in 1")
        for name, val in (("M", M), ("x_ref", x_ref), ("u_ref", u_ref), ("D", D), ("N", N)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.x_ref.shape[1] - 1

    @property
    def m(self) -> int:
        return self.u_ref.shape[1]

    @property
    def h(self) -> int:
        return self.D.shape[0]

    def allclose(self, other: "ControlObjective", atol: float = 1e-8) -> bool:
        return self.N == other.N and all(
            a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip((self.M, self.x_ref, self.u_ref, self.D),
                            (other.M, other.x_ref, other.u_ref, other.D)))


def eval_cost(obj: ControlObjective, x, u) -> float:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if len(x) != obj.N + 1 or len(u) != obj.N + 1:
        raise ValueError(f"expected {obj.N + 1} states and inputs, got {len(x)} and {len(u)}")
    d = np.hstack([x - obj.x_ref, u - obj.u_ref])
    return float(np.einsum("ij,jk,ik->", d, obj.M, d))


def constraint_values(obj: ControlObjective, x, u) -> np.ndarray:
    """``D eta_i`` for every step, shape ``(N + 1, h)``; feasible iff all ``<= 0``."""
    eta = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
    return eta @ obj.D.T


def transform_objective(psi: Isomorphism, obj: ControlObjective) -> ControlObjective:
    L = psi.L
    if L.shape[0] != obj.M.shape[0]:
        raise ValueError("isomorphism and objective dimensions differ")
    try:
        Linv = np.linalg.inv(L)
    except np.linalg.LinAlgError as exc:
        raise ValueError("joint map L is singular") from exc
    Mt = Linv.T @ obj.M @ Linv
    Mt = 0.5 * (Mt + Mt.T)
    x_ref = obj.x_ref @ psi.P.T
    x_ref[:, -1] = 1.0
    u_ref = obj.x_ref @ psi.F.T + obj.u_ref @ psi.G.T
    return ControlObjective(Mt, x_ref, u_ref, obj.D @ Linv, obj.N)


def make_box_state_constraints(lower, upper, m: int) -> np.ndarray:
    """Rows ``l_i - x_i <= 0`` and ``x_i - h_i <= 0`` in lifted ``eta`` form."""
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    if lower.shape != upper.shape:
        raise ValueError("bounds must have equal length")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("state bounds must be finite")
    if np.any(lower >= upper):
        raise ValueError("every lower bound must be strictly below its upper bound")
    n = lower.size
    D = np.zeros((2 * n, n + 1 + m))
    for i in range(n):
        D[2 * i, i], D[2 * i, n] = -1.0, lower[i]
        D[2 * i + 1, i], D[2 * i + 1, n] = 1.0, -upper[i]
    return D


def make_box_input_constraints(lower, upper, n: int) -> np.ndarray:
    """Rows ``l_j - u_j <= 0`` and ``u_j - h_j <= 0``; infinite bounds are skipped."""
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    if np.any(lower >= upper):
        raise ValueError("every lower bound must be strictly below its upper bound")
    m = lower.size
    rows = []
    for j in range(m):
        if np.isfinite(lower[j]):
            r = np.zeros(n + 1 + m)
            r[n + 1 + j], r[n] = -1.0, lower[j]
            rows.append(r)
        if np.isfinite(upper[j]):
            r = np.zeros(n + 1 + m)
            r[n + 1 + j], r[n] = 1.0, -upper[j]
            rows.append(r)
    return np.array(rows).reshape(-1, n + 1 + m)


def state_block(D, n: int) -> np.ndarray:
    """State columns of the rows that do not involve the input."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    pure = np.all(D[:, n + 1:] == 0.0, axis=1)
    return D[pure, : n + 1]
