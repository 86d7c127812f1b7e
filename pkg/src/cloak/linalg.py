"""Numerical rank, nullspace and lifted-affine helpers shared by every module."""
from __future__ import annotations

import numpy as np

RANK_EPS = 1e-10


def rank_tol(s: np.ndarray, shape: tuple[int, ...], eps: float = RANK_EPS,
             scale: float | None = None) -> float:
    """Threshold below which a singular value counts as zero.

    ``scale`` acts as a floor for the largest singular value, so an operator
    that is identically zero up to roundoff is not mistaken for a full-rank one.
    """
    smax = float(s[0]) if s.size else 0.0
    if scale is not None:
        smax = max(smax, float(scale))
    return max(shape) * eps * smax


def numerical_rank(M, eps: float = RANK_EPS, scale: float | None = None) -> int:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rank_tol(s, M.shape, eps, scale)))


def nullspace(M, eps: float = RANK_EPS, scale: float | None = None) -> np.ndarray:
    """Orthonormal basis of ker M, one basis vector per column."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    ncols = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(ncols)
    _, s, vh = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > rank_tol(s, M.shape, eps, scale)))
    return vh[r:].T.copy()


def lift_affine(W, v) -> np.ndarray:
    """Embed the affine map ``x -> W x + v`` as the linear map ``[[W, v], [0, 1]]``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    v = np.asarray(v, dtype=float).reshape(-1)
    a, b = W.shape
    if v.shape[0] != a:
        raise ValueError(f"affine offset has length {v.shape[0]}, expected {a}")
    L = np.zeros((a + 1, b + 1))
    L[:a, :b] = W
    L[:a, b] = v
    L[a, b] = 1.0
    return L


def is_lifted(M, atol: float = 0.0) -> bool:
    """True when the last row of square ``M`` is exactly ``(0, ..., 0, 1)``."""
    M = np.asarray(M)
    e = np.zeros(M.shape[1])
    e[-1] = 1.0
    return bool(np.allclose(M[-1], e, rtol=0.0, atol=atol))


def snap_lifted(M) -> np.ndarray:
    """Overwrite the last row with the exact ``(0, ..., 0, 1)`` pattern."""
    M = np.array(M, dtype=float)
    M[-1, :] = 0.0
    M[-1, -1] = 1.0
    return M


def reachability_matrix(A, B, j: int) -> np.ndarray:
    """``[B, AB, ..., A^j B]``; an empty matrix for ``j < 0``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    blocks = []
    Ak = B
    for _ in range(j + 1):
        blocks.append(Ak)
        Ak = A @ Ak
    if not blocks:
        return np.zeros((A.shape[0], 0))
    return np.hstack(blocks)


def observability_matrix(A, C, steps: int) -> np.ndarray:
    """``[C; CA; ...; CA^(steps-1)]``."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    rows = []
    CAk = C
    for _ in range(steps):
        rows.append(CAk)
        CAk = CAk @ A
    return np.vstack(rows) if rows else np.zeros((0, A.shape[0]))


def cond(M) -> float:
    return float(np.linalg.cond(np.asarray(M, dtype=float)))
