"""Reference computations used only by the tests.

These avoid the code paths under test: the stabilizer is computed from the
unreduced fixed-point equations (unknowns ``Q, dF, dG, dS`` together, no
pseudoinverses), exactly over the rationals when the system has integer
entries, and QPs are solved by enumerating active sets.
"""
from __future__ import annotations

import itertools

import numpy as np
import sympy


def _unknown_layout(n, m, p, with_output):
    n1 = n + 1
    sizes = {"Q": n * n1, "F": m * n1, "G": m * m}
    if with_output:
        sizes["S"] = p * (p + 1)
    offsets, o = {}, 0
    for k, s in sizes.items():
        offsets[k] = o
        o += s
    return offsets, o


def stabilizer_equations(A, B, C, with_output, exact=False):
    """Matrix of ``(Q, dF, dG, dS) -> (QA - AQ - B dF, QB - B dG, CQ - dS C)``.

    ``A, B, C`` are lifted. ``Q`` and ``dS`` have a zero last row. Because
    ``B`` has full column rank and ``C`` full row rank, the nullity equals
    the dimension of the stabilizer.
    """
    conv = (lambda v: sympy.Rational(int(v)) if float(v).is_integer() else sympy.nsimplify(v)) \
        if exact else float
    A = [[conv(v) for v in row] for row in np.asarray(A)]
    B = [[conv(v) for v in row] for row in np.asarray(B)]
    C = [[conv(v) for v in row] for row in np.asarray(C)]
    n1, m, q = len(A), len(B[0]), len(C)
    n, p = n1 - 1, q - 1
    off, total = _unknown_layout(n, m, p, with_output)
    rows = []

    def Qidx(i, j):
        return off["Q"] + i * n1 + j if i < n else None

    def zero():
        return [0] * total

    # (QA - AQ - B dF)[i, j]
    for i in range(n1):
        for j in range(n1):
            r = zero()
            for k in range(n1):
                if Qidx(i, k) is not None:
                    r[Qidx(i, k)] += A[k][j]
                if Qidx(k, j) is not None:
                    r[Qidx(k, j)] -= A[i][k]
            for a in range(m):
                r[off["F"] + a * n1 + j] -= B[i][a]
            rows.append(r)
    # (QB - B dG)[i, b]
    for i in range(n1):
        for b in range(m):
            r = zero()
            for k in range(n1):
                if Qidx(i, k) is not None:
                    r[Qidx(i, k)] += B[k][b]
            for a in range(m):
                r[off["G"] + a * m + b] -= B[i][a]
            rows.append(r)
    if with_output:
        # (CQ - dS C)[i, j]
        for i in range(q):
            for j in range(n1):
                r = zero()
                for k in range(n):
                    r[Qidx(k, j)] += C[i][k]
                if i < p:
                    for a in range(q):
                        r[off["S"] + i * q + a] -= C[a][j]
                rows.append(r)
    if exact:
        return sympy.Matrix(rows)
    return np.array(rows, dtype=float)


def stabilizer_dim_exact(sys, with_output: bool) -> int:
    """Exact nullity for systems with integer (or simple rational) entries."""
    K = stabilizer_equations(sys.A, sys.B, sys.C, with_output, exact=True)
    return K.shape[1] - K.rank()


def stabilizer_dim_float(sys, with_output: bool, rtol: float = 1e-9) -> int:
    K = stabilizer_equations(sys.A, sys.B, sys.C, with_output)
    s = np.linalg.svd(K, compute_uv=False)
    scale = max(1.0, s[0] if s.size else 0.0)
    return K.shape[1] - int(np.sum(s > rtol * scale))


def stabilizer_omega_dim_float(sys, D, rtol: float = 1e-9) -> int:
    """Nullity of the system equations plus ``D [[Q, 0], [dF, dG]] = 0``."""
    K = stabilizer_equations(sys.A, sys.B, sys.C, with_output=True)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n1, m = sys.n + 1, sys.m
    off, total = _unknown_layout(sys.n, m, sys.p, True)
    rows = []
    for r in range(D.shape[0]):
        for j in range(n1 + m):
            row = np.zeros(total)
            for a in range(m):
                if j < n1:
                    row[off["F"] + a * n1 + j] += D[r, n1 + a]
                else:
                    row[off["G"] + a * m + (j - n1)] += D[r, n1 + a]
            if j < n1:
                for k in range(sys.n):
                    row[off["Q"] + k * n1 + j] += D[r, k]
            rows.append(row)
    if rows:
        K = np.vstack([K, np.array(rows)])
    s = np.linalg.svd(K, compute_uv=False)
    return K.shape[1] - int(np.sum(s > rtol * max(1.0, s[0])))


def group_dim_by_counting(n, m, p) -> int:
    """Free entries of (P, F, G, S) once the fixed last rows are removed."""
    P = np.ones((n + 1, n + 1))
    F = np.ones((m, n + 1))
    G = np.ones((m, m))
    S = np.ones((p + 1, p + 1))
    return P[:-1].size + F.size + G.size + S[:-1].size


def partitions(total: int, largest: int | None = None):
    """Integer partitions of ``total`` as non-increasing tuples."""
    if largest is None:
        largest = total
    if total == 0:
        yield ()
        return
    for k in range(min(total, largest), 0, -1):
        for rest in partitions(total - k, k):
            yield (k,) + rest


def enumerate_qp(H, f, A, b, tol: float = 1e-9):
    """Exhaustive active-set search for ``min 1/2 x'Hx + f'x, Ax <= b``.

    Solves the equality-constrained problem for every subset of at most
    ``nvar`` rows and keeps the best feasible point.
    """
    H, f, A, b = (np.asarray(v, dtype=float) for v in (H, f, A, b))
    nv, nc = H.shape[0], A.shape[0]
    best_x, best_val = None, np.inf
    for size in range(0, min(nv, nc) + 1):
        for act in itertools.combinations(range(nc), size):
            act = list(act)
            Aa = A[act]
            K = np.block([[H, Aa.T], [Aa, np.zeros((size, size))]])
            rhs = np.concatenate([-f, b[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:nv]
            if np.all(A @ x <= b + tol * (1 + np.abs(b))):
                val = 0.5 * x @ H @ x + f @ x
                if val < best_val:
                    best_x, best_val = x, val
    return best_x, best_val


def simulate_affine(A_bar, B_bar, C_bar, c_bar, d_bar, x0, inputs):
    """Bare affine recursion, no lifting."""
    xs = [np.asarray(x0, dtype=float)]
    for u in inputs:
        xs.append(A_bar @ xs[-1] + B_bar @ u + c_bar)
    xs = np.array(xs)
    return xs, xs @ C_bar.T + d_bar
