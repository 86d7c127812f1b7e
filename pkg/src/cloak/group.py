"""Isomorphisms of lifted control systems and the subgroups used as keys.

An isomorphism ``psi = (P, F, G, S)`` changes state coordinates (``P``),
adds state feedback (``F``), changes input coordinates (``G``) and output
coordinates (``S``). ``P`` and ``S`` are lifted affine maps; ``F`` carries its
affine constant in the last column.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import cond, is_lifted, nullspace, snap_lifted
from .sysmodel import LiftedSystem

MAX_COND = 1e8
SAMPLE_COND = 1e4
JOINT_COND_PER_DIM = 50.0
RESAMPLE_BUDGET = 100
FIXED_POINT_TOL = 1e-8


class TrivialStabilizerWarning(UserWarning):
    """Scenario-3 sampling fell back to the identity key."""


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Isomorphism:
    P: np.ndarray
    F: np.ndarray
    G: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        F = np.atleast_2d(np.array(self.F, dtype=float))
        G = np.atleast_2d(np.array(self.G, dtype=float))
        S = np.atleast_2d(np.array(self.S, dtype=float))
        n1, m = P.shape[0], G.shape[0]
        if P.shape != (n1, n1) or F.shape != (m, n1) or G.shape != (m, m) \
                or S.shape[0] != S.shape[1]:
            raise ValueError(
                f"incompatible shapes P {P.shape}, F {F.shape}, G {G.shape}, S {S.shape}")
        for name, val in zip("PFGS", (P, F, G, S)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.P.shape[0] - 1, self.G.shape[0], self.S.shape[0] - 1

    @property
    def L(self) -> np.ndarray:
        """Joint map ``(x, u) -> (P x, F x + G u)``."""
        n1, m = self.P.shape[0], self.G.shape[0]
        L = np.zeros((n1 + m, n1 + m))
        L[:n1, :n1] = self.P
        L[n1:, :n1] = self.F
        L[n1:, n1:] = self.G
        return L

    def conditions(self) -> dict[str, float]:
        return {"P": cond(self.P), "G": cond(self.G), "S": cond(self.S), "L": cond(self.L)}

    def is_well_formed(self, max_cond: float = MAX_COND) -> bool:
        return (is_lifted(self.P) and is_lifted(self.S)
                and all(np.isfinite(c) and c < max_cond for c in self.conditions().values()))

    def allclose(self, other: "Isomorphism", atol: float = 1e-8) -> bool:
        return all(np.allclose(a, b, rtol=0.0, atol=atol)
                   for a, b in zip((self.P, self.F, self.G, self.S),
                                   (other.P, other.F, other.G, other.S)))


def identity(n: int, m: int, p: int) -> Isomorphism:
    return Isomorphism(np.eye(n + 1), np.zeros((m, n + 1)), np.eye(m), np.eye(p + 1))


def compose(psi2: Isomorphism, psi1: Isomorphism) -> Isomorphism:
    """``psi2 o psi1``: apply ``psi1`` first."""
    return Isomorphism(psi2.P @ psi1.P, psi2.G @ psi1.F + psi2.F @ psi1.P,
                       psi2.G @ psi1.G, psi2.S @ psi1.S)


def inverse(psi: Isomorphism) -> Isomorphism:
    try:
        Pinv = np.linalg.inv(psi.P)
        Ginv = np.linalg.inv(psi.G)
        Sinv = np.linalg.inv(psi.S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("isomorphism is not invertible") from exc
    return Isomorphism(snap_lifted(Pinv), -Ginv @ psi.F @ Pinv, Ginv, snap_lifted(Sinv))


def _check_dims(psi: Isomorphism, sys: LiftedSystem) -> None:
    if psi.dims != (sys.n, sys.m, sys.p):
        raise ValueError(f"isomorphism dims {psi.dims} do not match system "
                         f"{(sys.n, sys.m, sys.p)}")


def act_on_system(psi: Isomorphism, sys: LiftedSystem) -> LiftedSystem:
    _check_dims(psi, sys)
    # X P^-1 computed as solve(P^T, X^T)^T
    right_Pinv = lambda X: np.linalg.solve(psi.P.T, X.T).T  # noqa: E731
    GinvF = np.linalg.solve(psi.G, psi.F)
    A = snap_lifted(psi.P @ right_Pinv(sys.A - sys.B @ GinvF))
    B = np.linalg.solve(psi.G.T, (psi.P @ sys.B).T).T
    B[-1] = 0.0
    C = snap_lifted(psi.S @ right_Pinv(sys.C))
    return LiftedSystem(A, B, C)


def act_on_point(psi: Isomorphism, x, u, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return psi.P @ x, psi.F @ x + psi.G @ np.asarray(u, dtype=float), \
        psi.S @ np.asarray(y, dtype=float)


def act_on_trajectory(psi: Isomorphism, xs, us, ys):
    """Pointwise image of stacked trajectories (rows are time steps)."""
    xs, us, ys = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (xs, us, ys))
    return xs @ psi.P.T, xs[: len(us)] @ psi.F.T + us @ psi.G.T, ys @ psi.S.T


# -- stabilizers -------------------------------------------------------------

@dataclass(frozen=True)
class StabilizerSubspace:
    """Directions ``Q`` (zero last row) with ``I + Q`` a symmetry of the system.

    The basis is orthonormal in the Frobenius inner product.
    """

    basis: tuple[np.ndarray, ...]
    dim: int
    includes_output_condition: bool


def _projectors(sys: LiftedSystem):
    Bp = np.linalg.pinv(sys.B)
    Cp = np.linalg.pinv(sys.C)
    n1 = sys.n + 1
    return Bp, Cp, np.eye(n1) - sys.B @ Bp, np.eye(n1) - Cp @ sys.C


def _unit_directions(n: int) -> np.ndarray:
    """All unit matrices with a zero last row, shape (n(n+1), n+1, n+1)."""
    n1 = n + 1
    E = np.zeros((n * n1, n1, n1))
    idx = np.arange(n * n1)
    E[idx, idx // n1, idx % n1] = 1.0
    return E


def symmetry_conditions(sys: LiftedSystem, with_output: bool) -> np.ndarray:
    """Matrix of the linear map ``vec(Q) -> residuals`` of the fixed-point equations.

    ``Q`` ranges over the top ``n`` rows; columns follow row-major order.
    """
    _, _, PiB, PiC = _projectors(sys)
    E = _unit_directions(sys.n)
    blocks = [PiB @ (E @ sys.A - sys.A @ E), PiB @ E @ sys.B]
    if with_output:
        blocks.append(sys.C @ E @ PiC)
    return np.concatenate([b.reshape(len(E), -1) for b in blocks], axis=1).T


def operator_scale(sys: LiftedSystem) -> float:
    return max(1.0, *(float(np.linalg.norm(M, 2)) for M in (sys.A, sys.B, sys.C)))


def stabilizer_subspace(sys: LiftedSystem, with_output: bool = True,
                        eps: float = 1e-10) -> StabilizerSubspace:
    K = symmetry_conditions(sys, with_output)
    N = nullspace(K, eps=eps, scale=operator_scale(sys))
    n1 = sys.n + 1
    basis = []
    for v in N.T:
        Q = np.zeros((n1, n1))
        Q[:-1] = v.reshape(sys.n, n1)
        basis.append(Q)
    return StabilizerSubspace(tuple(basis), len(basis), with_output)


def symmetry_from_P(sys: LiftedSystem, P) -> Isomorphism:
    """The unique ``(P, F, G, S)`` fixing ``sys`` for a stabilizer ``P``."""
    Bp, Cp, _, _ = _projectors(sys)
    P = snap_lifted(P)
    G = Bp @ P @ sys.B
    F = Bp @ (P @ sys.A - sys.A @ P)
    S = snap_lifted(sys.C @ P @ Cp)
    return Isomorphism(P, F, G, S)


def symmetry_generator(sys: LiftedSystem, Q) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Tangent ``(dP, dF, dG, dS)`` at the identity along direction ``Q``.

    Every component is linear in ``Q``; ``dG`` and ``dS`` are the deviations
    of ``G`` and ``S`` from the identity.
    """
    Bp, Cp, _, _ = _projectors(sys)
    Q = np.asarray(Q, dtype=float)
    return Q, Bp @ (Q @ sys.A - sys.A @ Q), Bp @ Q @ sys.B, sys.C @ Q @ Cp


def fixed_point_residual(psi: Isomorphism, sys: LiftedSystem) -> float:
    img = act_on_system(psi, sys)
    return max(float(np.max(np.abs(a - b)))
               for a, b in ((img.A, sys.A), (img.B, sys.B), (img.C, sys.C)))


# -- sampling ----------------------------------------------------------------

def _draw_invertible(rng, shape, lifted: bool) -> np.ndarray:
    for _ in range(RESAMPLE_BUDGET):
        if lifted:
            M = np.zeros(shape)
            M[:-1] = rng.uniform(-1, 1, (shape[0] - 1, shape[1]))
            M[-1, -1] = 1.0
        else:
            M = rng.uniform(-1, 1, shape)
        if cond(M) < SAMPLE_COND:
            return M
    raise SamplingError(f"no well-conditioned {shape} matrix within {RESAMPLE_BUDGET} draws")


def joint_cond_limit(n: int, m: int) -> float:
    """Bound on ``cond(L)`` for sampled keys.

    The cloud's estimate and QP solution lose about ``cond(L)^2`` ulps, so
    the bound keeps replayed transcripts equal to 12 digits. It grows with
    the dimension because random matrices get worse conditioned with size.
    """
    return min(SAMPLE_COND, JOINT_COND_PER_DIM * (n + 1 + m))


def sample_full(rng, n: int, m: int, p: int) -> Isomorphism:
    """Uniform entries, redrawn until ``L`` is within :func:`joint_cond_limit`."""
    limit = joint_cond_limit(n, m)
    for _ in range(RESAMPLE_BUDGET):
        P = _draw_invertible(rng, (n + 1, n + 1), lifted=True)
        F = rng.uniform(-1, 1, (m, n + 1))
        G = _draw_invertible(rng, (m, m), lifted=False)
        S = _draw_invertible(rng, (p + 1, p + 1), lifted=True)
        psi = Isomorphism(P, F, G, S)
        if cond(psi.L) < limit:
            return psi
    raise SamplingError(f"no well-conditioned key within {RESAMPLE_BUDGET} draws")


def sample_symmetry(rng, sys: LiftedSystem, subspace: StabilizerSubspace | None = None,
                    max_norm: float = 0.5) -> Isomorphism:
    """Random element of the symmetry group of ``sys`` near the identity.

    ``P = I + Q`` with ``||Q||_2 <= max_norm`` keeps ``P`` invertible. Falls
    back to the identity (with a warning) when the group is discrete.
    """
    if subspace is None:
        subspace = stabilizer_subspace(sys, with_output=True)
    if subspace.dim == 0:
        warnings.warn("symmetry group of the system is trivial; using the identity key",
                      TrivialStabilizerWarning, stacklevel=2)
        return identity(sys.n, sys.m, sys.p)
    basis = np.array(subspace.basis)
    for _ in range(RESAMPLE_BUDGET):
        coeffs = rng.standard_normal(subspace.dim)
        Q = np.tensordot(coeffs, basis, axes=1)
        Q *= rng.uniform(0.1, 1.0) * max_norm / np.linalg.norm(Q, 2)
        psi = symmetry_from_P(sys, np.eye(sys.n + 1) + Q)
        if psi.is_well_formed(SAMPLE_COND) and fixed_point_residual(psi, sys) <= FIXED_POINT_TOL:
            return psi
        max_norm *= 0.8
    raise SamplingError(f"no valid symmetry within {RESAMPLE_BUDGET} draws")


def sample_isomorphism(scenario: int, sys: LiftedSystem, rng_seed: int) -> Isomorphism:
    """Draw a key from the subgroup matching what the cloud is assumed to know.

    1: the full group; 2: ``(P, 0, I, I) o symmetry``, so the encoded system
    keeps the true input and output channels; 3: a symmetry of ``sys``.
    """
    rng = np.random.default_rng(rng_seed)
    n, m, p = sys.n, sys.m, sys.p
    if scenario == 1:
        return sample_full(rng, n, m, p)
    if scenario == 2:
        sub = stabilizer_subspace(sys, with_output=True)
        for _ in range(RESAMPLE_BUDGET):
            P = _draw_invertible(rng, (n + 1, n + 1), lifted=True)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", TrivialStabilizerWarning)
                sym = sample_symmetry(rng, sys, sub)
            coords = Isomorphism(P, np.zeros((m, n + 1)), np.eye(m), np.eye(p + 1))
            psi = compose(coords, sym)
            if psi.is_well_formed(SAMPLE_COND) and cond(psi.L) < joint_cond_limit(n, m):
                return psi
        raise SamplingError(f"no well-conditioned key within {RESAMPLE_BUDGET} draws")
    if scenario == 3:
        return sample_symmetry(rng, sys)
    raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")
