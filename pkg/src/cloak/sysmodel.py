"""Affine plants, their lifted linear form, and structural invariants.

A bare plant is ``x+ = A x + B u + c``, ``y = C x + d``. Lifting appends a
constant coordinate so the plant becomes linear: ``x = (x_bar, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    is_lifted,
    lift_affine,
    numerical_rank,
    observability_matrix,
    reachability_matrix,
)


class InvalidPlantError(ValueError):
    """A plant violates one of the standing assumptions.

    ``check`` names the failed assumption: ``"dims"``, ``"controllability"``,
    ``"observability"``, ``"ker-B"`` or ``"im-C"``.
    """

    def __init__(self, check: str, message: str):
        super().__init__(f"{check}: {message}")
        self.check = check


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    else:
        a = a.reshape(-1)
    if not np.all(np.isfinite(a)):
        raise InvalidPlantError("dims", "non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BarePlant:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    c: np.ndarray = None
    d: np.ndarray = None

    def __post_init__(self):
        A = _frozen(self.A, 2)
        B = _frozen(self.B, 2)
        C = _frozen(self.C, 2)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise InvalidPlantError(
                "dims", f"A {A.shape}, B {B.shape}, C {C.shape} are inconsistent")
        c = _frozen(np.zeros(n) if self.c is None else self.c, 1)
        d = _frozen(np.zeros(C.shape[0]) if self.d is None else self.d, 1)
        if c.shape[0] != n or d.shape[0] != C.shape[0]:
            raise InvalidPlantError("dims", "affine offsets have the wrong length")
        for name, val in zip("ABCcd", (A, B, C, c, d)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def is_controllable(self) -> bool:
        return numerical_rank(reachability_matrix(self.A, self.B, self.n - 1)) == self.n

    def is_observable(self) -> bool:
        return numerical_rank(observability_matrix(self.A, self.C, self.n)) == self.n

    def validate(self) -> None:
        """Raise :class:`InvalidPlantError` naming the first failed assumption."""
        if numerical_rank(self.B) != self.m:
            raise InvalidPlantError("ker-B", "B does not have full column rank")
        if numerical_rank(self.C) != self.p:
            raise InvalidPlantError("im-C", "C does not have full row rank")
        if not self.is_controllable():
            raise InvalidPlantError("controllability", "(A, B) is not controllable")
        if not self.is_observable():
            raise InvalidPlantError("observability", "(A, C) is not observable")

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u + self.c

    def output(self, x) -> np.ndarray:
        return self.C @ x + self.d


@dataclass(frozen=True)
class LiftedSystem:
    """Lifted triple ``(A, B, C)`` acting on ``x = (x_bar, 1)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    n: int = field(init=False)
    m: int = field(init=False)
    p: int = field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.atleast_2d(np.array(self.B, dtype=float))
        C = np.atleast_2d(np.array(self.C, dtype=float))
        n1 = A.shape[0]
        if A.shape != (n1, n1) or B.shape[0] != n1 or C.shape[1] != n1:
            raise InvalidPlantError(
                "dims", f"A {A.shape}, B {B.shape}, C {C.shape} are inconsistent")
        if not (is_lifted(A) and is_lifted(C)) or np.any(B[-1] != 0.0):
            raise InvalidPlantError("dims", "matrices lack the lifted last-row structure")
        for name, val in zip("ABC", (A, B, C)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "n", n1 - 1)
        object.__setattr__(self, "m", B.shape[1])
        object.__setattr__(self, "p", C.shape[0] - 1)

    def bare(self) -> BarePlant:
        n, p = self.n, self.p
        return BarePlant(self.A[:n, :n], self.B[:n], self.C[:p, :n],
                         self.A[:n, n], self.C[:p, n])

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u

    def output(self, x) -> np.ndarray:
        return self.C @ x

    def simulate(self, x0, inputs) -> tuple[np.ndarray, np.ndarray]:
        """States ``x_0..x_T`` and outputs ``y_0..y_T`` under ``inputs`` (T x m)."""
        inputs = np.atleast_2d(inputs)
        xs = [np.asarray(x0, dtype=float)]
        for u in inputs:
            xs.append(self.step(xs[-1], u))
        xs = np.array(xs)
        return xs, xs @ self.C.T

    def allclose(self, other: "LiftedSystem", atol: float = 1e-8) -> bool:
        return all(np.allclose(a, b, rtol=0.0, atol=atol)
                   for a, b in ((self.A, other.A), (self.B, other.B), (self.C, other.C)))


def lift_point(x_bar) -> np.ndarray:
    return np.append(np.asarray(x_bar, dtype=float), 1.0)


def lift_system(plant: BarePlant, validate: bool = True) -> LiftedSystem:
    if validate:
        plant.validate()
    B = np.vstack([plant.B, np.zeros((1, plant.m))])
    return LiftedSystem(lift_affine(plant.A, plant.c), B, lift_affine(plant.C, plant.d))


@dataclass(frozen=True)
class StructureReport:
    rank_increments: tuple[int, ...]
    controllability_indices: tuple[int, ...]
    is_brunovsky_form: bool


def rank_increments(A, B) -> tuple[int, ...]:
    """Nonzero increments ``rank S_{j-1} - rank S_{j-2}`` of the reachability matrices."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    ranks = [0] + [numerical_rank(reachability_matrix(A, B, j)) for j in range(n)]
    r = [ranks[j + 1] - ranks[j] for j in range(n)]
    return tuple(int(x) for x in r if x > 0)


def conjugate_partition(parts) -> tuple[int, ...]:
    parts = [int(x) for x in parts if x > 0]
    if not parts:
        return ()
    return tuple(sum(1 for x in parts if x >= i) for i in range(1, max(parts) + 1))


def _brunovsky_chains(plant: BarePlant) -> tuple[int, ...] | None:
    """Chain lengths if the plant is literally in shift-chain form, else None."""
    n, m, p = plant.n, plant.m, plant.p
    if p != m or np.any(plant.c != 0.0) or np.any(plant.d != 0.0):
        return None
    starts = []
    for row in plant.C:
        nz = np.flatnonzero(row)
        if nz.size != 1 or row[nz[0]] != 1.0:
            return None
        starts.append(int(nz[0]))
    if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
        return None
    kappa = tuple(b - a for a, b in zip(starts, starts[1:] + [n]))
    ref = make_prime(kappa)
    if np.array_equal(plant.A, ref.A) and np.array_equal(plant.B, ref.B):
        return kappa
    return None


def structure_report(plant: BarePlant) -> StructureReport:
    if not plant.is_controllable():
        raise InvalidPlantError("controllability", "(A, B) is not controllable")
    r = rank_increments(plant.A, plant.B)
    kappa = conjugate_partition(r)
    return StructureReport(r, kappa, _brunovsky_chains(plant) is not None)


def make_prime(kappa) -> BarePlant:
    """Parallel shift chains of lengths ``kappa``, each measured at its head."""
    kappa = [int(k) for k in kappa]
    if not kappa:
        raise ValueError("kappa must be non-empty")
    if min(kappa) < 1:
        raise ValueError("chain lengths must be at least 1")
    n, m = sum(kappa), len(kappa)
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    C = np.zeros((m, n))
    offset = 0
    for i, k in enumerate(kappa):
        for j in range(k - 1):
            A[offset + j, offset + j + 1] = 1.0
        B[offset + k - 1, i] = 1.0
        C[i, offset] = 1.0
        offset += k
    return BarePlant(A, B, C)


def random_plant(rng: np.random.Generator, n: int, m: int, p: int,
                 affine: bool = True, max_draws: int = 1000) -> BarePlant:
    """Uniform [-1, 1] entries, redrawn until every standing assumption holds."""
    for _ in range(max_draws):
        plant = BarePlant(
            rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (n, m)),
            rng.uniform(-1, 1, (p, n)),
            rng.uniform(-1, 1, n) if affine else None,
            rng.uniform(-1, 1, p) if affine else None)
        try:
            plant.validate()
        except InvalidPlantError:
            continue
        return plant
    raise RuntimeError("could not draw a valid plant")
