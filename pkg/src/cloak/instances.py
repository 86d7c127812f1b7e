"""Problem instances (system + objective + initial state) and generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .group import Isomorphism, act_on_system
from .objective import (
    ControlObjective,
    make_box_input_constraints,
    make_box_state_constraints,
    transform_objective,
)
from .sysmodel import BarePlant, LiftedSystem, lift_point, lift_system, random_plant


@dataclass(frozen=True)
class ProblemInstance:
    system: LiftedSystem
    objective: ControlObjective
    x0: np.ndarray

    def __post_init__(self):
        s, o = self.system, self.objective
        if (s.n, s.m) != (o.n, o.m):
            raise ValueError(f"system dims {(s.n, s.m)} differ from objective dims {(o.n, o.m)}")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if x0.shape[0] != s.n + 1 or x0[-1] != 1.0:
            raise ValueError("x0 must be a lifted state ending in 1")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.system.n, self.system.m, self.system.p


def transform_instance(psi: Isomorphism, inst: ProblemInstance) -> ProblemInstance:
    """The encoded instance ``psi_* Omega``."""
    x0 = psi.P @ inst.x0
    x0[-1] = 1.0
    return ProblemInstance(act_on_system(psi, inst.system),
                           transform_objective(psi, inst.objective), x0)


def random_cost(rng, n: int, m: int, spread: float = 1.0) -> np.ndarray:
    k = n + m + 1
    A = rng.uniform(-spread, spread, (k, k))
    return A @ A.T / k + 0.5 * np.eye(k)


def random_stable_plant(rng, n: int, m: int, p: int, radius: float = 0.95) -> BarePlant:
    """Valid plant rescaled so the spectral radius of ``A`` is at most ``radius``."""
    pl = random_plant(rng, n, m, p)
    rho = max(abs(np.linalg.eigvals(pl.A)))
    if rho > radius:
        pl = BarePlant(pl.A * (radius / rho), pl.B, pl.C, pl.c, pl.d)
    pl.validate()
    return pl


def random_instance(rng, n: int, m: int, p: int, N: int, constrained: bool = True,
                    tightness: float = 0.3, state_tightness: float | None = None) -> ProblemInstance:
    """Random feasible tracking problem.

    The box constraints enclose the trajectory of a random input sequence
    (so the problem is feasible) but are tight enough that some of them bind
    at the optimum for typical references. Closed-loop runs want a looser
    ``state_tightness``: a receding horizon has no terminal constraint, so a
    tight state box can become infeasible a few steps in.
    """
    if state_tightness is None:
        state_tightness = tightness
    plant = random_stable_plant(rng, n, m, p)
    sys = lift_system(plant)
    x0 = lift_point(rng.uniform(-1, 1, n))
    x_ref = np.tile(lift_point(rng.uniform(-2, 2, n)), (N + 1, 1))
    u_ref = np.tile(rng.uniform(-1, 1, m), (N + 1, 1))
    D = None
    if constrained:
        U = rng.uniform(-0.5, 0.5, (N + 1, m))
        xs, _ = sys.simulate(x0, U[:N])
        xb = xs[:, :n]
        pad_x = state_tightness * (xb.max(0) - xb.min(0)) + 0.05
        pad_u = tightness * (U.max(0) - U.min(0)) + 0.05
        D = np.vstack([
            make_box_state_constraints(xb.min(0) - pad_x, xb.max(0) + pad_x, m),
            make_box_input_constraints(U.min(0) - pad_u, U.max(0) + pad_u, n),
        ])
    obj = ControlObjective(random_cost(rng, n, m), x_ref, u_ref, D, N)
    return ProblemInstance(sys, obj, x0)


# -- shipped demo ---------------------------------------------------------------

DEMO_DT = 0.2
DEMO_HORIZON = 10
DEMO_STEPS = 30


def demo_plant(dt: float = DEMO_DT) -> BarePlant:
    """Double integrator (position, velocity) with the position measured."""
    return BarePlant([[1.0, dt], [0.0, 1.0]], [[0.5 * dt * dt], [dt]], [[1.0, 0.0]])


def demo_instance(N: int = DEMO_HORIZON) -> ProblemInstance:
    """Move from rest at 0 to rest at 1 under position, speed and force limits."""
    plant = demo_plant()
    sys = lift_system(plant)
    x_ref = np.tile([1.0, 0.0, 1.0], (N + 1, 1))
    u_ref = np.zeros((N + 1, 1))
    M = np.diag([10.0, 1.0, 1.0, 0.1])
    D = np.vstack([
        make_box_state_constraints([-0.5, -0.6], [1.2, 0.6], 1),
        make_box_input_constraints([-1.0], [1.0], 2),
    ])
    return ProblemInstance(sys, ControlObjective(M, x_ref, u_ref, D, N), lift_point([0.0, 0.0]))
