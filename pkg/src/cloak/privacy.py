"""How much the cloud cannot tell apart: dimensions of the uncertainty sets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .group import operator_scale, stabilizer_subspace, symmetry_generator
from .linalg import RANK_EPS, nullspace, numerical_rank
from .objective import ControlObjective, state_block
from .sysmodel import BarePlant, InvalidPlantError, LiftedSystem, lift_system, structure_report

SCENARIOS = (1, 2, 3)


def dim_group(n: int, m: int, p: int) -> int:
    """Free parameters of ``(P, F, G, S)``: lifted ``P`` and ``S``, full ``F`` and ``G``."""
    if min(n, m, p) < 1:
        raise ValueError("dimensions must be positive")
    return n * (n + 1) + m * (n + 1) + m * m + p * (p + 1)


def _pair_sum(r) -> int:
    return sum(a * b for a, b in zip(r, r[1:]))


def dim_pair_formula(plant: BarePlant) -> int:
    """Dimension of the stabilizer of ``(A, B)`` from the rank increments.

    Computed two ways, ``m(n+1) - sum r_{i-1} r_i`` and
    ``mn - sum_i sum_{j<kappa_i} r_j + m``, which must agree. The sum runs
    over every nonzero increment.
    """
    rep = structure_report(plant)
    n, m = plant.n, plant.m
    r, kappa = rep.rank_increments, rep.controllability_indices
    first = m * (n + 1) - _pair_sum(r)
    second = m * n - sum(sum(r[:k - 1]) for k in kappa) + m
    if first != second:
        raise AssertionError(f"dimension expressions disagree: {first} != {second}")
    return first


def dim_prime_formula(plant: BarePlant) -> int:
    """``sum_i r_{kappa_i} + m`` for a plant in Brunovsky form."""
    rep = structure_report(plant)
    if not rep.is_brunovsky_form:
        raise InvalidPlantError("dims", "plant is not in Brunovsky form")
    r = rep.rank_increments
    return sum(r[k - 1] for k in rep.controllability_indices) + plant.m


def scenario1_lower_bound(plant: BarePlant) -> int:
    n, m, p = plant.n, plant.m, plant.p
    r = structure_report(plant).rank_increments
    return n * (n + 1) + m * m + p * (p + 1) + _pair_sum(r)


def certify_trivial_stabilizer(D, n: int) -> bool:
    """True when the input-free constraint rows pin the whole lifted state."""
    block = state_block(D, n)
    return block.size > 0 and numerical_rank(block) == n + 1


def _joint_generator(sys: LiftedSystem, Q) -> np.ndarray:
    """Tangent of the joint map ``L = [[P, 0], [F, G]]`` along ``Q``."""
    dP, dF, dG, _ = symmetry_generator(sys, Q)
    n1, m = sys.n + 1, sys.m
    lam = np.zeros((n1 + m, n1 + m))
    lam[:n1, :n1] = dP
    lam[n1:, :n1] = dF
    lam[n1:, n1:] = dG
    return lam


def stabilizer_omega_dim(sys: LiftedSystem, D, objective: ControlObjective | None = None,
                         eps: float = RANK_EPS) -> int:
    """Numerical dimension of the isomorphisms fixing the system and constraints.

    Starts from the symmetries of the system and adds ``D L = D``. When an
    objective is given, invariance of ``M`` and of the references is added
    too, which gives the full stabilizer of the problem instead of an upper
    bound on its dimension.
    """
    sub = stabilizer_subspace(sys, with_output=True, eps=eps)
    if sub.dim == 0:
        return 0
    D = np.atleast_2d(np.asarray(D, dtype=float))
    cols = []
    for Q in sub.basis:
        lam = _joint_generator(sys, Q)
        parts = [(D @ lam).ravel()] if D.size else []
        if objective is not None:
            M = objective.M
            parts.append((lam.T @ M + M @ lam).ravel())
            eta = np.hstack([objective.x_ref, objective.u_ref])
            parts.append((eta @ lam.T).ravel())
        cols.append(np.concatenate(parts) if parts else np.zeros(0))
    if cols[0].size == 0:
        return sub.dim
    K = np.column_stack(cols)
    scale = operator_scale(sys) * max(1.0, float(np.abs(K).max()))
    return int(nullspace(K, eps=eps, scale=scale).shape[1])


@dataclass
class PrivacyReport:
    scenario: int
    dim_group: int
    dim_stabilizer_pair: int
    dim_stabilizer_sys: int
    dim_stabilizer_omega: int
    uncertainty_dim: int
    side_knowledge_k: int
    scenario1_lower_bound: int
    dim_pair_oracle: int
    dim_prime: int | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.dim_stabilizer_omega <= self.dim_stabilizer_sys <= self.dim_stabilizer_pair:
            raise AssertionError("stabilizer dimensions are not nested")
        if self.uncertainty_dim < 0:
            raise AssertionError("negative uncertainty dimension")

    @property
    def formula_matches_oracle(self) -> bool:
        return self.dim_stabilizer_pair == self.dim_pair_oracle

    def to_dict(self) -> dict:
        d = asdict(self)
        d["formula_matches_oracle"] = self.formula_matches_oracle
        return d

    def table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items() if k != "notes"]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v}" for k, v in rows]
        lines += [f"note: {s}" for s in self.notes]
        return "\n".join(lines)


def scenario_group_dim(scenario: int, n: int, m: int, p: int, dim_sys: int) -> int:
    if scenario == 1:
        return dim_group(n, m, p)
    if scenario == 2:
        return dim_sys + n * (n + 1)
    if scenario == 3:
        return dim_sys
    raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")


def uncertainty_dimension(scenario: int, plant: BarePlant, D=None, side_k: int = 0,
                          objective: ControlObjective | None = None) -> PrivacyReport:
    """Dimension of the set of problems the cloud cannot tell apart from the true one.

    ``side_k`` is the rank of whatever side knowledge the cloud has; only its
    rank matters, so no specific side-knowledge map is modelled.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")
    if side_k < 0:
        raise ValueError("side_k must be non-negative")
    sys = lift_system(plant)
    n, m, p = plant.n, plant.m, plant.p
    if D is None:
        D = np.zeros((0, n + 1 + m))
    notes = []
    pair = dim_pair_formula(plant)
    pair_oracle = stabilizer_subspace(sys, with_output=False).dim
    dim_sys = stabilizer_subspace(sys, with_output=True).dim
    if certify_trivial_stabilizer(D, n):
        dim_omega = 0
        notes.append("constraints pin the lifted state: only the identity fixes the problem")
    else:
        dim_omega = stabilizer_omega_dim(sys, D, objective)
        what = "system, constraints and cost" if objective is not None else "system and constraints"
        notes.append(f"stabilizer dimension computed numerically from invariance of {what}")
    try:
        prime = dim_prime_formula(plant)
    except InvalidPlantError:
        prime = None
    group = scenario_group_dim(scenario, n, m, p, dim_sys)
    base = group - dim_omega
    if side_k > base:
        raise ValueError(f"side_k={side_k} exceeds the uncertainty dimension {base}")
    if pair != pair_oracle:
        notes.append(f"pair formula {pair} differs from numerical nullity {pair_oracle}")
    return PrivacyReport(scenario, dim_group(n, m, p), pair, dim_sys, dim_omega,
                         base - side_k, side_k, scenario1_lower_bound(plant),
                         pair_oracle, prime, notes)
