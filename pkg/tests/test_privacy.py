import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cloak.group import stabilizer_subspace
from cloak.instances import demo_instance, demo_plant, random_instance
from cloak.objective import ControlObjective, make_box_input_constraints, make_box_state_constraints
from cloak.privacy import (
    PrivacyReport,
    certify_trivial_stabilizer,
    dim_group,
    dim_pair_formula,
    dim_prime_formula,
    scenario1_lower_bound,
    stabilizer_omega_dim,
    uncertainty_dimension,
)
from cloak.sysmodel import InvalidPlantError, lift_system, make_prime, random_plant
from oracles import stabilizer_dim_exact, stabilizer_omega_dim_float

# (kappa, pair stabilizer, system stabilizer, scenario-1 bound, group dim),
# the stabilizer dimensions from exact rational nullity
FROZEN = [
    ((1,), 2, 2, 5, 7),
    ((2,), 2, 2, 10, 12),
    ((1, 1), 6, 6, 16, 22),
    ((3,), 2, 2, 17, 19),
    ((2, 1), 6, 5, 24, 30),
    ((1, 1, 1), 12, 12, 33, 45),
    ((3, 1), 7, 5, 33, 40),
    ((2, 2), 6, 6, 34, 40),
    ((4, 2, 1), 15, 9, 86, 101),
    ((3, 3), 6, 6, 60, 66),
]


@pytest.mark.parametrize("kappa,pair,sys_dim,bound,group", FROZEN)
def test_frozen_dimensions(kappa, pair, sys_dim, bound, group):
    plant = make_prime(kappa)
    n, m = plant.n, plant.m
    assert dim_pair_formula(plant) == pair
    assert dim_prime_formula(plant) == sys_dim
    assert scenario1_lower_bound(plant) == bound
    assert dim_group(n, m, m) == group


@pytest.mark.parametrize("kappa", [(2,), (2, 1), (3, 1)])
def test_frozen_values_agree_with_exact_oracle(kappa):
    row = next(r for r in FROZEN if r[0] == kappa)
    sys = lift_system(make_prime(kappa))
    assert stabilizer_dim_exact(sys, False) == row[1]
    assert stabilizer_dim_exact(sys, True) == row[2]


def test_double_integrator_pair_dimension():
    # single input, n = 2: only the constant rank increments (1, 1) enter
    plant = demo_plant()
    assert dim_pair_formula(plant) == 1 * 3 - 1
    assert scenario1_lower_bound(plant) == 6 + 1 + 2 + 1


def test_prime_formula_requires_brunovsky_form(rng):
    with pytest.raises(InvalidPlantError):
        dim_prime_formula(random_plant(rng, 3, 1, 1))


@given(st.integers(0, 2**32 - 1))
def test_pair_formula_matches_nullity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    m = int(rng.integers(1, min(n, 3) + 1))
    plant = random_plant(rng, n, m, 1)
    assert dim_pair_formula(plant) == stabilizer_subspace(lift_system(plant), False).dim


def test_certify_trivial_stabilizer():
    D_state = make_box_state_constraints([-1.0, -1.0], [1.0, 1.0], 1)
    D_input = make_box_input_constraints([-1.0], [1.0], 2)
    assert certify_trivial_stabilizer(D_state, 2)
    assert not certify_trivial_stabilizer(D_input, 2)
    assert not certify_trivial_stabilizer(D_state[:2], 2)
    assert not certify_trivial_stabilizer(np.zeros((0, 4)), 2)


@pytest.mark.parametrize("kappa", [(2, 1), (3, 1), (2, 2), (1, 1)])
def test_omega_dimension_matches_oracle(kappa):
    plant = make_prime(kappa)
    sys = lift_system(plant)
    n, m = plant.n, plant.m
    half_state = np.hstack([np.eye(1, n), [[0.5]], np.zeros((1, m))])
    for D in (make_box_input_constraints(-np.ones(m), np.ones(m), n), half_state,
              np.zeros((0, n + 1 + m))):
        assert stabilizer_omega_dim(sys, D) == stabilizer_omega_dim_float(sys, D)


def test_omega_with_cost_is_smaller():
    plant = make_prime((2, 1))
    sys = lift_system(plant)
    D = np.zeros((0, 6))
    inst = random_instance(np.random.default_rng(0), 3, 2, 2, N=2, constrained=False)
    obj = ControlObjective(np.eye(6), inst.objective.x_ref, inst.objective.u_ref, None, 2)
    assert stabilizer_omega_dim(sys, D, obj) <= stabilizer_omega_dim(sys, D)


def test_demo_scenario_dimensions():
    inst = demo_instance()
    plant, D = demo_plant(), inst.objective.D
    dims = {s: uncertainty_dimension(s, plant, D) for s in (1, 2, 3)}
    assert [dims[s].uncertainty_dim for s in (1, 2, 3)] == [12, 8, 2]
    for r in dims.values():
        assert r.dim_stabilizer_omega == 0
        assert r.formula_matches_oracle
        assert r.scenario1_lower_bound == 10


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_side_knowledge_degrades_by_one(scenario):
    inst = demo_instance()
    base = uncertainty_dimension(scenario, demo_plant(), inst.objective.D).uncertainty_dim
    for k in range(base + 1):
        r = uncertainty_dimension(scenario, demo_plant(), inst.objective.D, side_k=k)
        assert r.uncertainty_dim == base - k
    with pytest.raises(ValueError):
        uncertainty_dimension(scenario, demo_plant(), inst.objective.D, side_k=base + 1)


def test_bad_arguments():
    with pytest.raises(ValueError):
        uncertainty_dimension(4, demo_plant())
    with pytest.raises(ValueError):
        uncertainty_dimension(1, demo_plant(), side_k=-1)
    with pytest.raises(ValueError):
        dim_group(0, 1, 1)


def test_report_nesting_enforced():
    with pytest.raises(AssertionError):
        PrivacyReport(1, 12, 2, 3, 0, 12, 0, 10, 2)


def test_report_serialization():
    r = uncertainty_dimension(2, demo_plant())
    d = r.to_dict()
    assert d["formula_matches_oracle"] is True
    assert "uncertainty_dim" in r.table()
