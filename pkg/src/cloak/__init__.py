"""Private model predictive control over an untrusted cloud.

The plant hides its model, cost and constraints behind a secret change of
state, input and output coordinates; the cloud solves the disguised problem
and the plant decodes the answer.
"""
from .group import Isomorphism, act_on_system, compose, identity, inverse, sample_isomorphism
from .instances import ProblemInstance, demo_instance, transform_instance
from .objective import ControlObjective, transform_objective
from .privacy import PrivacyReport, uncertainty_dimension
from .protocol import Transcript, indistinguishable, run_direct, run_session
from .sysmodel import BarePlant, LiftedSystem, lift_system

__version__ = "0.1.0"

__all__ = [
    "BarePlant", "ControlObjective", "Isomorphism", "LiftedSystem", "PrivacyReport",
    "ProblemInstance", "Transcript", "act_on_system", "compose", "demo_instance",
    "identity", "indistinguishable", "inverse", "lift_system", "run_direct", "run_session",
    "sample_isomorphism", "transform_instance", "transform_objective", "uncertainty_dimension",
]
