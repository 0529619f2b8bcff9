"""Generalized Hamiltonian structures for Ermakov systems: Poisson
matrices, Casimir invariants, time integration and the orbit-equation
linearization, with a configuration-driven command line."""

from .expr import DomainError, EvalError, ParseError, QuadratureError, parse, to_text
from .integrate import Trajectory, drift, integrate
from .invariants import casimir_C1, casimir_C2, ermakov_invariant, spiral_radius
from .linearize import affinity_test, integrate_characteristic, to_orbit_curve
from .systems import Floors, PhaseState, SingularStateError, SystemSpec, vector_field

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "EvalError",
    "ParseError",
    "QuadratureError",
    "parse",
    "to_text",
    "Trajectory",
    "drift",
    "integrate",
    "casimir_C1",
    "casimir_C2",
    "ermakov_invariant",
    "spiral_radius",
    "affinity_test",
    "integrate_characteristic",
    "to_orbit_curve",
    "Floors",
    "PhaseState",
    "SingularStateError",
    "SystemSpec",
    "vector_field",
    "__version__",
]
