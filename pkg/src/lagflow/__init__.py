"""Lagrangian flow-outs, glancing classification, and semiclassical evaluation."""

from lagflow.phase_space import (
    PhasePoint,
    ScalarField,
    HamiltonianModel,
    PolynomialField,
    hamilton_vector_field,
    flow,
    poisson_bracket,
    nested_bracket,
    make_hamiltonian,
)

__version__ = "0.1.0"
