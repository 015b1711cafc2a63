"""Stabilize the level set ``D(x) = d`` of a vector field and verify the result."""
from .exterior import Multivector, hodge, norm_sq, vector_embed, vector_extract, wedge
from .flow import IntegratorOptions, Termination, Trajectory, bounded_orbit_probe, integrate
from .symexpr import DomainFault, ParseError, ScalarExpr, VectorFieldExpr, differentiate, evaluate, gradient, parse
from .synth import (
    Guards,
    NotInMrk,
    ProblemSpec,
    control_gram,
    control_hodge,
    lie_derivative,
    max_rank_check,
    perturbed_field,
    tangent_generators,
    theta,
)

__all__ = [
    "DomainFault", "Guards", "IntegratorOptions", "Multivector", "NotInMrk", "ParseError",
    "ProblemSpec", "ScalarExpr", "Termination", "Trajectory", "VectorFieldExpr",
    "bounded_orbit_probe", "control_gram", "control_hodge", "differentiate", "evaluate",
    "gradient", "hodge", "integrate", "lie_derivative", "max_rank_check", "norm_sq", "parse",
    "perturbed_field", "tangent_generators", "theta", "vector_embed", "vector_extract", "wedge",
]
