"""Fixed-budget performance regression and algorithm selection for modular CMA-ES."""

from .bench import ProblemId, ProblemInstance, make_problem, precision
from .errors import CatalogError, ParseError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "CatalogError",
    "ParseError",
    "ProblemId",
    "ProblemInstance",
    "ValidationError",
    "make_problem",
    "precision",
]
