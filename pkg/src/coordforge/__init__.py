"""Stochastic coordinate descent for ridge regression: sequential, asynchronous and distributed."""

from .objective import (
    DualModel,
    PrimalModel,
    RidgeProblem,
    closed_form_solution,
    dual_objective,
    duality_gap_dual,
    duality_gap_primal,
    primal_objective,
)
from .sparse import Dataset, SparseMatrix, generate_synthetic, load_libsvm, parse_libsvm

__version__ = "0.1.0"
