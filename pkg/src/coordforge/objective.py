"""Ridge regression objectives, primal/dual maps and duality gaps.

Everything here accumulates in float64 regardless of the storage dtype of
the data, and is recomputed from the matrix on every call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .sparse import Dataset, SparseMatrix, squared_norms

PRIMAL = "primal"
DUAL = "dual"
FORMS = (PRIMAL, DUAL)

DEFAULT_ORACLE_CAP = 512


def consistency_tol(dtype) -> float:
    """Allowed ``||shared - A x||_inf`` drift for models stored in ``dtype``."""
    return 1e-10 if np.dtype(dtype) == np.float64 else 1e-4


def check_form(form: str) -> str:
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")
    return form


@dataclass(frozen=True, eq=False)
class RidgeProblem:
    """Immutable ridge problem ``min 1/2N ||A b - y||^2 + lam/2 ||b||^2``."""

    data: Dataset
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.data.n_examples < 1 or self.data.n_features < 1:
            raise ValueError("problem needs at least one example and one feature")

    @property
    def n(self) -> int:
        return self.data.n_examples

    @property
    def m(self) -> int:
        return self.data.n_features

    @property
    def y(self) -> np.ndarray:
        return self.data.labels

    @property
    def dtype(self):
        return self.data.matrix.dtype

    @cached_property
    def csr(self) -> SparseMatrix:
        return self.data.matrix.to_csr()

    @cached_property
    def csc(self) -> SparseMatrix:
        return self.data.matrix.to_csc()

    @cached_property
    def col_sqnorms(self) -> np.ndarray:
        return squared_norms(self.csc, "cols")

    @cached_property
    def row_sqnorms(self) -> np.ndarray:
        return squared_norms(self.csr, "rows")

    @cached_property
    def y64(self) -> np.ndarray:
        return self.y.astype(np.float64)

    def matvec(self, beta) -> np.ndarray:
        """A @ beta in float64."""
        beta = _vector(beta, self.m, "beta")
        c = self.csr
        return _kernels.compressed_rmatvec(c.indptr, c.indices, c.values, beta)

    def rmatvec(self, alpha) -> np.ndarray:
        """A.T @ alpha in float64."""
        alpha = _vector(alpha, self.n, "alpha")
        c = self.csc
        return _kernels.compressed_rmatvec(c.indptr, c.indices, c.values, alpha)


def _vector(x, size: int, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or len(x) != size:
        raise ValueError(f"{name} must be a vector of length {size}, got shape {x.shape}")
    return x


@dataclass(eq=False)
class PrimalModel:
    """Feature weights ``beta`` and the shared vector ``shared = A @ beta``."""

    beta: np.ndarray
    shared: np.ndarray

    form = PRIMAL

    @classmethod
    def zeros(cls, p: RidgeProblem, dtype=None) -> "PrimalModel":
        dtype = dtype or p.dtype
        return cls(np.zeros(p.m, dtype=dtype), np.zeros(p.n, dtype=dtype))

    @classmethod
    def from_weights(cls, p: RidgeProblem, beta) -> "PrimalModel":
        beta = np.array(_vector(beta, p.m, "beta"))
        return cls(beta, p.matvec(beta).astype(beta.dtype))

    @property
    def weights(self) -> np.ndarray:
        return self.beta

    def copy(self) -> "PrimalModel":
        return PrimalModel(self.beta.copy(), self.shared.copy())

    def consistency(self, p: RidgeProblem) -> float:
        return float(np.max(np.abs(self.shared - p.matvec(self.beta)), initial=0.0))


@dataclass(eq=False)
class DualModel:
    """Example weights ``alpha`` and the dual shared vector ``shared = A.T @ alpha``."""

    alpha: np.ndarray
    shared: np.ndarray

    form = DUAL

    @classmethod
    def zeros(cls, p: RidgeProblem, dtype=None) -> "DualModel":
        dtype = dtype or p.dtype
        return cls(np.zeros(p.n, dtype=dtype), np.zeros(p.m, dtype=dtype))

    @classmethod
    def from_weights(cls, p: RidgeProblem, alpha) -> "DualModel":
        alpha = np.array(_vector(alpha, p.n, "alpha"))
        return cls(alpha, p.rmatvec(alpha).astype(alpha.dtype))

    @property
    def weights(self) -> np.ndarray:
        return self.alpha

    def copy(self) -> "DualModel":
        return DualModel(self.alpha.copy(), self.shared.copy())

    def consistency(self, p: RidgeProblem) -> float:
        return float(np.max(np.abs(self.shared - p.rmatvec(self.alpha)), initial=0.0))


def zero_model(p: RidgeProblem, form: str, dtype=None):
    return PrimalModel.zeros(p, dtype) if check_form(form) == PRIMAL else DualModel.zeros(p, dtype)


def primal_objective(p: RidgeProblem, beta) -> float:
    beta = _vector(beta, p.m, "beta")
    return primal_objective_at(p, beta, p.matvec(beta))


def primal_objective_at(p: RidgeProblem, beta, w) -> float:
    """Primal objective taking ``w`` as given for ``A @ beta``."""
    beta = _vector(beta, p.m, "beta").astype(np.float64)
    r = _vector(w, p.n, "w").astype(np.float64) - p.y64
    return float(r @ r / (2.0 * p.n) + 0.5 * p.lam * (beta @ beta))


def dual_objective(p: RidgeProblem, alpha) -> float:
    alpha = _vector(alpha, p.n, "alpha")
    return dual_objective_at(p, alpha, p.rmatvec(alpha))


def dual_objective_at(p: RidgeProblem, alpha, wbar) -> float:
    alpha = _vector(alpha, p.n, "alpha").astype(np.float64)
    wbar = _vector(wbar, p.m, "wbar").astype(np.float64)
    return float(-0.5 * p.n * (alpha @ alpha) - (wbar @ wbar) / (2.0 * p.lam) + alpha @ p.y64)


def dual_to_primal_map(p: RidgeProblem, alpha) -> np.ndarray:
    return p.rmatvec(alpha) / p.lam


def primal_to_dual_map(p: RidgeProblem, beta) -> np.ndarray:
    return (p.y64 - p.matvec(beta)) / p.n


def primal_gradient(p: RidgeProblem, beta) -> np.ndarray:
    r = p.matvec(beta) - p.y64
    return p.rmatvec(r) / p.n + p.lam * np.asarray(beta, dtype=np.float64)


def dual_gradient(p: RidgeProblem, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    return -p.n * alpha - p.matvec(p.rmatvec(alpha)) / p.lam + p.y64


def duality_gap_primal(p: RidgeProblem, beta) -> float:
    return abs(primal_objective(p, beta) - dual_objective(p, primal_to_dual_map(p, beta)))


def duality_gap_dual(p: RidgeProblem, alpha) -> float:
    return abs(primal_objective(p, dual_to_primal_map(p, alpha)) - dual_objective(p, alpha))


def evaluate(p: RidgeProblem, weights, form: str) -> tuple[float, float, float]:
    """(primal objective, dual objective, gap) for the primal or dual iterate ``weights``."""
    if check_form(form) == PRIMAL:
        alpha = primal_to_dual_map(p, weights)
        primal, dual = primal_objective(p, weights), dual_objective(p, alpha)
    else:
        beta = dual_to_primal_map(p, weights)
        primal, dual = primal_objective(p, beta), dual_objective(p, weights)
    return primal, dual, abs(primal - dual)


def closed_form_solution(p: RidgeProblem, cap: int = DEFAULT_ORACLE_CAP) -> np.ndarray:
    """Exact minimizer ``(A.T A + N lam I)^-1 A.T y`` by a dense solve.

    Meant as a test oracle; refuses problems with more than ``cap`` features.
    """
    if p.m > cap:
        raise ValueError(f"closed form refused: {p.m} features exceeds cap {cap}")
    a = p.csr.toarray()
    gram = a.T @ a + p.n * p.lam * np.eye(p.m)
    return np.linalg.solve(gram, a.T @ p.y64)


def recompute_shared(p: RidgeProblem, model) -> None:
    """Overwrite the model's shared vector with the exact product (float64, then cast)."""
    if model.form == PRIMAL:
        model.shared[:] = p.matvec(model.beta)
    else:
        model.shared[:] = p.rmatvec(model.alpha)
