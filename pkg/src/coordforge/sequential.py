"""Exact sequential stochastic coordinate descent for the primal and dual forms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .metrics import EpochMetrics, MetricsRecorder, Stopwatch
from .objective import (
    PRIMAL,
    DualModel,
    PrimalModel,
    RidgeProblem,
    check_form,
    recompute_shared,
    zero_model,
)


@dataclass(frozen=True, eq=False)
class CoordinateBlock:
    """The slice of a problem one engine iterates over.

    Arrays are compressed along the coordinate axis: columns (CSC) for the
    primal, rows (CSR) for the dual. ``targets`` is the full label vector for
    the primal (indexed by the shared axis) and the labels of the block's own
    examples for the dual. ``n`` is always the global number of examples.
    """

    form: str
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    sqnorms: np.ndarray
    targets: np.ndarray
    lam: float
    n: int

    @property
    def size(self) -> int:
        return len(self.indptr) - 1

    @property
    def lam_n(self) -> float:
        return self.lam * self.n

    def delta(self, weights, shared, j: int) -> float:
        if self.form == PRIMAL:
            return _kernels.primal_delta(self.indptr, self.indices, self.values, self.targets,
                                         shared, weights, self.sqnorms, j, self.lam_n)
        return _kernels.dual_delta(self.indptr, self.indices, self.values, self.targets,
                                   shared, weights, self.sqnorms, j, self.lam, self.lam_n)

    def delta_lanes(self, weights, shared, j: int, n_lanes: int) -> float:
        if self.form == PRIMAL:
            return _kernels.primal_delta_lanes(self.indptr, self.indices, self.values,
                                               self.targets, shared, weights, self.sqnorms,
                                               j, self.lam_n, n_lanes)
        return _kernels.dual_delta_lanes(self.indptr, self.indices, self.values, self.targets,
                                         shared, weights, self.sqnorms, j, self.lam,
                                         self.lam_n, n_lanes)

    def scatter(self, shared, j: int, delta: float) -> None:
        _kernels.scatter_add(self.indptr, self.indices, self.values, shared, j, delta)

    def epoch(self, weights, shared, order) -> np.ndarray:
        """One sequential pass in ``order``; returns the per-coordinate deltas."""
        deltas = np.zeros(self.size)
        if self.form == PRIMAL:
            _kernels.primal_epoch(self.indptr, self.indices, self.values, self.targets,
                                  shared, weights, self.sqnorms, order, self.lam_n, deltas)
        else:
            _kernels.dual_epoch(self.indptr, self.indices, self.values, self.targets,
                                shared, weights, self.sqnorms, order, self.lam, self.lam_n,
                                deltas)
        return deltas


def problem_block(p: RidgeProblem, form: str) -> CoordinateBlock:
    if check_form(form) == PRIMAL:
        m, sq = p.csc, p.col_sqnorms
    else:
        m, sq = p.csr, p.row_sqnorms
    return CoordinateBlock(form, m.indptr, m.indices, m.values, sq, p.y, float(p.lam), p.n)


@dataclass(frozen=True)
class EpochPlan:
    permutation: np.ndarray
    seed: int
    epoch_index: int


def make_plan(count: int, seed: int, epoch_index: int) -> EpochPlan:
    """Permutation for one epoch, drawn from a stream keyed by ``(seed, epoch_index)``."""
    if seed < 0 or epoch_index < 0:
        raise ValueError("seed and epoch index must be nonnegative")
    rng = np.random.default_rng([seed, epoch_index])
    return EpochPlan(rng.permutation(count).astype(np.int64), seed, epoch_index)


@dataclass
class SolverConfig:
    n_epochs: int = 100
    seed: int = 0
    form: str = PRIMAL
    gap_check_every: int = 1
    shared_recompute_every: int = 0

    def __post_init__(self):
        check_form(self.form)
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be nonnegative")
        if self.shared_recompute_every < 0:
            raise ValueError("shared_recompute_every must be nonnegative")


def _check_coordinate(j: int, count: int) -> int:
    if not 0 <= j < count:
        raise ValueError(f"coordinate {j} out of range [0, {count})")
    return int(j)


def primal_coordinate_update(p: RidgeProblem, model: PrimalModel, m: int,
                             col_sqnorm: Optional[float] = None) -> float:
    """Exactly minimize the primal along feature ``m``; updates ``model`` in place.

    ``col_sqnorm`` defaults to the precomputed squared norm of column ``m``.
    """
    m = _check_coordinate(m, p.m)
    c = p.csc
    sq = p.col_sqnorms if col_sqnorm is None else _single(p.m, m, col_sqnorm)
    d = _kernels.primal_delta(c.indptr, c.indices, c.values, p.y, model.shared, model.beta,
                              sq, m, p.lam * p.n)
    model.beta[m] = model.beta[m] + d
    _kernels.scatter_add(c.indptr, c.indices, c.values, model.shared, m, d)
    return float(d)


def dual_coordinate_update(p: RidgeProblem, model: DualModel, n: int,
                           row_sqnorm: Optional[float] = None) -> float:
    """Exactly maximize the dual along example ``n``; updates ``model`` in place."""
    n = _check_coordinate(n, p.n)
    c = p.csr
    sq = p.row_sqnorms if row_sqnorm is None else _single(p.n, n, row_sqnorm)
    d = _kernels.dual_delta(c.indptr, c.indices, c.values, p.y, model.shared, model.alpha,
                            sq, n, float(p.lam), p.lam * p.n)
    model.alpha[n] = model.alpha[n] + d
    _kernels.scatter_add(c.indptr, c.indices, c.values, model.shared, n, d)
    return float(d)


def _single(size, j, value):
    sq = np.zeros(size)
    sq[j] = value
    return sq


def run_epoch(p: RidgeProblem, model, plan: EpochPlan, form: Optional[str] = None):
    """Update every coordinate once, in plan order."""
    form = check_form(form or model.form)
    if form != model.form:
        raise ValueError(f"{form} epoch on a {model.form} model")
    block = problem_block(p, form)
    if len(plan.permutation) != block.size:
        raise ValueError("plan does not cover the coordinates of this form")
    block.epoch(model.weights, model.shared, plan.permutation)
    return model


def training_loop(p: RidgeProblem, model, form: str, n_epochs: int, gap_check_every: int,
                  recompute_every: int, epoch_fn) -> tuple[object, list[EpochMetrics]]:
    """Shared driver: runs ``epoch_fn(t)`` for t = 1..n_epochs and records metrics."""
    recorder = MetricsRecorder(p, form, gap_check_every)
    recorder.record(0, model.weights)
    for t in range(1, n_epochs + 1):
        clock = Stopwatch()
        epoch_fn(t)
        if recompute_every and t % recompute_every == 0:
            recompute_shared(p, model)
        dt = clock.lap()
        recorder.add_time(dt)
        if recorder.due(t, n_epochs):
            recorder.record(t, model.weights, t_compute_s=dt)
    return model, recorder.records


def solve(p: RidgeProblem, config: SolverConfig, model=None):
    """Run sequential SCD from ``model`` (zeros by default).

    Returns the model and the list of :class:`EpochMetrics`, which always
    includes the starting point and the final epoch.
    """
    model = model if model is not None else zero_model(p, config.form)
    block = problem_block(p, config.form)

    def epoch(t):
        plan = make_plan(block.size, config.seed, t)
        block.epoch(model.weights, model.shared, plan.permutation)

    return training_loop(p, model, config.form, config.n_epochs, config.gap_check_every,
                         config.shared_recompute_every, epoch)
