"""Asynchronous parallel SCD engines.

Three accumulation contracts for the shared vector:

* ``atomic`` -- tasks read the shared vector without synchronization, and
  their write-back is serialized so no contribution is ever lost.
* ``wild``   -- read-then-write with no synchronization at all; concurrent
  contributions may overwrite each other.
* ``tpa``    -- like ``atomic``, but each coordinate task splits its inner
  product over ``n_lanes`` strided lanes combined by a halving tree
  reduction, so the result does not depend on thread timing.

Coordinate tasks are handed out from the epoch permutation through a shared
cursor. The numba kernels release the GIL, so tasks genuinely interleave.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .objective import PRIMAL, RidgeProblem, check_form, recompute_shared, zero_model
from .sequential import CoordinateBlock, make_plan, problem_block, training_loop

ATOMIC = "atomic"
WILD = "wild"
TPA = "tpa"
VARIANTS = (ATOMIC, WILD, TPA)

_DEFAULT_RECOMPUTE = {ATOMIC: 0, WILD: 10, TPA: 0}


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


@dataclass
class AsyncConfig:
    variant: str = ATOMIC
    n_workers: int = 4
    n_lanes: int = 1
    shared_recompute_every: Optional[int] = None
    seed: int = 0
    n_epochs: int = 100
    form: str = PRIMAL
    gap_check_every: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        check_form(self.form)
        if self.n_workers < 1:
            raise ValueError("n_workers must be at least 1")
        if self.n_lanes < 1 or (self.variant == TPA and not _is_power_of_two(self.n_lanes)):
            raise ValueError("n_lanes must be a power of two")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be nonnegative")
        if self.shared_recompute_every is None:
            self.shared_recompute_every = _DEFAULT_RECOMPUTE[self.variant]


class _Cursor:
    """Hands out each entry of ``order`` to exactly one caller."""

    def __init__(self, order):
        self._order = order
        self._next = 0
        self._lock = threading.Lock()

    def take(self) -> Optional[int]:
        with self._lock:
            if self._next >= len(self._order):
                return None
            j = self._order[self._next]
            self._next += 1
        return int(j)


def _dispatch(order, n_workers: int, task) -> None:
    if n_workers == 1:
        for j in order:
            task(int(j))
        return
    cursor = _Cursor(order)
    errors: list[BaseException] = []

    def work():
        try:
            while (j := cursor.take()) is not None:
                task(j)
        except BaseException as exc:  # surfaced in the calling thread
            errors.append(exc)

    threads = [threading.Thread(target=work, daemon=True) for _ in range(n_workers)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]


def block_epoch_async(block: CoordinateBlock, weights, shared, order, variant: str,
                      n_workers: int, n_lanes: int = 1) -> np.ndarray:
    """Process every coordinate in ``order`` once with concurrent tasks.

    Returns the per-coordinate deltas (the contribution of each task).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    deltas = np.zeros(block.size)
    lock = threading.Lock()
    indptr, indices, values = block.indptr, block.indices, block.values

    def task(j):
        if variant == TPA:
            d = block.delta_lanes(weights, shared, j, n_lanes)
        else:
            d = block.delta(weights, shared, j)
        deltas[j] = d
        if variant == WILD:
            _kernels.apply_update(indptr, indices, values, weights, shared, j, d)
        else:
            with lock:
                _kernels.apply_update(indptr, indices, values, weights, shared, j, d)

    _dispatch(order, n_workers, task)
    return deltas


def tpa_coordinate_task(p: RidgeProblem, model, m: int, col_sqnorm: Optional[float] = None,
                        n_lanes: int = 1, lock: Optional[threading.Lock] = None) -> float:
    """One two-level coordinate task on a primal (or dual) model.

    The inner product is split over ``n_lanes`` lanes striding through the
    slice's nonzeros, reduced by halving, then written back under ``lock``.
    """
    if not _is_power_of_two(n_lanes):
        raise ValueError("n_lanes must be a power of two")
    block = problem_block(p, model.form)
    if not 0 <= m < block.size:
        raise ValueError(f"coordinate {m} out of range [0, {block.size})")
    if col_sqnorm is not None:
        sq = np.zeros(block.size)
        sq[m] = col_sqnorm
        block = CoordinateBlock(block.form, block.indptr, block.indices, block.values, sq,
                                block.targets, block.lam, block.n)
    d = block.delta_lanes(model.weights, model.shared, m, n_lanes)
    with lock or threading.Lock():
        _kernels.apply_update(block.indptr, block.indices, block.values,
                              model.weights, model.shared, m, d)
    return float(d)


def recompute_shared_vector(p: RidgeProblem, model):
    """Restore ``shared`` to the exact product of the data with the weights."""
    recompute_shared(p, model)
    return model


def run_epoch_async(p: RidgeProblem, model, config: AsyncConfig, epoch_index: int):
    if config.form != model.form:
        raise ValueError(f"{config.form} config on a {model.form} model")
    block = problem_block(p, config.form)
    plan = make_plan(block.size, config.seed, epoch_index)
    block_epoch_async(block, model.weights, model.shared, plan.permutation,
                      config.variant, config.n_workers, config.n_lanes)
    return model


def solve_async(p: RidgeProblem, config: AsyncConfig, model=None):
    """Run ``config.n_epochs`` asynchronous epochs; same return shape as ``sequential.solve``."""
    model = model if model is not None else zero_model(p, config.form)
    block = problem_block(p, config.form)

    def epoch(t):
        plan = make_plan(block.size, config.seed, t)
        block_epoch_async(block, model.weights, model.shared, plan.permutation,
                          config.variant, config.n_workers, config.n_lanes)

    return training_loop(p, model, config.form, config.n_epochs, config.gap_check_every,
                         config.shared_recompute_every, epoch)
