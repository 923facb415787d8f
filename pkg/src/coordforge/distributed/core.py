"""Synchronous distributed SCD with averaging or exact adaptive aggregation.

Primal runs partition features across workers, dual runs partition examples.
Each round every worker runs one local epoch against the last broadcast
shared vector; the master sums the shared-vector deltas, picks the
aggregation parameter ``gamma`` and broadcasts the new shared vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..asynchronous import VARIANTS, block_epoch_async
from ..metrics import EpochMetrics, Stopwatch
from ..objective import (
    PRIMAL,
    DualModel,
    PrimalModel,
    RidgeProblem,
    check_form,
    evaluate,
)
from ..sparse import Partition, make_partition
from ..sequential import CoordinateBlock, make_plan
from .wire import ProtocolError

AVERAGE = "average"
ADAPTIVE = "adaptive"
MODES = (AVERAGE, ADAPTIVE)

SEQ = "seq"
LOCAL_SOLVERS = (SEQ,) + VARIANTS


@dataclass
class WorkerUpdate:
    epoch: int
    worker_id: int
    delta_shared: np.ndarray
    cross_term: float
    delta_sqnorm: float
    label_term: float = 0.0


@dataclass
class RoundRecord:
    epoch: int
    gamma: Optional[float]
    primal_obj: float
    dual_obj: float
    gap: float
    elapsed_s: float = 0.0
    t_compute_s: float = 0.0
    t_transport_s: float = 0.0
    t_aggregate_s: float = 0.0

    def to_metrics(self) -> EpochMetrics:
        return EpochMetrics(self.epoch, self.elapsed_s, self.primal_obj, self.dual_obj,
                            self.gap, self.gamma, self.t_compute_s, self.t_aggregate_s,
                            self.t_transport_s)


@dataclass
class DistributedConfig:
    n_epochs: int = 100
    seed: int = 0
    form: str = PRIMAL
    mode: str = AVERAGE
    local_solver: str = SEQ
    n_workers: int = 1
    n_lanes: int = 1
    gap_check_every: int = 1
    partition_seed: Optional[int] = None

    def __post_init__(self):
        check_form(self.form)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.local_solver not in LOCAL_SOLVERS:
            raise ValueError(f"local solver must be one of {LOCAL_SOLVERS}")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be nonnegative")
        if self.gap_check_every < 1:
            raise ValueError("gap_check_every must be at least 1")
        if self.partition_seed is None:
            self.partition_seed = self.seed


@dataclass(eq=False)
class WorkerState:
    """One worker's shard, its slice of the model and its copy of the shared vector."""

    worker_id: int
    coords: np.ndarray
    block: CoordinateBlock
    weights: np.ndarray
    shared: np.ndarray
    n_coords_total: int
    local_solver: str = SEQ
    n_workers: int = 1
    n_lanes: int = 1
    # base weights and deltas of the round awaiting a broadcast
    _pending: Optional[tuple] = field(default=None, repr=False)

    @property
    def form(self) -> str:
        return self.block.form

    def local_order(self, seed: int, epoch: int) -> np.ndarray:
        """Owned coordinates in the order they appear in the epoch's global permutation."""
        perm = make_plan(self.n_coords_total, seed, epoch).permutation
        mine = perm[np.isin(perm, self.coords, assume_unique=True)]
        return np.searchsorted(self.coords, mine).astype(np.int64)

    def apply_broadcast(self, shared, gamma: float) -> None:
        """Adopt the master's shared vector and rescale the last local step by ``gamma``."""
        if len(shared) != len(self.shared):
            raise ProtocolError("broadcast vector has the wrong length")
        if self._pending is not None:
            base, deltas = self._pending
            self.weights[:] = base + gamma * deltas
            self._pending = None
        self.shared[:] = shared


def make_worker(p: RidgeProblem, partition: Partition, worker_id: int, form: str,
                local_solver: str = SEQ, n_workers: int = 1, n_lanes: int = 1,
                dtype=None) -> WorkerState:
    dtype = dtype or p.dtype
    coords = np.asarray(partition.blocks[worker_id], dtype=np.int64)
    if check_form(form) == PRIMAL:
        shard = p.csc.select(coords)
        sq, targets, n_shared = p.col_sqnorms[coords], p.y, p.n
    else:
        shard = p.csr.select(coords)
        sq, targets, n_shared = p.row_sqnorms[coords], p.y[coords], p.m
    if partition.count != (p.m if form == PRIMAL else p.n):
        raise ValueError("partition does not match the coordinates of this form")
    block = CoordinateBlock(form, shard.indptr, shard.indices, shard.values, sq,
                            np.ascontiguousarray(targets), float(p.lam), p.n)
    return WorkerState(worker_id, coords, block, np.zeros(len(coords), dtype=dtype),
                       np.zeros(n_shared, dtype=dtype), partition.count,
                       local_solver, n_workers, n_lanes)


def worker_epoch(state: WorkerState, seed: int, epoch: int) -> WorkerUpdate:
    """One local pass over the worker's coordinates; the result awaits a broadcast."""
    if state._pending is not None:
        raise ProtocolError(f"worker {state.worker_id} has an unacknowledged round")
    base_weights = state.weights.astype(np.float64)
    base_shared = state.shared.astype(np.float64)
    order = state.local_order(seed, epoch)
    if state.local_solver == SEQ:
        deltas = state.block.epoch(state.weights, state.shared, order)
    else:
        deltas = block_epoch_async(state.block, state.weights, state.shared, order,
                                   state.local_solver, state.n_workers, state.n_lanes)
    state._pending = (base_weights, deltas)
    label = float(deltas @ state.block.targets.astype(np.float64)) if state.form != PRIMAL else 0.0
    return WorkerUpdate(
        epoch=epoch,
        worker_id=state.worker_id,
        delta_shared=state.shared.astype(np.float64) - base_shared,
        cross_term=float(base_weights @ deltas),
        delta_sqnorm=float(deltas @ deltas),
        label_term=label,
    )


def optimal_gamma_primal(w, y, lam: float, n: int, delta_w, cross_term: float,
                         delta_sqnorm: float) -> float:
    """Exact minimizer over gamma of the primal objective along the aggregated step.

    ``w`` is the shared vector at the base point, ``cross_term`` is
    ``<beta, delta_beta>`` and ``delta_sqnorm`` is ``||delta_beta||^2``.
    Returns 0 for an all-zero step.
    """
    w = np.asarray(w, dtype=np.float64)
    dw = np.asarray(delta_w, dtype=np.float64)
    lam_n = lam * n
    denom = dw @ dw + lam_n * delta_sqnorm
    if denom <= 0.0:
        return 0.0
    num = (w - np.asarray(y, dtype=np.float64)) @ dw + lam_n * cross_term
    return float(-num / denom)


def optimal_gamma_dual(wbar, lam: float, n: int, delta_wbar, label_term: float,
                       cross_term: float, delta_sqnorm: float) -> float:
    """Exact maximizer over gamma of the dual objective along the aggregated step.

    ``label_term`` is ``<delta_alpha, y>``, ``cross_term`` is
    ``<delta_alpha, alpha>`` and ``delta_sqnorm`` is ``||delta_alpha||^2``.
    """
    wbar = np.asarray(wbar, dtype=np.float64)
    dw = np.asarray(delta_wbar, dtype=np.float64)
    denom = (dw @ dw) / lam + n * delta_sqnorm
    if denom <= 0.0:
        return 0.0
    num = label_term - n * cross_term - (dw @ wbar) / lam
    return float(num / denom)


def check_round(updates, k: int, epoch: int, length: int) -> list[WorkerUpdate]:
    """Validate one round's updates and return them ordered by worker id."""
    by_id: dict[int, WorkerUpdate] = {}
    for u in updates:
        if u.epoch != epoch:
            raise ProtocolError(f"update from worker {u.worker_id} is for epoch {u.epoch}, "
                                f"expected {epoch}")
        if not 0 <= u.worker_id < k:
            raise ProtocolError(f"unknown worker id {u.worker_id}")
        if u.worker_id in by_id:
            raise ProtocolError(f"duplicate update from worker {u.worker_id}")
        if len(u.delta_shared) != length:
            raise ProtocolError(f"update from worker {u.worker_id} has length "
                                f"{len(u.delta_shared)}, expected {length}")
        by_id[u.worker_id] = u
    missing = sorted(set(range(k)) - set(by_id))
    if missing:
        raise ProtocolError(f"missing updates from workers {missing}")
    return [by_id[i] for i in range(k)]


@dataclass(eq=False)
class Master:
    """Aggregator state: the global shared vector and what gamma needs."""

    form: str
    k: int
    lam: float
    n: int
    y: np.ndarray
    shared: np.ndarray

    @classmethod
    def for_problem(cls, p: RidgeProblem, form: str, k: int, dtype=None) -> "Master":
        dtype = dtype or p.dtype
        size = p.n if check_form(form) == PRIMAL else p.m
        return cls(form, k, float(p.lam), p.n, p.y64, np.zeros(size, dtype=dtype))


def aggregate(master: Master, updates, mode: str, epoch: Optional[int] = None):
    """Combine one round of worker updates into a new shared vector.

    Sums are taken in worker-id order so the result does not depend on the
    order updates arrived in. Returns ``(new_shared, gamma)``; ``master`` is
    left untouched.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    updates = list(updates)
    if epoch is None:
        epoch = updates[0].epoch if updates else 0
    ordered = check_round(updates, master.k, epoch, len(master.shared))
    dw = np.zeros(len(master.shared))
    cross = sq = label = 0.0
    for u in ordered:
        dw += u.delta_shared
        cross += u.cross_term
        sq += u.delta_sqnorm
        label += u.label_term
    if mode == AVERAGE:
        gamma = 1.0 / master.k
    elif master.form == PRIMAL:
        gamma = optimal_gamma_primal(master.shared, master.y, master.lam, master.n, dw,
                                     cross, sq)
    else:
        gamma = optimal_gamma_dual(master.shared, master.lam, master.n, dw, label, cross, sq)
    new_shared = (master.shared.astype(np.float64) + gamma * dw).astype(master.shared.dtype)
    return new_shared, gamma


def assemble_weights(slices, size: int, dtype) -> np.ndarray:
    """Concatenate worker model slices ``[(coords, weights), ...]`` into a global vector."""
    out = np.zeros(size, dtype=dtype)
    seen = np.zeros(size, dtype=bool)
    for coords, weights in slices:
        if np.any(seen[coords]):
            raise ProtocolError("overlapping model slices")
        seen[coords] = True
        out[coords] = weights
    return out


def run_distributed(p: RidgeProblem, k: int, config: DistributedConfig, transport=None,
                    dtype=None):
    """Run ``config.n_epochs`` synchronous rounds over ``k`` workers.

    ``transport`` defaults to an in-process one built from ``p``. Returns the
    global model (concatenated worker slices plus the master's shared vector)
    and one :class:`RoundRecord` per checked epoch.
    """
    from .transport import InProcessTransport

    dtype = np.dtype(dtype or p.dtype)
    if k < 1:
        raise ValueError("k must be at least 1")
    if transport is None:
        transport = InProcessTransport.for_problem(p, k, config, dtype=dtype)
    form = config.form
    n_coords = p.m if form == PRIMAL else p.n
    master = Master.for_problem(p, form, k, dtype)
    records: list[RoundRecord] = []
    elapsed = 0.0

    def record(epoch, gamma, slices, **timings):
        weights = assemble_weights(slices, n_coords, dtype)
        primal, dual, gap = evaluate(p, weights, form)
        records.append(RoundRecord(epoch, gamma, primal, dual, gap, elapsed, **timings))
        return weights

    try:
        transport.start()
        transport.broadcast_state(0, master.shared, 1.0)
        weights = record(0, None, transport.gather_slices(0))
        for t in range(1, config.n_epochs + 1):
            clock = Stopwatch()
            updates = transport.gather_updates(t)
            t_compute = clock.lap()
            master.shared, gamma = aggregate(master, updates, config.mode, epoch=t)
            t_aggregate = clock.lap()
            transport.broadcast_state(t, master.shared, gamma)
            slices = transport.gather_slices(t)
            t_transport = clock.lap()
            elapsed += t_compute + t_aggregate + t_transport
            # the final round is always recorded, so ``weights`` ends up current
            if t == config.n_epochs or t % config.gap_check_every == 0:
                weights = record(t, gamma, slices, t_compute_s=t_compute,
                                 t_transport_s=t_transport, t_aggregate_s=t_aggregate)
    finally:
        transport.close()

    model_cls = PrimalModel if form == PRIMAL else DualModel
    return model_cls(weights, master.shared.copy()), records


def partition_for(p: RidgeProblem, k: int, config: DistributedConfig) -> Partition:
    count = p.m if config.form == PRIMAL else p.n
    return make_partition(count, k, config.partition_seed)
