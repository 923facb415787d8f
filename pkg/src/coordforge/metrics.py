"""Per-epoch convergence records and their CSV form."""

from __future__ import annotations

import csv
import time
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, TextIO

from .objective import RidgeProblem, evaluate

CSV_COLUMNS = (
    "epoch", "elapsed_s", "primal_obj", "dual_obj", "duality_gap",
    "gamma", "t_compute_s", "t_transfer_s", "t_comm_s",
)
# columns that depend on the wall clock rather than the computation
TIMING_COLUMNS = ("elapsed_s", "t_compute_s", "t_transfer_s", "t_comm_s")


@dataclass
class EpochMetrics:
    epoch: int
    elapsed_s: float
    primal_obj: float
    dual_obj: float
    duality_gap: float
    gamma: Optional[float] = None
    t_compute_s: float = 0.0
    t_transfer_s: float = 0.0
    t_comm_s: float = 0.0

    def row(self) -> list[str]:
        # plain Python scalars, so numpy types never leak their repr into the file
        return [str(int(self.epoch))] + ["" if v is None else repr(float(v))
                                         for v in astuple(self)[1:]]


assert tuple(f.name for f in fields(EpochMetrics)) == CSV_COLUMNS


def write_csv(records: Iterable[EpochMetrics], stream: TextIO, label: Optional[str] = None,
              header: bool = True) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    if header:
        writer.writerow((("label",) if label is not None else ()) + CSV_COLUMNS)
    for rec in records:
        writer.writerow(([label] if label is not None else []) + rec.row())


def read_csv(stream: TextIO) -> list[dict]:
    return list(csv.DictReader(stream))


class MetricsRecorder:
    """Collects :class:`EpochMetrics` every ``every`` epochs, plus the first and last.

    Only time passed to :meth:`add_time` counts toward ``elapsed_s``, so
    certification work (the gap computation) is excluded.
    """

    def __init__(self, p: RidgeProblem, form: str, every: int = 1):
        if every < 1:
            raise ValueError("gap_check_every must be at least 1")
        self.p = p
        self.form = form
        self.every = every
        self.elapsed = 0.0
        self.records: list[EpochMetrics] = []

    def add_time(self, seconds: float) -> None:
        self.elapsed += seconds

    def due(self, epoch: int, last: int) -> bool:
        return epoch == 0 or epoch == last or epoch % self.every == 0

    def record(self, epoch: int, weights, **extra) -> EpochMetrics:
        primal, dual, gap = evaluate(self.p, weights, self.form)
        rec = EpochMetrics(epoch, self.elapsed, primal, dual, gap, **extra)
        self.records.append(rec)
        return rec


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        dt, self.start = now - self.start, now
        return dt
