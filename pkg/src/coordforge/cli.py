"""Command-line experiment runner.

    coordforge run --synthetic 200x50 --engine seq --lambda 0.001 --epochs 500 --metrics out.csv
    coordforge compare "seq: --synthetic 200x50 --engine seq" \\
                       "atomic: --synthetic 200x50 --engine atomic --workers 8" --metrics cmp.csv
    coordforge worker --connect HOST:PORT --worker-id 0 --k 2 <same data/run flags as the master>

Exit status: 0 on success, 1 for an invalid run specification, 2 when the
data cannot be read, 3 when the transport fails.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shlex
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .asynchronous import VARIANTS, AsyncConfig, solve_async
from .distributed import (
    DistributedConfig,
    TcpMasterTransport,
    TransportError,
    make_worker,
    partition_for,
    run_distributed,
    run_tcp_worker,
    spawn_tcp_workers,
)
from .distributed.core import LOCAL_SOLVERS, MODES
from .distributed.transport import parse_address
from .metrics import EpochMetrics, write_csv
from .objective import FORMS, RidgeProblem
from .sequential import SolverConfig, solve
from .sparse import Dataset, LibsvmParseError, generate_synthetic, load_libsvm

log = logging.getLogger("coordforge")

SEED_ENV = "COORD_FORGE_SEED"
ENGINES = ("seq",) + VARIANTS + ("distributed",)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for unreadable data here
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunSpec:
    data: Optional[str]
    synthetic: Optional[tuple[int, int]]
    density: float
    noise: float
    data_seed: Optional[int]
    form: str
    engine: str
    lam: float
    epochs: int
    seed: int
    workers: int
    lanes: int
    recompute_every: Optional[int]
    k: int
    aggregation: str
    local_solver: str
    transport: str
    listen: Optional[tuple[str, int]]
    spawn_workers: bool
    metrics: Optional[str]
    gap_check_every: int
    precision: int
    timeout: float

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def _synthetic_shape(text: str) -> tuple[int, int]:
    try:
        n, m = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {text!r}") from None
    if n < 1 or m < 1:
        raise argparse.ArgumentTypeError("synthetic dimensions must be positive")
    return n, m


def _address(text: str) -> tuple[str, int]:
    try:
        return parse_address(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def add_run_arguments(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="LIBSVM file")
    src.add_argument("--synthetic", type=_synthetic_shape, metavar="NxM",
                     help="generate an N-by-M sparse problem")
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.1, help="label noise std")
    p.add_argument("--data-seed", type=int, default=None,
                   help="seed of the synthetic generator (default: --seed)")
    p.add_argument("--form", choices=FORMS, default="primal")
    p.add_argument("--engine", choices=ENGINES, default="seq")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=None,
                   help=f"run seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--workers", type=int, default=4,
                   help="concurrent coordinate tasks (async engines and local solvers)")
    p.add_argument("--lanes", type=int, default=1, help="lanes per task (tpa)")
    p.add_argument("--recompute-every", type=int, default=None,
                   help="epochs between exact shared-vector recomputation (0 = never)")
    p.add_argument("--k", type=int, default=1, help="distributed worker count")
    p.add_argument("--aggregation", choices=MODES, default="average")
    p.add_argument("--local-solver", choices=LOCAL_SOLVERS, default="seq")
    p.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    p.add_argument("--listen", type=_address, default=None, metavar="HOST:PORT")
    p.add_argument("--spawn-workers", action="store_true",
                   help="start the tcp workers as local threads")
    p.add_argument("--metrics", default=None, help="CSV output path (default: stdout)")
    p.add_argument("--gap-check-every", type=int, default=1)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--timeout", type=float, default=120.0, help="transport timeout, seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coordforge", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train with one engine and write a metrics CSV")
    add_run_arguments(run)

    cmp_ = sub.add_parser("compare", help="run several specs into one long-format CSV")
    cmp_.add_argument("specs", nargs="+", metavar="SPEC",
                      help='"label: run flags" (label optional)')
    cmp_.add_argument("--metrics", default=None)

    worker = sub.add_parser("worker", help="serve as a tcp worker for a distributed run")
    add_run_arguments(worker)
    worker.add_argument("--connect", type=_address, required=True, metavar="HOST:PORT")
    worker.add_argument("--worker-id", type=int, required=True)
    return parser


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    seed = args.seed
    if seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            seed = int(env) if env else 0
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    spec = RunSpec(
        data=args.data, synthetic=args.synthetic, density=args.density, noise=args.noise,
        data_seed=args.data_seed, form=args.form, engine=args.engine, lam=args.lam,
        epochs=args.epochs, seed=seed, workers=args.workers, lanes=args.lanes,
        recompute_every=args.recompute_every, k=args.k, aggregation=args.aggregation,
        local_solver=args.local_solver, transport=args.transport, listen=args.listen,
        spawn_workers=args.spawn_workers, metrics=args.metrics,
        gap_check_every=args.gap_check_every, precision=args.precision,
        timeout=args.timeout,
    )
    validate(spec)
    return spec


def validate(spec: RunSpec) -> None:
    problems = []
    if not spec.lam > 0:
        problems.append("--lambda must be positive")
    if spec.epochs < 0:
        problems.append("--epochs must be nonnegative")
    if spec.seed < 0:
        problems.append("seed must be nonnegative")
    if spec.gap_check_every < 1:
        problems.append("--gap-check-every must be at least 1")
    if spec.workers < 1:
        problems.append("--workers must be at least 1")
    if spec.lanes < 1 or spec.lanes & (spec.lanes - 1):
        problems.append("--lanes must be a power of two")
    if spec.recompute_every is not None and spec.recompute_every < 0:
        problems.append("--recompute-every must be nonnegative")
    if not 0 < spec.density <= 1:
        problems.append("--density must lie in (0, 1]")
    if spec.engine == "distributed":
        if spec.k < 1:
            problems.append("--k must be at least 1")
        if spec.transport == "tcp" and spec.listen is None:
            problems.append("--transport tcp requires --listen HOST:PORT")
    if problems:
        raise UsageError("; ".join(problems))


def load_dataset(spec: RunSpec) -> Dataset:
    if spec.synthetic is not None:
        n, m = spec.synthetic
        seed = spec.seed if spec.data_seed is None else spec.data_seed
        return generate_synthetic(n, m, spec.density, spec.noise, seed, dtype=spec.dtype)
    try:
        return load_libsvm(spec.data, dtype=spec.dtype)
    except (OSError, LibsvmParseError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {spec.data}: {exc}") from exc


def _problem(spec: RunSpec) -> RidgeProblem:
    data = load_dataset(spec)
    try:
        return RidgeProblem(data, spec.lam)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _distributed_config(spec: RunSpec) -> DistributedConfig:
    return DistributedConfig(
        n_epochs=spec.epochs, seed=spec.seed, form=spec.form, mode=spec.aggregation,
        local_solver=spec.local_solver, n_workers=spec.workers, n_lanes=spec.lanes,
        gap_check_every=spec.gap_check_every,
    )


def execute(spec: RunSpec) -> list[EpochMetrics]:
    """Run the engine described by ``spec`` and return its metrics rows."""
    p = _problem(spec)
    if spec.engine == "seq":
        cfg = SolverConfig(spec.epochs, spec.seed, spec.form, spec.gap_check_every,
                           spec.recompute_every or 0)
        return solve(p, cfg)[1]
    if spec.engine in VARIANTS:
        cfg = AsyncConfig(variant=spec.engine, n_workers=spec.workers, n_lanes=spec.lanes,
                          shared_recompute_every=spec.recompute_every, seed=spec.seed,
                          n_epochs=spec.epochs, form=spec.form,
                          gap_check_every=spec.gap_check_every)
        return solve_async(p, cfg)[1]

    cfg = _distributed_config(spec)
    transport = None
    if spec.transport == "tcp":
        host, port = spec.listen
        transport = TcpMasterTransport(spec.k, host, port, timeout=spec.timeout)
        if spec.spawn_workers:
            spawn_tcp_workers(p, spec.k, cfg, transport.address, timeout=spec.timeout)
        else:
            log.warning("listening on %s:%d for %d workers", *transport.address, spec.k)
    _, records = run_distributed(p, spec.k, cfg, transport=transport)
    return [r.to_metrics() for r in records]


def serve_worker(spec: RunSpec, address, worker_id: int) -> None:
    if not 0 <= worker_id < spec.k:
        raise UsageError(f"--worker-id must lie in [0, {spec.k})")
    p = _problem(spec)
    cfg = _distributed_config(spec)
    state = make_worker(p, partition_for(p, spec.k, cfg), worker_id, spec.form,
                        spec.local_solver, spec.workers, spec.lanes)
    run_tcp_worker(state, address, spec.seed, spec.epochs, timeout=spec.timeout)


def _open_out(path: Optional[str]):
    if path:
        return open(path, "w", newline="", encoding="utf-8")
    return contextlib.nullcontext(sys.stdout)


def _summary(label: str, rows: list[EpochMetrics], stream) -> None:
    last = rows[-1]
    print(f"{label}: epochs={last.epoch} gap={last.duality_gap:.6e} "
          f"primal={last.primal_obj:.10g} dual={last.dual_obj:.10g} "
          f"time={last.elapsed_s:.3f}s", file=stream)


def cmd_run(spec: RunSpec) -> int:
    rows = execute(spec)
    with _open_out(spec.metrics) as out:
        write_csv(rows, out)
    _summary(spec.engine, rows, sys.stdout if spec.metrics else sys.stderr)
    return EXIT_OK


def parse_compare_spec(text: str, index: int) -> tuple[str, list[str]]:
    head, sep, tail = text.partition(":")
    if sep and head.strip() and not head.strip().startswith("-"):
        return head.strip(), shlex.split(tail)
    return f"run{index}", shlex.split(text)


def cmd_compare(specs: Sequence[str], metrics: Optional[str]) -> int:
    parser = _Parser(prog="coordforge compare SPEC")
    add_run_arguments(parser)
    runs = []
    for i, text in enumerate(specs, start=1):
        label, argv = parse_compare_spec(text, i)
        runs.append((label, spec_from_args(parser.parse_args(argv))))
    labels = [label for label, _ in runs]
    if len(set(labels)) != len(labels):
        raise UsageError("compare labels must be unique")

    with _open_out(metrics) as out:
        for i, (label, spec) in enumerate(runs):
            rows = execute(spec)
            write_csv(rows, out, label=label, header=(i == 0))
            _summary(label, rows, sys.stdout if metrics else sys.stderr)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "compare":
            return cmd_compare(args.specs, args.metrics)
        spec = spec_from_args(args)
        if args.command == "worker":
            serve_worker(spec, args.connect, args.worker_id)
            return EXIT_OK
        return cmd_run(spec)
    except UsageError as exc:
        text = str(exc)
        if not text.startswith("usage:"):
            text = f"{parser.format_usage()}coordforge: error: {text}"
        print(text, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"coordforge: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TransportError as exc:
        print(f"coordforge: transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
