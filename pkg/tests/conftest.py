"""Shared helpers: small random problems and independent numerical oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from coordforge.objective import RidgeProblem
from coordforge.sparse import Dataset, SparseMatrix, generate_synthetic


def dense_problem(a, y, lam, dtype=np.float64) -> RidgeProblem:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    matrix = SparseMatrix.from_dense(a, dtype=dtype)
    return RidgeProblem(Dataset(matrix, np.asarray(y, dtype=dtype)), lam)


def random_problem(seed, n=40, m=15, density=0.3, lam=0.1, dtype=np.float64) -> RidgeProblem:
    return RidgeProblem(generate_synthetic(n, m, density, 0.1, seed, dtype=dtype), lam)


def dense_of(p: RidgeProblem) -> np.ndarray:
    return p.csr.toarray().astype(np.float64)


def numpy_primal(a, y, lam, beta) -> float:
    """Primal objective written directly with dense numpy."""
    n = a.shape[0]
    r = a @ beta - y
    return float(r @ r / (2 * n) + lam / 2 * beta @ beta)


def numpy_dual(a, y, lam, alpha) -> float:
    n = a.shape[0]
    v = a.T @ alpha
    return float(-n / 2 * alpha @ alpha - v @ v / (2 * lam) + alpha @ y)


def primal_line(a, y, lam, beta, step):
    """t -> P(beta + t * step), evaluated densely in extended precision."""
    a, y, beta, step = (np.asarray(v, dtype=np.longdouble) for v in (a, y, beta, step))
    n = a.shape[0]
    r0, dr = a @ beta - y, a @ step

    def f(t):
        r = r0 + t * dr
        b = beta + t * step
        return r @ r / (2 * n) + lam / 2 * (b @ b)

    return f


def dual_line(a, y, lam, alpha, step):
    """t -> -D(alpha + t * step), evaluated densely in extended precision."""
    a, y, alpha, step = (np.asarray(v, dtype=np.longdouble) for v in (a, y, alpha, step))
    n = a.shape[0]
    v0, dv = a.T @ alpha, a.T @ step

    def f(t):
        al = alpha + t * step
        v = v0 + t * dv
        return n / 2 * (al @ al) + (v @ v) / (2 * lam) - al @ y

    return f


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Minimize a unimodal scalar function on [lo, hi] without derivatives."""
    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2


def central_difference(f, x: np.ndarray, i: int, h: float = 1e-5) -> float:
    e = np.zeros_like(x)
    e[i] = h
    return (f(x + e) - f(x - e)) / (2 * h)


@pytest.fixture
def two_by_one():
    """A=[[1],[1]], y=(1,1), lam=0.5."""
    return dense_problem([[1.0], [1.0]], [1.0, 1.0], 0.5)


@pytest.fixture
def one_by_one():
    """A=[[1]], y=(1), lam=1."""
    return dense_problem([[1.0]], [1.0], 1.0)


def run_over_tcp(p, k, config, timeout=30.0):
    """Run a distributed job with ``k`` loopback TCP workers on local threads."""
    from coordforge.distributed import TcpMasterTransport, run_distributed, spawn_tcp_workers

    transport = TcpMasterTransport(k, "127.0.0.1", 0, timeout=timeout)
    threads = spawn_tcp_workers(p, k, config, transport.address, timeout=timeout)
    try:
        return run_distributed(p, k, config, transport=transport)
    finally:
        for th in threads:
            th.join(timeout)


_CRITERIA: list[str] = []


def record_criterion(line: str) -> None:
    _CRITERIA.append(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
