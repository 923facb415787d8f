"""Sparse training data: compressed matrices, LIBSVM I/O, partitions, synthetic problems."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np

CSR = "csr"
CSC = "csc"

_COMMENT = re.compile(r"#.*$")


class LibsvmParseError(ValueError):
    """A token in a LIBSVM stream could not be read."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class LibsvmStructureError(LibsvmParseError):
    """Indices are nonpositive, repeated or out of order."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse matrix stored either by rows (CSR) or by columns (CSC).

    ``indptr`` runs along the compressed axis, ``indices`` hold positions on the
    other axis. Indices within each compressed slice are strictly increasing.
    """

    n_rows: int
    n_cols: int
    storage: str
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.storage not in (CSR, CSC):
            raise ValueError(f"unknown storage {self.storage!r}")
        if len(self.indptr) != self.n_major + 1:
            raise ValueError("indptr length does not match the compressed axis")
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise ValueError("indptr must start at 0 and end at nnz")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be nondecreasing")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= self.n_minor:
                raise ValueError("index out of range")
            steps = np.diff(self.indices)
            # a step that crosses a slice boundary may go backwards
            inside = np.ones(len(steps), dtype=bool)
            bounds = self.indptr[1:-1]
            bounds = bounds[(bounds > 0) & (bounds < len(self.indices))]
            inside[bounds - 1] = False
            if np.any(steps[inside] <= 0):
                raise ValueError("indices must be strictly increasing within each slice")

    @property
    def n_major(self) -> int:
        return self.n_rows if self.storage == CSR else self.n_cols

    @property
    def n_minor(self) -> int:
        return self.n_cols if self.storage == CSR else self.n_rows

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def dtype(self):
        return self.values.dtype

    def slice_of(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(indices, values) of row k (CSR) or column k (CSC)."""
        lo, hi = self.indptr[k], self.indptr[k + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def to_csr(self) -> "SparseMatrix":
        return self if self.storage == CSR else transpose(self)

    def to_csc(self) -> "SparseMatrix":
        return self if self.storage == CSC else transpose(self)

    def astype(self, dtype) -> "SparseMatrix":
        return SparseMatrix(self.n_rows, self.n_cols, self.storage, self.indptr,
                            self.indices, self.values.astype(dtype))

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        major = np.repeat(np.arange(self.n_major), np.diff(self.indptr))
        if self.storage == CSR:
            out[major, self.indices] = self.values
        else:
            out[self.indices, major] = self.values
        return out

    def select(self, keep: np.ndarray) -> "SparseMatrix":
        """Submatrix made of the given compressed-axis slices, in the given order.

        Minor-axis indices are left untouched, so a column subset of a CSC
        matrix still addresses the full set of rows.
        """
        keep = np.asarray(keep, dtype=np.int64)
        counts = np.diff(self.indptr)[keep]
        indptr = np.zeros(len(keep) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        take = np.concatenate(
            [np.arange(self.indptr[k], self.indptr[k + 1]) for k in keep]
        ) if len(keep) else np.zeros(0, dtype=np.int64)
        take = take.astype(np.int64)
        if self.storage == CSR:
            n_rows, n_cols = len(keep), self.n_cols
        else:
            n_rows, n_cols = self.n_rows, len(keep)
        return SparseMatrix(n_rows, n_cols, self.storage, indptr,
                            self.indices[take], self.values[take])

    @classmethod
    def from_dense(cls, dense, storage: str = CSR, dtype=np.float32) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ValueError("expected a 2-D array")
        n_rows, n_cols = dense.shape
        src = dense if storage == CSR else dense.T
        counts = np.count_nonzero(src, axis=1)
        indptr = np.zeros(src.shape[0] + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        major, minor = np.nonzero(src)
        return cls(n_rows, n_cols, storage, indptr, minor.astype(np.int64),
                   src[major, minor].astype(dtype))

    def equals(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and self.storage == other.storage
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def transpose(m: SparseMatrix) -> SparseMatrix:
    """Flip the storage order (CSR <-> CSC) keeping every entry (i, j, v) in place."""
    major = np.repeat(np.arange(m.n_major, dtype=np.int64), np.diff(m.indptr))
    # stable sort by minor index keeps the old major order inside each new slice
    order = np.argsort(m.indices, kind="stable")
    counts = np.bincount(m.indices, minlength=m.n_minor)
    indptr = np.zeros(m.n_minor + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    storage = CSC if m.storage == CSR else CSR
    return SparseMatrix(m.n_rows, m.n_cols, storage, indptr,
                        major[order], m.values[order])


def squared_norms(m: SparseMatrix, axis: str) -> np.ndarray:
    """Per-row (``axis="rows"``) or per-column (``axis="cols"``) sums of squares, in float64."""
    if axis not in ("rows", "cols"):
        raise ValueError("axis must be 'rows' or 'cols'")
    sq = m.values.astype(np.float64) ** 2
    along_major = (axis == "rows") == (m.storage == CSR)
    if along_major:
        out = np.zeros(m.n_major, dtype=np.float64)
        major = np.repeat(np.arange(m.n_major), np.diff(m.indptr))
        np.add.at(out, major, sq)
        return out
    return np.bincount(m.indices, weights=sq, minlength=m.n_minor).astype(np.float64)


@dataclass(frozen=True, eq=False)
class Dataset:
    matrix: SparseMatrix
    labels: np.ndarray
    # weight vector used to generate the labels, when known
    planted: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.labels) != self.matrix.n_rows:
            raise ValueError(
                f"{len(self.labels)} labels for {self.matrix.n_rows} rows")

    @property
    def n_examples(self) -> int:
        return self.matrix.n_rows

    @property
    def n_features(self) -> int:
        return self.matrix.n_cols

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.matrix.astype(dtype), self.labels.astype(dtype), self.planted)

    def equals(self, other: "Dataset") -> bool:
        return (self.matrix.to_csr().equals(other.matrix.to_csr())
                and self.labels.dtype == other.labels.dtype
                and np.array_equal(self.labels, other.labels))


def parse_libsvm(stream: Iterable[str], expected_cols: Optional[int] = None,
                 dtype=np.float32) -> Dataset:
    """Read ``label idx:val ...`` lines (1-based indices) into a CSR dataset.

    Blank lines and ``#`` comments are skipped.
    """
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    max_col = 0
    for lineno, raw in enumerate(stream, start=1):
        line = _COMMENT.sub("", raw).strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"expected index:value, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"bad feature token {tok!r}") from None
            if idx <= 0:
                raise LibsvmStructureError(lineno, f"index {idx} is not positive")
            if idx <= last:
                raise LibsvmStructureError(
                    lineno, f"index {idx} does not increase past {last}")
            last = idx
            indices.append(idx - 1)
            values.append(val)
        max_col = max(max_col, last)
        indptr.append(len(indices))

    n_cols = max(max_col, expected_cols or 0)
    matrix = SparseMatrix(
        len(labels), n_cols, CSR,
        np.asarray(indptr, dtype=np.int64),
        np.asarray(indices, dtype=np.int64),
        np.asarray(values, dtype=dtype),
    )
    return Dataset(matrix, np.asarray(labels, dtype=dtype))


def load_libsvm(path, expected_cols: Optional[int] = None, dtype=np.float32) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_libsvm(fh, expected_cols=expected_cols, dtype=dtype)


def write_libsvm(dataset: Dataset, stream: TextIO) -> None:
    """Inverse of :func:`parse_libsvm`; floats are written with ``repr`` so they reparse exactly."""
    csr = dataset.matrix.to_csr()
    for r in range(csr.n_rows):
        idx, val = csr.slice_of(r)
        feats = " ".join(f"{i + 1}:{float(v)!r}" for i, v in zip(idx, val))
        label = repr(float(dataset.labels[r]))
        stream.write(f"{label} {feats}\n" if feats else f"{label}\n")


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of coordinates to K workers.

    ``blocks[k]`` lists the coordinates owned by worker k in increasing order;
    ``owner[i]`` is the worker that owns coordinate i.
    """

    k: int
    owner: np.ndarray
    blocks: tuple

    @property
    def count(self) -> int:
        return len(self.owner)

    @classmethod
    def from_owner(cls, owner, k: int) -> "Partition":
        owner = np.asarray(owner, dtype=np.int64)
        if len(owner) and (owner.min() < 0 or owner.max() >= k):
            raise ValueError("owner ids must lie in [0, k)")
        blocks = tuple(np.flatnonzero(owner == w).astype(np.int64) for w in range(k))
        return cls(k, owner, blocks)


def make_partition(count: int, k: int, seed: int) -> Partition:
    """Random balanced partition: a seeded permutation cut into ``k`` contiguous blocks."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if count < 0:
        raise ValueError("count must be nonnegative")
    perm = np.random.default_rng(seed).permutation(count)
    owner = np.empty(count, dtype=np.int64)
    for w, chunk in enumerate(np.array_split(perm, k)):
        owner[chunk] = w
    return Partition.from_owner(owner, k)


def generate_synthetic(n: int, m: int, density: float, noise_std: float, seed: int,
                       dtype=np.float32) -> Dataset:
    """Random sparse regression problem with planted weights.

    Each entry is nonzero with probability ``density`` and drawn from N(0, 1);
    labels are ``A @ planted + noise_std * N(0, 1)``.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    if n < 0 or m < 0:
        raise ValueError("dimensions must be nonnegative")
    rng = np.random.default_rng(seed)
    indptr = np.zeros(n + 1, dtype=np.int64)
    idx_chunks, val_chunks = [], []
    chunk = max(1, (1 << 22) // max(m, 1))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        if density >= 1.0:
            mask = np.ones((hi - lo, m), dtype=bool)
        else:
            mask = rng.random((hi - lo, m)) < density
        rows, cols = np.nonzero(mask)
        indptr[lo + 1:hi + 1] = indptr[lo] + np.cumsum(np.bincount(rows, minlength=hi - lo))
        idx_chunks.append(cols.astype(np.int64))
        val_chunks.append(rng.standard_normal(len(cols)).astype(dtype))
    indices = np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int64)
    values = np.concatenate(val_chunks) if val_chunks else np.zeros(0, dtype)
    matrix = SparseMatrix(n, m, CSR, indptr, indices, values)

    planted = rng.standard_normal(m).astype(dtype)
    clean = _csr_matvec64(matrix, planted)
    labels = clean + noise_std * rng.standard_normal(n)
    return Dataset(matrix, labels.astype(dtype), planted)


def _csr_matvec64(m: SparseMatrix, x: np.ndarray) -> np.ndarray:
    rows = np.repeat(np.arange(m.n_rows), np.diff(m.indptr))
    prod = m.values.astype(np.float64) * np.asarray(x, dtype=np.float64)[m.indices]
    return np.bincount(rows, weights=prod, minlength=m.n_rows)
