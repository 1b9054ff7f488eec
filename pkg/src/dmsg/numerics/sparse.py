from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .. import _kernels


@dataclass(frozen=True)
class CSRMatrix:
    """Compressed sparse row matrix (float64 values, int64 indices)."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    def __post_init__(self):
        n_rows, n_cols = self.shape
        if self.indptr.shape != (n_rows + 1,):
            raise ValueError(f"indptr has length {self.indptr.shape[0]}, expected {n_rows + 1}")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise ValueError("row offsets must start at 0 and be non-decreasing")
        if self.indptr[-1] != self.indices.shape[0] or self.indices.shape != self.data.shape:
            raise ValueError("indices/data length does not match row offsets")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= n_cols:
                raise ValueError("column index out of range")
            same_row = np.diff(np.repeat(np.arange(n_rows), np.diff(self.indptr))) == 0
            if np.any(np.diff(self.indices)[same_row] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        """Build from triplets; duplicate (row, col) entries are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        n_rows, n_cols = shape
        if rows.size:
            key = rows * n_cols + cols
            uniq, inv = np.unique(key, return_inverse=True)
            summed = np.zeros(uniq.shape[0])
            np.add.at(summed, inv, vals)
            rows, cols, vals = uniq // n_cols, uniq % n_cols, summed
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(indptr, cols.astype(np.int64), vals, (int(n_rows), int(n_cols)))

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls.from_coo(idx, idx, np.ones(n), (n, n))

    @property
    def nnz(self):
        return int(self.data.shape[0])

    def row_ids(self):
        return np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out

    def transpose(self):
        return CSRMatrix.from_coo(self.indices, self.row_ids(), self.data, self.shape[::-1])

    @cached_property
    def T(self):
        return self.transpose()

    def submatrix(self, keep):
        """Rows and columns restricted to ``keep`` (sorted local ids), reindexed."""
        keep = np.asarray(keep, dtype=np.int64)
        remap = np.full(self.shape[1], -1, dtype=np.int64)
        remap[keep] = np.arange(keep.shape[0])
        rows = remap[self.row_ids()]
        cols = remap[self.indices]
        mask = (rows >= 0) & (cols >= 0)
        return CSRMatrix.from_coo(rows[mask], cols[mask], self.data[mask], (keep.shape[0], keep.shape[0]))

    def matmul(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != self.shape[1]:
            raise ValueError(f"shape mismatch: {self.shape} @ {b.shape}")
        return _kernels.csr_matmul(self.indptr, self.indices, self.data, b)

    def __matmul__(self, b):
        return self.matmul(b)


def spmm(a: CSRMatrix, b: np.ndarray) -> np.ndarray:
    """Exact sparse x dense product on raw arrays."""
    return a.matmul(b)
