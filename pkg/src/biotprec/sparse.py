"""CSR storage and the 2x2 block-operator algebra.

:class:`CsrMatrix` is a thin immutable wrapper around a canonical
``scipy.sparse.csr_matrix`` (sorted column indices, no duplicates).  The
scipy kernel computes every row as a sequential sum in index order, which is
the determinism contract the solvers rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.io
import scipy.sparse as sps

__all__ = [
    "ShapeError",
    "CsrMatrix",
    "BlockOperator",
    "spmv",
    "transpose_apply",
    "block_apply",
    "write_matrix_market",
    "read_matrix_market",
]


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class CsrMatrix:
    """Immutable compressed sparse row matrix."""

    __slots__ = ("_m",)

    def __init__(self, m):
        m = sps.csr_matrix(m, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.sort_indices()
        for a in (m.data, m.indices, m.indptr):
            a.setflags(write=False)
        self._m = m

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "CsrMatrix":
        """Compress a coordinate list, summing duplicate entries."""
        return cls(sps.coo_matrix((vals, (rows, cols)), shape=shape))

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        return cls(sps.csr_matrix(np.asarray(a, dtype=float)))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls(sps.identity(n, format="csr"))

    @property
    def shape(self) -> tuple:
        return self._m.shape

    @property
    def nrows(self) -> int:
        return self._m.shape[0]

    @property
    def ncols(self) -> int:
        return self._m.shape[1]

    @property
    def nnz(self) -> int:
        return self._m.nnz

    @property
    def row_ptr(self) -> np.ndarray:
        return self._m.indptr

    @property
    def col_idx(self) -> np.ndarray:
        return self._m.indices

    @property
    def vals(self) -> np.ndarray:
        return self._m.data

    @property
    def scipy(self) -> sps.csr_matrix:
        """The wrapped scipy matrix; treat as read-only."""
        return self._m

    def toarray(self) -> np.ndarray:
        return self._m.toarray()

    def diagonal(self) -> np.ndarray:
        return self._m.diagonal()

    def restrict(self, rows: np.ndarray, cols: np.ndarray) -> "CsrMatrix":
        return CsrMatrix(self._m[rows][:, cols])

    def scaled(self, c: float) -> "CsrMatrix":
        return CsrMatrix(self._m * c)

    def __add__(self, other: "CsrMatrix") -> "CsrMatrix":
        if self.shape != other.shape:
            raise ShapeError(f"cannot add {self.shape} and {other.shape}")
        return CsrMatrix(self._m + other._m)

    def __matmul__(self, x):
        return spmv(self, x)

    def __repr__(self) -> str:
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


def spmv(a: CsrMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != a.ncols:
        raise ShapeError(f"spmv: matrix {a.shape} with vector of shape {x.shape}")
    return a.scipy @ x


def transpose_apply(a: CsrMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != a.nrows:
        raise ShapeError(f"transpose_apply: matrix {a.shape} with vector of shape {x.shape}")
    return a.scipy.T @ x


# A block is a sum of terms coef * M (or coef * M^T).
Term = tuple  # (coef: float, matrix: CsrMatrix, transposed: bool)


def _term_shape(t) -> tuple:
    _, m, tr = t
    return m.shape[::-1] if tr else m.shape


def _term_apply(t, x) -> np.ndarray:
    c, m, tr = t
    y = transpose_apply(m, x) if tr else spmv(m, x)
    return c * y


@dataclass(frozen=True)
class BlockOperator:
    """2x2 block operator ``[[A00, A01], [A10, A11]]`` acting on ``[u; p]``.

    Each block is a list of ``(coef, CsrMatrix, transposed)`` terms, so the
    scalar multipliers stay out of the stored matrices.  With ``negate_second``
    the second block row is multiplied by -1.
    """

    sizes: tuple
    blocks: dict = field(default_factory=dict)
    negate_second: bool = False

    def __post_init__(self):
        n = self.sizes
        for (i, j), terms in self.blocks.items():
            for t in terms:
                if _term_shape(t) != (n[i], n[j]):
                    raise ShapeError(
                        f"block ({i},{j}) term has shape {_term_shape(t)}, expected {(n[i], n[j])}"
                    )

    @property
    def shape(self) -> tuple:
        n = sum(self.sizes)
        return (n, n)

    def split(self, x) -> tuple:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != sum(self.sizes):
            raise ShapeError(f"stacked vector of length {x.shape} does not match sizes {self.sizes}")
        return x[: self.sizes[0]], x[self.sizes[0]:]

    def apply(self, x) -> np.ndarray:
        parts = self.split(x)
        out = [np.zeros(self.sizes[0]), np.zeros(self.sizes[1])]
        for (i, j), terms in self.blocks.items():
            for t in terms:
                out[i] += _term_apply(t, parts[j])
        if self.negate_second:
            out[1] = -out[1]
        return np.concatenate(out)

    __call__ = apply

    def negated(self, flag: bool = True) -> "BlockOperator":
        return BlockOperator(self.sizes, self.blocks, flag)

    def to_scipy(self) -> sps.csr_matrix:
        """Assemble the full operator as one sparse matrix."""
        grid = [[None, None], [None, None]]
        for (i, j), terms in self.blocks.items():
            acc = None
            for c, m, tr in terms:
                part = (m.scipy.T if tr else m.scipy) * c
                acc = part if acc is None else acc + part
            if self.negate_second and i == 1 and acc is not None:
                acc = -acc
            grid[i][j] = acc
        for i in range(2):
            if grid[i][i] is None:
                grid[i][i] = sps.csr_matrix((self.sizes[i], self.sizes[i]))
        return sps.bmat(grid, format="csr")

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()


def block_apply(op: BlockOperator, x) -> np.ndarray:
    return op.apply(x)


def write_matrix_market(a: CsrMatrix, path: Union[str, Path], comment: str = "") -> None:
    scipy.io.mmwrite(str(path), a.scipy, comment=comment, precision=17)


def read_matrix_market(path: Union[str, Path]) -> CsrMatrix:
    return CsrMatrix(scipy.io.mmread(str(path)))
