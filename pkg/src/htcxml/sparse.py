"""Sparse vectors over a feature or label space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sorted, duplicate-free index/weight pairs with no explicit zeros."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            order = np.argsort(idx, kind="stable")
            idx, val = idx[order], val[order]
            if np.any(np.diff(idx) == 0):
                raise ValueError("duplicate index in sparse vector")
        keep = val != 0.0
        if not keep.all():
            idx, val = idx[keep], val[keep]
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_dict(cls, data: Mapping[int, float]) -> SparseVector:
        items = sorted(data.items())
        return cls(
            np.array([k for k, _ in items], dtype=np.int64),
            np.array([v for _, v in items], dtype=np.float64),
        )

    @classmethod
    def empty(cls) -> SparseVector:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64))

    def to_dict(self) -> dict[int, float]:
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def max_index(self) -> int:
        return int(self.indices[-1]) if self.indices.size else -1

    def sum(self) -> float:
        return float(self.values.sum())

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def scale(self, factor: float) -> SparseVector:
        return SparseVector(self.indices.copy(), self.values * factor)

    def dot_dense(self, dense: np.ndarray) -> float:
        return float(np.dot(dense[self.indices], self.values))

    def __len__(self) -> int:
        return self.nnz

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )

    def __hash__(self) -> int:
        return hash((self.indices.tobytes(), self.values.tobytes()))

    def __repr__(self) -> str:
        return f"SparseVector({self.to_dict()!r})"


def to_csr(vectors: Sequence[SparseVector], dim: int) -> sp.csr_matrix:
    """Stack vectors as rows of a CSR matrix with ``dim`` columns."""
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        indptr[i + 1] = indptr[i] + v.nnz
    if vectors:
        indices = np.concatenate([v.indices for v in vectors])
        data = np.concatenate([v.values for v in vectors])
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0, dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


def from_csr(matrix: sp.spmatrix) -> list[SparseVector]:
    m = sp.csr_matrix(matrix)
    m.sort_indices()
    return [
        SparseVector(
            m.indices[m.indptr[i] : m.indptr[i + 1]].astype(np.int64),
            m.data[m.indptr[i] : m.indptr[i + 1]].astype(np.float64),
        )
        for i in range(m.shape[0])
    ]


def add_all(vectors: Iterable[SparseVector]) -> SparseVector:
    acc: dict[int, float] = {}
    for v in vectors:
        for i, x in zip(v.indices.tolist(), v.values.tolist()):
            acc[i] = acc.get(i, 0.0) + x
    return SparseVector.from_dict(acc)
