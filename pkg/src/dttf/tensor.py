"""Sparse user-item-view rating tensors and side-information matrices."""
from __future__ import annotations

import enum
from collections.abc import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import (
    DuplicateConflict,
    EmptyInput,
    IndexOutOfRange,
    NonFiniteValue,
    RowCountMismatch,
    ShapeMismatch,
    ZeroDimension,
)


class Domain(enum.Enum):
    SOURCE = "source"
    TARGET = "target"

    @property
    def short(self) -> str:
        return self.value[0]


class SparseTensor3:
    """Coordinate-format third-order tensor of observed ratings.

    Entries are kept sorted lexicographically by ``(user, item, view)``.  A
    cell is observed iff it has an entry; the indicator tensor is never
    materialised.  Instances are treated as immutable.
    """

    __slots__ = ("dims", "users", "items", "views", "ratings", "_keys", "_groups")

    def __init__(self, dims, users, items, views, ratings):
        # trusted constructor: callers guarantee sorted, unique, in-range
        self.dims = tuple(int(d) for d in dims)
        self.users = np.asarray(users, dtype=np.int64)
        self.items = np.asarray(items, dtype=np.int64)
        self.views = np.asarray(views, dtype=np.int64)
        self.ratings = np.asarray(ratings, dtype=np.float64)
        for arr in (self.users, self.items, self.views, self.ratings):
            arr.flags.writeable = False
        I, J, L = self.dims
        self._keys = (self.users * J + self.items) * L + self.views
        self._groups = {}

    @classmethod
    def empty(cls, dims) -> SparseTensor3:
        _check_dims(dims)
        z = np.zeros(0, dtype=np.int64)
        return cls(dims, z, z, z, np.zeros(0))

    @property
    def nnz(self) -> int:
        return int(self.ratings.shape[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    def __len__(self) -> int:
        return self.nnz

    def __repr__(self) -> str:
        return f"SparseTensor3(dims={self.dims}, nnz={self.nnz})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseTensor3):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self._keys, other._keys)
            and np.array_equal(self.ratings, other.ratings)
        )

    def entries(self) -> list[tuple[int, int, int, float]]:
        return [
            (int(i), int(j), int(l), float(r))
            for i, j, l, r in zip(self.users, self.items, self.views, self.ratings)
        ]

    def cell_keys(self) -> np.ndarray:
        """Linearised ``(i*J + j)*L + l`` index of every entry, ascending."""
        return self._keys

    def contains(self, i, j, l) -> np.ndarray:
        """Vectorised observation test; indices are assumed in range."""
        I, J, L = self.dims
        keys = (np.asarray(i, dtype=np.int64) * J + np.asarray(j)) * L + np.asarray(l)
        if self.nnz == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        pos = np.minimum(np.searchsorted(self._keys, keys), self.nnz - 1)
        return self._keys[pos] == keys

    def mode_groups(self, mode: int) -> tuple[np.ndarray, np.ndarray]:
        """Entries grouped by one mode.

        Returns ``(order, indptr)`` such that the entries whose mode-``mode``
        index equals ``k`` are ``order[indptr[k]:indptr[k+1]]``.
        """
        if mode not in self._groups:
            idx = (self.users, self.items, self.views)[mode]
            order = np.argsort(idx, kind="stable")
            counts = np.bincount(idx, minlength=self.dims[mode])
            indptr = np.concatenate([[0], np.cumsum(counts)])
            self._groups[mode] = (order, indptr)
        return self._groups[mode]

    def mode_matrix(self, mode: int) -> sp.csr_matrix:
        """``(dims[mode], nnz)`` 0/1 matrix summing entry values into mode slices."""
        key = ("matrix", mode)
        if key not in self._groups:
            idx = (self.users, self.items, self.views)[mode]
            self._groups[key] = sp.csr_matrix(
                (np.ones(self.nnz), (idx, np.arange(self.nnz))),
                shape=(self.dims[mode], self.nnz))
        return self._groups[key]

    def entries_of(self, mode: int, index: int) -> np.ndarray:
        order, indptr = self.mode_groups(mode)
        return order[indptr[index]:indptr[index + 1]]

    def subset(self, positions) -> SparseTensor3:
        """Tensor holding only the entries at ``positions`` (indices or bool mask)."""
        positions = np.asarray(positions)
        if positions.dtype == bool:
            positions = np.flatnonzero(positions)
        positions = np.sort(positions)
        return SparseTensor3(
            self.dims,
            self.users[positions],
            self.items[positions],
            self.views[positions],
            self.ratings[positions],
        )

    def with_ratings(self, ratings) -> SparseTensor3:
        ratings = np.asarray(ratings, dtype=np.float64)
        if ratings.shape != self.ratings.shape:
            raise ShapeMismatch(f"expected {self.nnz} ratings, got {ratings.shape}")
        return SparseTensor3(self.dims, self.users, self.items, self.views, ratings)


def _check_dims(dims):
    if len(dims) != 3:
        raise ShapeMismatch(f"expected three dimensions, got {dims!r}")
    if any(int(d) <= 0 for d in dims):
        raise ZeroDimension(f"tensor dimensions must be positive, got {tuple(dims)}")


def build_tensor(dims, triples: Iterable) -> SparseTensor3:
    """Validate rating triples ``(i, j, l, r)`` and build a sorted tensor.

    Exact duplicates collapse to one entry; the same cell with two different
    ratings raises :class:`DuplicateConflict`.
    """
    _check_dims(dims)
    arr = np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples,
                     dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("at least one rating triple is required")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ShapeMismatch(f"triples must have four fields, got shape {arr.shape}")
    return _from_columns(dims, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def _from_columns(dims, i, j, l, r) -> SparseTensor3:
    dims = tuple(int(d) for d in dims)
    idx = np.stack([i, j, l])
    if not np.all(np.isfinite(idx)) or np.any(idx != np.round(idx)):
        raise IndexOutOfRange("indices must be finite integers")
    idx = idx.astype(np.int64)
    for mode, name in enumerate(("user", "item", "view")):
        bad = (idx[mode] < 0) | (idx[mode] >= dims[mode])
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise IndexOutOfRange(
                f"{name} index {idx[mode, k]} outside [0, {dims[mode]}) in entry {k}"
            )
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        k = int(np.flatnonzero(~np.isfinite(r))[0])
        raise NonFiniteValue(f"rating {r[k]!r} in entry {k} is not finite")

    I, J, L = dims
    keys = (idx[0] * J + idx[1]) * L + idx[2]
    order = np.lexsort((r, keys))
    keys, r = keys[order], r[order]
    same_cell = keys[1:] == keys[:-1]
    if same_cell.any():
        conflict = same_cell & (r[1:] != r[:-1])
        if conflict.any():
            k = int(np.flatnonzero(conflict)[0])
            cell = np.unravel_index(keys[k], dims)
            raise DuplicateConflict(
                f"cell {tuple(int(c) for c in cell)} rated both {r[k]!r} and {r[k + 1]!r}"
            )
        keep = np.concatenate([[True], ~same_cell])
        keys, r = keys[keep], r[keep]
    ui, ij, vl = np.unravel_index(keys, dims)
    return SparseTensor3(dims, ui, ij, vl, r)


def is_observed(t: SparseTensor3, i: int, j: int, l: int) -> bool:
    for mode, idx in enumerate((i, j, l)):
        if not 0 <= idx < t.dims[mode]:
            raise IndexOutOfRange(f"index {(i, j, l)} outside tensor dims {t.dims}")
    return bool(t.contains(i, j, l))


def density(t: SparseTensor3) -> float:
    I, J, L = t.dims
    return t.nnz / (I * J * L)


def as_side_info(data, expected_rows: int | None = None) -> np.ndarray:
    """Validate a dense side-information matrix (one row per entity)."""
    mat = np.array(data, dtype=np.float64)
    if mat.ndim != 2:
        raise ShapeMismatch(f"side information must be two-dimensional, got {mat.ndim}-d")
    if expected_rows is not None and mat.shape[0] != expected_rows:
        raise RowCountMismatch(f"expected {expected_rows} rows, got {mat.shape[0]}")
    if not np.all(np.isfinite(mat)):
        raise NonFiniteValue("side information contains non-finite values")
    mat.flags.writeable = False
    return mat
