"""Dense, sparse-COO and Kruskal tensor types plus the multilinear kernels.

Linear indices are row-major (last mode fastest) and 0-based in memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_INDEX_LIMIT = 2**63 - 1

DEFAULT_DENSE_CAP = 10**8


class ContractError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class ResourceError(MemoryError):
    """Raised when an operation would exceed its memory budget."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Shape:
    """Ordered extents ``(I_1, ..., I_N)`` of a tensor."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1:
            raise ContractError("tensor order must be at least 1")
        if any(d < 1 for d in dims):
            raise ContractError(f"every extent must be >= 1, got {dims}")
        if math.prod(dims) > _INDEX_LIMIT:
            raise ContractError(f"shape {dims} overflows 64-bit linear indices")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def of(cls, dims: Shape | Sequence[int]) -> Shape:
        return dims if isinstance(dims, Shape) else cls(tuple(dims))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __getitem__(self, n):
        return self.dims[n]

    def check_subs(self, subs: np.ndarray) -> np.ndarray:
        subs = np.asarray(subs, dtype=np.int64)
        if subs.ndim == 1:
            subs = subs.reshape(1, -1) if subs.size else subs.reshape(0, self.order)
        if subs.shape[1] != self.order:
            raise ContractError(f"expected {self.order} indices per entry, got {subs.shape[1]}")
        if subs.size and ((subs < 0).any() or (subs >= np.asarray(self.dims)).any()):
            raise IndexError(f"multi-index out of bounds for shape {self.dims}")
        return subs

    def linearize(self, subs) -> np.ndarray:
        """Row-major linear indices of an ``(n, N)`` array of multi-indices."""
        subs = self.check_subs(subs)
        if len(subs) == 0:
            return np.empty(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(subs.T), self.dims).astype(np.int64)

    def delinearize(self, lin) -> np.ndarray:
        lin = np.asarray(lin, dtype=np.int64).ravel()
        if lin.size and (lin.min() < 0 or lin.max() >= self.size):
            raise IndexError(f"linear index out of bounds for shape {self.dims}")
        if lin.size == 0:
            return np.empty((0, self.order), dtype=np.int64)
        return np.stack(np.unravel_index(lin, self.dims), axis=1).astype(np.int64)


@dataclass(frozen=True)
class DenseTensor:
    shape: Shape
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.shape.size:
            raise ContractError("values length does not match the shape")
        if not np.all(np.isfinite(values)):
            raise ContractError("dense tensor values must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.shape.dims)

    def __getitem__(self, idx):
        return self.array[tuple(idx)]


@dataclass(frozen=True)
class CooTensor:
    """Real-valued COO tensor; used for per-entry weights in MTTKRP."""

    shape: Shape
    subs: np.ndarray
    vals: np.ndarray


@dataclass(frozen=True, eq=False)
class SparseCountTensor:
    """Nonnegative integer counts stored as sorted COO with zeros omitted."""

    shape: Shape
    subs: np.ndarray
    vals: np.ndarray
    lin: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        shape = Shape.of(self.shape)
        subs = shape.check_subs(self.subs)
        vals = np.asarray(self.vals)
        if vals.ndim != 1 or len(vals) != len(subs):
            raise ContractError("need exactly one count per multi-index")
        if vals.size and not np.all(vals == np.floor(vals)):
            raise ContractError("counts must be integers")
        vals = vals.astype(np.int64)
        if (vals < 1).any():
            raise ContractError("stored counts must be >= 1; zeros are represented by absence")
        lin = shape.linearize(subs)
        order = np.argsort(lin, kind="stable")
        lin = lin[order]
        if lin.size > 1 and (np.diff(lin) == 0).any():
            dup = lin[1:][np.diff(lin) == 0][0]
            raise ContractError(f"duplicate multi-index {tuple(shape.delinearize([dup])[0])}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "subs", _frozen(subs[order]))
        object.__setattr__(self, "vals", _frozen(vals[order]))
        object.__setattr__(self, "lin", _frozen(lin))

    @classmethod
    def empty(cls, shape) -> SparseCountTensor:
        shape = Shape.of(shape)
        return cls(shape, np.empty((0, shape.order), dtype=np.int64), np.empty(0, dtype=np.int64))

    @classmethod
    def from_dense(cls, array) -> SparseCountTensor:
        array = np.asarray(array)
        subs = np.argwhere(array != 0)
        return cls(Shape(array.shape), subs, array[tuple(subs.T)])

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def __eq__(self, other):
        if not isinstance(other, SparseCountTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.lin, other.lin)
            and np.array_equal(self.vals, other.vals)
        )

    def values_at(self, lin) -> np.ndarray:
        """Counts at the given linear indices (0 where nothing is stored)."""
        lin = np.asarray(lin, dtype=np.int64)
        out = np.zeros(lin.shape, dtype=np.int64)
        if self.nnz == 0 or lin.size == 0:
            return out
        pos = np.searchsorted(self.lin, lin)
        pos_c = np.minimum(pos, self.nnz - 1)
        hit = self.lin[pos_c] == lin
        out[hit] = self.vals[pos_c[hit]]
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape.size, dtype=np.int64)
        out[self.lin] = self.vals
        return out.reshape(self.shape.dims)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Sorted set of linear indices into a shape.

    The full index set is kept implicit (``indices is None``) so that masks
    covering all ``I_1 * ... * I_N`` entries never have to be materialized.
    """

    shape: Shape
    indices: np.ndarray | None

    def __post_init__(self):
        shape = Shape.of(self.shape)
        object.__setattr__(self, "shape", shape)
        if self.indices is None:
            return
        idx = np.unique(np.asarray(self.indices, dtype=np.int64).ravel())
        if len(idx) != np.asarray(self.indices).size:
            raise ContractError("observation indices must be unique")
        if idx.size and (idx[0] < 0 or idx[-1] >= shape.size):
            raise IndexError(f"observation index out of range for shape {shape.dims}")
        object.__setattr__(self, "indices", None if len(idx) == shape.size else _frozen(idx))

    @classmethod
    def full(cls, shape) -> ObservationSet:
        return cls(Shape.of(shape), None)

    @classmethod
    def from_subs(cls, shape, subs) -> ObservationSet:
        shape = Shape.of(shape)
        return cls(shape, shape.linearize(subs))

    @property
    def is_full(self) -> bool:
        return self.indices is None

    @property
    def lin(self) -> np.ndarray:
        if self.indices is None:
            return np.arange(self.shape.size, dtype=np.int64)
        return self.indices

    @property
    def subs(self) -> np.ndarray:
        return self.shape.delinearize(self.lin)

    def __len__(self):
        return self.shape.size if self.indices is None else len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, ObservationSet):
            return NotImplemented
        if self.shape != other.shape or self.is_full != other.is_full:
            return False
        return self.is_full or np.array_equal(self.indices, other.indices)

    def issubset(self, other: ObservationSet) -> bool:
        if other.is_full:
            return self.shape == other.shape
        if self.is_full:
            return other.is_full
        return bool(np.isin(self.indices, other.indices, assume_unique=True).all())


@dataclass(frozen=True, eq=False)
class KruskalModel:
    """CP-form tensor ``sum_r weights[r] * a_r^(1) o ... o a_r^(N)``."""

    shape: Shape
    weights: np.ndarray
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        shape = Shape.of(self.shape)
        weights = np.array(self.weights, dtype=np.float64).ravel()
        factors = tuple(np.array(A, dtype=np.float64, ndmin=2) for A in self.factors)
        if len(factors) != shape.order:
            raise ContractError(f"need {shape.order} factor matrices, got {len(factors)}")
        rank = len(weights)
        if rank < 1:
            raise ContractError("rank must be at least 1")
        if (weights < 0).any():
            raise ContractError("weights must be nonnegative")
        for n, A in enumerate(factors):
            if A.shape != (shape[n], rank):
                raise ContractError(f"factor {n} has shape {A.shape}, expected {(shape[n], rank)}")
            if not np.all(np.isfinite(A)):
                raise ContractError(f"factor {n} has non-finite entries")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "factors", tuple(_frozen(A) for A in factors))

    @classmethod
    def from_factors(cls, factors, weights=None) -> KruskalModel:
        factors = [np.asarray(A, dtype=np.float64) for A in factors]
        rank = factors[0].shape[1]
        if weights is None:
            weights = np.ones(rank)
        return cls(Shape(tuple(A.shape[0] for A in factors)), weights, tuple(factors))

    @property
    def rank(self) -> int:
        return len(self.weights)

    @property
    def order(self) -> int:
        return self.shape.order

    def __eq__(self, other):
        if not isinstance(other, KruskalModel):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.weights, other.weights)
            and all(np.array_equal(A, B) for A, B in zip(self.factors, other.factors))
        )

    def scaled(self, c: float) -> KruskalModel:
        return KruskalModel(self.shape, self.weights * c, self.factors)

    def absorb_weights(self) -> KruskalModel:
        """Fold the weights into the first factor so that every weight is 1."""
        factors = list(self.factors)
        factors[0] = factors[0] * self.weights
        return KruskalModel(self.shape, np.ones(self.rank), tuple(factors))

    def entries(self, subs) -> np.ndarray:
        """Model values at an ``(n, N)`` array of multi-indices."""
        subs = self.shape.check_subs(subs)
        prod = np.broadcast_to(self.weights, (len(subs), self.rank)).copy()
        for n, A in enumerate(self.factors):
            prod *= A[subs[:, n]]
        return prod.sum(axis=1)

    def norm(self) -> float:
        return math.sqrt(max(self.innerprod(self), 0.0))

    def innerprod(self, other: KruskalModel) -> float:
        """Frobenius inner product via Gram matrices; never forms dense tensors."""
        if self.shape != other.shape:
            raise ContractError("shape mismatch")
        G = np.ones((self.rank, other.rank))
        for A, B in zip(self.factors, other.factors):
            G *= A.T @ B
        return float(self.weights @ G @ other.weights)


def kruskal_entry(model: KruskalModel, idx) -> float:
    """Value of the model at a single multi-index."""
    idx = tuple(int(i) for i in idx)
    if len(idx) != model.order:
        raise IndexError(f"expected {model.order} indices, got {len(idx)}")
    for n, i in enumerate(idx):
        if not 0 <= i < model.shape[n]:
            raise IndexError(f"index {idx} out of bounds for shape {model.shape.dims}")
    prod = model.weights.copy()
    for n, i in enumerate(idx):
        prod = prod * model.factors[n][i]
    return float(prod.sum())


def kruskal_to_dense(model: KruskalModel, cap: int = DEFAULT_DENSE_CAP) -> DenseTensor:
    if model.shape.size > cap:
        raise ResourceError(f"{model.shape.size} entries exceed the dense cap of {cap}")
    # Left-to-right Khatri-Rao accumulation keeps row-major (last index fastest) order.
    acc = model.factors[0] * model.weights
    for A in model.factors[1:]:
        acc = (acc[:, None, :] * A[None, :, :]).reshape(-1, model.rank)
    return DenseTensor(model.shape, acc.sum(axis=1))


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product, first matrix varying slowest."""
    acc = np.asarray(mats[0], dtype=np.float64)
    for A in mats[1:]:
        acc = (acc[:, None, :] * A[None, :, :]).reshape(-1, acc.shape[1])
    return acc


def masked_mttkrp(mode: int, weights, model: KruskalModel) -> np.ndarray:
    """Sparse MTTKRP restricted to the support of ``weights``.

    Returns ``G`` with ``G[i, r] = sum_{idx: idx[mode] = i} w_idx * prod_{m != mode} A^(m)[idx[m], r]``.
    Model weights are not applied.
    """
    if not 0 <= mode < model.order:
        raise ContractError(f"mode {mode} invalid for an order-{model.order} model")
    subs = model.shape.check_subs(weights.subs)
    w = np.asarray(weights.vals, dtype=np.float64)
    G = np.zeros((model.shape[mode], model.rank))
    if len(subs) == 0:
        return G
    prod = np.broadcast_to(w[:, None], (len(subs), model.rank)).copy()
    for m, A in enumerate(model.factors):
        if m != mode:
            prod *= A[subs[:, m]]
    rows = subs[:, mode]
    for r in range(model.rank):
        G[:, r] = np.bincount(rows, weights=prod[:, r], minlength=model.shape[mode])
    return G


def restrict_to_nonzeros(X: SparseCountTensor, omega: ObservationSet) -> ObservationSet:
    """Indices of ``omega`` where ``X`` holds a nonzero count."""
    if X.shape != omega.shape:
        raise ContractError(f"shape mismatch: counts {X.shape.dims} vs mask {omega.shape.dims}")
    if omega.is_full:
        return ObservationSet(X.shape, X.lin.copy())
    keep = np.isin(X.lin, omega.indices, assume_unique=True)
    return ObservationSet(X.shape, X.lin[keep])
