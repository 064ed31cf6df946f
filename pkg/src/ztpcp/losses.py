"""Poisson and zero-truncated Poisson negative log-likelihoods.

Per-entry losses follow the usual GCP stabilization: ``eps`` is added to
divisors and logarithm arguments.  Reported objective values include the
``log(x!)`` constants so they are true negative log-likelihoods.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import gammaln

from .tensors import (
    ContractError,
    CooTensor,
    KruskalModel,
    ObservationSet,
    SparseCountTensor,
    masked_mttkrp,
)

# Above this the stable identity log(e^m - 1) = m + log1p(-e^-m) is used.
_LOG_EXPM1_SWITCH = 30.0


class LossKind(enum.Enum):
    POISSON = "poisson"
    ZTP = "ztp"


@dataclass(frozen=True)
class StabilizationPolicy:
    eps: float = 1e-10

    def __post_init__(self):
        if not self.eps > 0:
            raise ContractError("stabilization eps must be positive")


DEFAULT_POLICY = StabilizationPolicy()


def log_expm1(m):
    """``log(exp(m) - 1)`` for ``m > 0`` without overflow."""
    m = np.asarray(m, dtype=np.float64)
    big = m > _LOG_EXPM1_SWITCH
    small = np.where(big, 1.0, m)
    out = np.where(big, m + np.log1p(-np.exp(-np.where(big, m, 1.0))), np.log(np.expm1(small)))
    return out[()] if out.ndim == 0 else out


def _log_expm1_eps(m, eps):
    m = np.asarray(m, dtype=np.float64)
    big = m > _LOG_EXPM1_SWITCH
    safe = np.where(big, _LOG_EXPM1_SWITCH, m)
    return np.where(big, log_expm1(np.where(big, m, 1.0)), np.log(np.expm1(safe) + eps))


def _scalar(out):
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def _check_positive_counts(x):
    if np.any(np.asarray(x) < 1):
        raise ContractError("zero-truncated loss received a zero count (masking bug upstream)")


def poisson_nll_entry(m, x, policy: StabilizationPolicy = DEFAULT_POLICY):
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return _scalar(m - x * np.log(m + policy.eps) + gammaln(x + 1.0))


def poisson_nll_grad_entry(m, x, policy: StabilizationPolicy = DEFAULT_POLICY):
    m = np.asarray(m, dtype=np.float64)
    return _scalar(1.0 - np.asarray(x, dtype=np.float64) / (m + policy.eps))


def ztp_nll_entry(m, x, policy: StabilizationPolicy = DEFAULT_POLICY):
    _check_positive_counts(x)
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return _scalar(_log_expm1_eps(m, policy.eps) - x * np.log(m + policy.eps) + gammaln(x + 1.0))


def ztp_nll_grad_entry(m, x, policy: StabilizationPolicy = DEFAULT_POLICY):
    # e^m/(e^m - 1) written as 1/(1 - e^-m); no eps shift needed in that denominator.
    _check_positive_counts(x)
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return _scalar(-1.0 / np.expm1(-m) - x / (m + policy.eps))


def _mask_data(X: SparseCountTensor, mask: ObservationSet, kind: LossKind):
    if X.shape != mask.shape:
        raise ContractError("counts and mask have different shapes")
    lin = mask.lin
    x = X.values_at(lin)
    if kind is LossKind.ZTP:
        _check_positive_counts(x)
    return mask.shape.delinearize(lin), x


def masked_objective(
    model: KruskalModel,
    X: SparseCountTensor,
    mask: ObservationSet,
    kind: LossKind,
    policy: StabilizationPolicy = DEFAULT_POLICY,
) -> float:
    """Sum of per-entry NLLs over ``mask``; indices absent from ``X`` count as zeros."""
    subs, x = _mask_data(X, mask, kind)
    if len(subs) == 0:
        return 0.0
    m = model.entries(subs)
    per_entry = poisson_nll_entry if kind is LossKind.POISSON else ztp_nll_entry
    return float(np.sum(per_entry(m, x, policy)))


def masked_objective_grad(
    model: KruskalModel,
    X: SparseCountTensor,
    mask: ObservationSet,
    kind: LossKind,
    policy: StabilizationPolicy = DEFAULT_POLICY,
) -> list[np.ndarray]:
    """Gradient of :func:`masked_objective` with respect to each factor matrix."""
    subs, x = _mask_data(X, mask, kind)
    if len(subs) == 0:
        return [np.zeros_like(A) for A in model.factors]
    m = model.entries(subs)
    per_entry = poisson_nll_grad_entry if kind is LossKind.POISSON else ztp_nll_grad_entry
    w = CooTensor(model.shape, subs, np.atleast_1d(per_entry(m, x, policy)))
    return [masked_mttkrp(n, w, model) * model.weights for n in range(model.order)]


# ---------------------------------------------------------------------------
# Fused evaluation used by the fitting loop.

_KIND_POISSON = 0
_KIND_ZTP = 1
_KIND_POISSON_NONZERO = 2  # nonzero part of a full-mask Poisson loss


# fastmath only licenses vectorizing the rank loops; the reduction over
# entries stays sequential, so results are bitwise reproducible.
_FASTMATH = {"contract", "arcp", "nsz"}


@numba.njit(inline="always", fastmath=_FASTMATH)
def _entry_loss_grad(m, xe, kind, eps):
    if kind == 1:
        if m > 30.0:
            loss = m + math.log1p(-math.exp(-m))
            w = 1.0 / -math.expm1(-m)
        else:
            em = math.expm1(m)
            loss = math.log(em + eps)
            w = (em + 1.0) / em
        loss -= xe * math.log(m + eps)
        w -= xe / (m + eps)
    else:
        loss = m if kind == 0 else 0.0
        w = 1.0 if kind == 0 else 0.0
        if xe != 0.0:
            loss -= xe * math.log(m + eps)
            w -= xe / (m + eps)
    return loss, w


@numba.njit(cache=True, fastmath=_FASTMATH)
def _fused_value_grad(F, rows, x, weights, kind, eps, G):
    nnz, N = rows.shape
    R = F.shape[1]
    total = 0.0
    # left[n] = weights * prod_{k<n} A_k[i_k], right[n] = prod_{k>=n} A_k[i_k]
    left = np.empty((N + 1, R))
    right = np.empty((N + 1, R))
    for e in range(nnz):
        for r in range(R):
            left[0, r] = weights[r]
            right[N, r] = 1.0
        for n in range(N):
            row = rows[e, n]
            for r in range(R):
                left[n + 1, r] = left[n, r] * F[row, r]
        for n in range(N - 1, 0, -1):
            row = rows[e, n]
            for r in range(R):
                right[n, r] = right[n + 1, r] * F[row, r]
        m = 0.0
        for r in range(R):
            m += left[N, r]
        loss, w = _entry_loss_grad(m, x[e], kind, eps)
        total += loss
        for n in range(N):
            row = rows[e, n]
            for r in range(R):
                G[row, r] += w * left[n, r] * right[n + 1, r]
    return total


@numba.njit(cache=True, fastmath=_FASTMATH)
def _fused_value_grad_3way(F, rows, x, weights, kind, eps, G):
    nnz = rows.shape[0]
    R = F.shape[1]
    total = 0.0
    for e in range(nnz):
        i = rows[e, 0]
        j = rows[e, 1]
        k = rows[e, 2]
        m = 0.0
        for r in range(R):
            m += weights[r] * F[i, r] * F[j, r] * F[k, r]
        loss, w = _entry_loss_grad(m, x[e], kind, eps)
        total += loss
        for r in range(R):
            wr = w * weights[r]
            a = F[i, r]
            b = F[j, r]
            c = F[k, r]
            G[i, r] += wr * b * c
            G[j, r] += wr * a * c
            G[k, r] += wr * a * b
    return total


class MaskedLoss:
    """A masked objective prepared once for repeated value/gradient calls.

    Factor matrices are packed into one flat vector (mode 0 first, each
    matrix row-major).  Weights are held fixed.
    """

    def __init__(
        self,
        X: SparseCountTensor,
        mask: ObservationSet,
        kind: LossKind,
        rank: int,
        policy: StabilizationPolicy = DEFAULT_POLICY,
        weights=None,
    ):
        if X.shape != mask.shape:
            raise ContractError("counts and mask have different shapes")
        self.shape = X.shape
        self.kind = kind
        self.rank = int(rank)
        self.policy = policy
        self.weights = np.ones(self.rank) if weights is None else np.asarray(weights, dtype=np.float64)
        dims = np.asarray(self.shape.dims, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
        self.size = int(dims.sum()) * self.rank
        # A full Poisson mask is evaluated as sum(m) over all entries plus a
        # correction over the nonzeros, never touching the zero entries.
        self.implicit_full = kind is LossKind.POISSON and mask.is_full
        if self.implicit_full:
            subs, x = X.subs, X.vals
            self._code = _KIND_POISSON_NONZERO
        else:
            subs, x = _mask_data(X, mask, kind)
            self._code = _KIND_POISSON if kind is LossKind.POISSON else _KIND_ZTP
        index_type = np.int32 if dims.sum() < 2**31 else np.int64
        self.rows = np.ascontiguousarray(subs + self.offsets, dtype=index_type)
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.log_factorial = float(np.sum(gammaln(self.x + 1.0)))
        self.n_terms = len(mask)

    def unpack(self, vec) -> list[np.ndarray]:
        F = np.asarray(vec, dtype=np.float64).reshape(-1, self.rank)
        return [F[o : o + d] for o, d in zip(self.offsets, self.shape.dims)]

    def pack(self, factors) -> np.ndarray:
        return np.concatenate([np.asarray(A, dtype=np.float64).ravel() for A in factors])

    def model(self, vec) -> KruskalModel:
        return KruskalModel(self.shape, self.weights, tuple(A.copy() for A in self.unpack(vec)))

    def __call__(self, vec) -> tuple[float, np.ndarray]:
        F = np.ascontiguousarray(np.asarray(vec, dtype=np.float64).reshape(-1, self.rank))
        G = np.zeros_like(F)
        kernel = _fused_value_grad_3way if self.shape.order == 3 else _fused_value_grad
        f = kernel(F, self.rows, self.x, self.weights, self._code, self.policy.eps, G)
        if self.implicit_full:
            factors = self.unpack(F)
            colsums = np.stack([A.sum(axis=0) for A in factors])
            f += float(self.weights @ np.prod(colsums, axis=0))
            for n, o in enumerate(self.offsets):
                others = np.prod(np.delete(colsums, n, axis=0), axis=0)
                G[o : o + self.shape[n]] += self.weights * others
        return f + self.log_factorial, G.ravel()
