"""Poisson, Oracle and zero-truncated (ZTP) maximum-likelihood CP fits.

=========  ======================  ==============
method     entries used            loss
=========  ======================  ==============
Poisson    every index             Poisson
Oracle     trusted set (omega)     Poisson
ZTP        nonzeros in omega       zero-truncated
=========  ======================  ==============
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import DEFAULT_POLICY, LossKind, MaskedLoss, StabilizationPolicy
from .optim import Box, OptimOptions, Status, minimize
from .sampling import stream
from .tensors import (
    ContractError,
    KruskalModel,
    ObservationSet,
    Shape,
    SparseCountTensor,
    kruskal_to_dense,
    restrict_to_nonzeros,
)

log = logging.getLogger(__name__)

FACTOR_LOWER_BOUND = 1e-10
DEFAULT_INIT_BETA = 0.1
RELATIVE_ERROR_DENSE_CAP = 10**7
_DENSE_BLOCK = 1 << 20


class DataInsufficiencyError(ContractError):
    """There are no entries to fit (e.g. ZTP with no nonzero counts)."""


class EstimatorKind(enum.Enum):
    POISSON = "poisson"
    ORACLE = "oracle"
    ZTP = "ztp"


@dataclass(frozen=True)
class FitSpec:
    kind: EstimatorKind
    rank: int
    init_seed: int = 0
    optim: OptimOptions = OptimOptions()
    policy: StabilizationPolicy = DEFAULT_POLICY
    # (beta0, alpha0) for the initial factor range; data-driven when None.
    init_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise ContractError("estimation rank must be >= 1")


@dataclass
class FitResult:
    model: KruskalModel
    final_nll: float
    iterations: int
    status: Status
    rel_error: float | None = None
    truth_nll: float | None = None
    restarts: int = 0
    objective_trace: list[float] = field(default_factory=list, repr=False)
    func_tol: float = OptimOptions().func_tol

    @property
    def flagged(self) -> bool:
        """True when the fit's likelihood is worse than the truth's on the same data."""
        if self.truth_nll is None:
            return False
        return self.final_nll > self.truth_nll + self.func_tol * abs(self.truth_nll)


def assemble_mask(
    kind: EstimatorKind, shape, omega: ObservationSet, gamma: ObservationSet
) -> tuple[ObservationSet, LossKind]:
    shape = Shape.of(shape)
    if omega.shape != shape or gamma.shape != shape:
        raise ContractError("omega/gamma shape does not match")
    if kind is EstimatorKind.POISSON:
        return ObservationSet.full(shape), LossKind.POISSON
    if kind is EstimatorKind.ORACLE:
        return omega, LossKind.POISSON
    if len(gamma) == 0:
        raise DataInsufficiencyError("ZTP fit needs at least one nonzero count")
    if not gamma.issubset(omega):
        raise ContractError("gamma must be a subset of omega")
    return gamma, LossKind.ZTP


def initial_factors(shape: Shape, rank: int, beta0: float, alpha0: float, rng) -> list[np.ndarray]:
    N = shape.order
    lo = (beta0 / rank) ** (1.0 / N)
    hi = (alpha0 / rank) ** (1.0 / N)
    return [rng.uniform(lo, hi, size=(I, rank)) for I in shape]


def _default_init_range(X: SparseCountTensor) -> tuple[float, float]:
    mean = float(X.vals.mean()) if X.nnz else 1.0
    return DEFAULT_INIT_BETA, max(2.0 * mean, DEFAULT_INIT_BETA)


def fit(
    spec: FitSpec,
    X: SparseCountTensor,
    omega: ObservationSet,
    truth: KruskalModel | None = None,
) -> FitResult:
    """Fit a rank-``spec.rank`` nonnegative CP model by maximum likelihood."""
    shape = X.shape
    gamma = restrict_to_nonzeros(X, omega)
    mask, loss_kind = assemble_mask(spec.kind, shape, omega, gamma)
    if len(mask) == 0:
        raise DataInsufficiencyError("empty mask; nothing to fit")
    objective = MaskedLoss(X, mask, loss_kind, spec.rank, spec.policy)

    beta0, alpha0 = spec.init_range or _default_init_range(X)
    x0 = objective.pack(initial_factors(shape, spec.rank, beta0, alpha0, stream(spec.init_seed, "init")))
    box = Box(FACTOR_LOWER_BOUND, math.inf)
    res = minimize(objective, x0, box, spec.optim)
    iterations, trace, restarts = res.iterations, list(res.objective_trace), 0
    if res.status is Status.LINE_SEARCH_FAILURE:
        # One restart from the stalled point with the curvature memory cleared.
        restarts = 1
        res = minimize(objective, res.solution, box, spec.optim)
        iterations += res.iterations
        trace += res.objective_trace[1:]

    model = objective.model(res.solution)
    out = FitResult(
        model=model,
        final_nll=res.objective,
        iterations=iterations,
        status=res.status,
        restarts=restarts,
        objective_trace=trace,
        func_tol=spec.optim.func_tol,
    )
    if truth is not None:
        out.rel_error = relative_error(truth, model)
        t = truth.absorb_weights()
        t_obj = objective if t.rank == spec.rank else MaskedLoss(X, mask, loss_kind, t.rank, spec.policy)
        out.truth_nll = t_obj(t_obj.pack(t.factors))[0]
        if out.flagged:
            log.info("fit likelihood below the truth's: %.6g > %.6g", out.final_nll, out.truth_nll)
    return out


def _dense_blocks(model: KruskalModel):
    rows_per_block = max(1, _DENSE_BLOCK // max(1, model.shape.size // model.shape[0]))
    I0 = model.shape[0]
    for start in range(0, I0, rows_per_block):
        stop = min(I0, start + rows_per_block)
        factors = (model.factors[0][start:stop],) + model.factors[1:]
        yield kruskal_to_dense(KruskalModel.from_factors(factors, model.weights)).values


def relative_error(truth: KruskalModel, estimate: KruskalModel, dense_cap: int = RELATIVE_ERROR_DENSE_CAP) -> float:
    """``||truth - estimate||_F / ||truth||_F``.

    Reconstructs blockwise when the tensor has at most ``dense_cap`` entries
    and otherwise uses Gram-matrix identities on the factors.
    """
    if truth.shape != estimate.shape:
        raise ContractError(f"shape mismatch: {truth.shape.dims} vs {estimate.shape.dims}")
    if truth.shape.size <= dense_cap:
        diff2 = 0.0
        norm2 = 0.0
        for t, e in zip(_dense_blocks(truth), _dense_blocks(estimate)):
            diff2 += float(np.sum((t - e) ** 2))
            norm2 += float(np.sum(t**2))
        return math.sqrt(diff2 / norm2)
    tt = truth.innerprod(truth)
    diff2 = tt + estimate.innerprod(estimate) - 2.0 * truth.innerprod(estimate)
    return math.sqrt(max(diff2, 0.0) / tt)


def average_relative_error(results) -> tuple[float, float]:
    """Mean and sample standard deviation of the fits' relative errors."""
    values = [r.rel_error for r in results]
    if not values:
        raise ContractError("need at least one fit result")
    if any(v is None for v in values):
        raise ContractError("every result needs a relative error (fit with truth)")
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std
