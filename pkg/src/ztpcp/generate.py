"""Synthetic zero-inflated count problems with known low-rank Poisson means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import poisson_variates, sample_subset, stream
from .tensors import (
    ContractError,
    KruskalModel,
    ObservationSet,
    Shape,
    SparseCountTensor,
    restrict_to_nonzeros,
)


@dataclass(frozen=True)
class GenConfig:
    shape: Shape
    rank: int
    beta: float
    alpha: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape.of(self.shape))
        if self.rank < 1:
            raise ContractError("rank must be >= 1")
        if not 0 < self.beta <= self.alpha:
            raise ContractError(f"need 0 < beta <= alpha, got beta={self.beta}, alpha={self.alpha}")

    def factor_range(self) -> tuple[float, float]:
        N = self.shape.order
        return (self.beta / self.rank) ** (1.0 / N), (self.alpha / self.rank) ** (1.0 / N)


@dataclass(frozen=True)
class ProblemInstance:
    truth: KruskalModel
    counts: SparseCountTensor
    omega: ObservationSet
    gamma: ObservationSet

    @property
    def shape(self) -> Shape:
        return self.truth.shape


def generate_truth(cfg: GenConfig, rng: np.random.Generator) -> KruskalModel:
    """Factors i.i.d. uniform on ``[(beta/R)^(1/N), (alpha/R)^(1/N)]`` with unit weights.

    Every entry is then a sum of ``R`` products of ``N`` factors and lies in
    ``[beta, alpha]``.
    """
    lo, hi = cfg.factor_range()
    factors = tuple(rng.uniform(lo, hi, size=(I, cfg.rank)) for I in cfg.shape)
    return KruskalModel(cfg.shape, np.ones(cfg.rank), factors)


def sample_omega(shape, size: int, rng: np.random.Generator) -> ObservationSet:
    shape = Shape.of(shape)
    return ObservationSet(shape, sample_subset(shape.size, size, rng))


def sample_counts(truth: KruskalModel, omega: ObservationSet, rng: np.random.Generator) -> SparseCountTensor:
    """Independent Poisson draws at the indices of ``omega``; zero draws are omitted."""
    if truth.shape != omega.shape:
        raise ContractError("truth and omega have different shapes")
    lin = omega.lin
    subs = truth.shape.delinearize(lin)
    means = truth.entries(subs)
    if means.size and not np.all(means > 0):
        raise ContractError("Poisson means must be positive on omega")
    draws = poisson_variates(means, rng)
    keep = draws > 0
    return SparseCountTensor(truth.shape, subs[keep], draws[keep])


def make_instance(cfg: GenConfig, omega_size: int, replicate=0) -> ProblemInstance:
    """Truth, trusted set, counts and nonzero set for one replicate.

    The truth depends only on ``cfg``; omega and counts come from their own
    substreams keyed by ``replicate``.
    """
    if not 0 <= omega_size <= cfg.shape.size:
        raise ContractError(f"omega_size must lie in [0, {cfg.shape.size}]")
    truth = generate_truth(cfg, stream(cfg.seed, "truth"))
    omega = sample_omega(cfg.shape, omega_size, stream(cfg.seed, f"omega:{replicate}"))
    counts = sample_counts(truth, omega, stream(cfg.seed, f"counts:{replicate}"))
    return ProblemInstance(truth, counts, omega, restrict_to_nonzeros(counts, omega))
