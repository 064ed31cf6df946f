"""Low-rank Poisson tensor completion from zero-inflated counts.

Three maximum-likelihood CP estimators share one projected L-BFGS solver:
a Poisson fit over every entry, an Oracle fit over a trusted index set, and
a zero-truncated Poisson (ZTP) fit over the nonzero counts in that set.
"""

from .estimators import EstimatorKind, FitResult, FitSpec, fit, relative_error
from .generate import GenConfig, ProblemInstance, generate_truth, make_instance
from .losses import LossKind, MaskedLoss, StabilizationPolicy
from .optim import Box, OptimOptions, OptimResult, Status, minimize
from .tensors import (
    ContractError,
    KruskalModel,
    ObservationSet,
    Shape,
    SparseCountTensor,
    kruskal_to_dense,
)
from .theory import BoundInputs, BoundKind, c_beta, kappa, theorem_bound, verify_kl_bounds

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BoundInputs",
    "BoundKind",
    "ContractError",
    "EstimatorKind",
    "FitResult",
    "FitSpec",
    "GenConfig",
    "KruskalModel",
    "LossKind",
    "MaskedLoss",
    "ObservationSet",
    "OptimOptions",
    "OptimResult",
    "ProblemInstance",
    "Shape",
    "SparseCountTensor",
    "StabilizationPolicy",
    "Status",
    "c_beta",
    "fit",
    "generate_truth",
    "kappa",
    "kruskal_to_dense",
    "make_instance",
    "minimize",
    "relative_error",
    "theorem_bound",
    "verify_kl_bounds",
]
