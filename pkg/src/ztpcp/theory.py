"""Closed-form error-bound calculators and KL-divergence checks.

All expressions involving ``e^b - 1``, ``e^b - b - 1`` or ``1 - e^-p`` are
evaluated through expm1/log1p or a power series so that ``beta`` down to
1e-6 keeps full relative accuracy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import log_expm1
from .tensors import ContractError, Shape

# exp() overflows just above 709; switch to e^-b scaled forms well before.
_SCALED_ABOVE = 20.0


class DomainError(ValueError):
    pass


def _positive(name, value):
    if not value > 0 or not math.isfinite(value):
        raise DomainError(f"{name} must be a positive finite number, got {value}")


def expm1mx(b: float) -> float:
    """``e^b - 1 - b`` without cancellation for small ``b``."""
    if abs(b) < 0.5:
        term = b * b / 2.0
        total = 0.0
        k = 2
        while abs(term) > 1e-18 * abs(total) or total == 0.0:
            total += term
            k += 1
            term *= b / k
            if term == 0.0:
                break
        return total
    return math.expm1(b) - b


def kappa(beta: float) -> float:
    """Error amplification of the zero-truncated estimator relative to the oracle."""
    _positive("beta", beta)
    if beta > _SCALED_ABOVE:
        e = math.exp(-beta)
        return ((4.0 + beta) - 4.0 * e) / (2.0 * (1.0 - (beta + 1.0) * e))
    return (4.0 * math.expm1(beta) + beta * math.exp(beta)) / (2.0 * expm1mx(beta))


def c_beta(beta: float) -> float:
    """``(e^b - b - 1) / (e^b - 1)``."""
    _positive("beta", beta)
    if beta > _SCALED_ABOVE:
        e = math.exp(-beta)
        return (1.0 - (beta + 1.0) * e) / -math.expm1(-beta)
    return expm1mx(beta) / math.expm1(beta)


def _check_rates(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if not (np.all(p > 0) and np.all(q > 0)):
        raise DomainError("KL divergence needs positive rates")
    return p, q


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def kl_poisson(p, q):
    """KL divergence between Poisson(p) and Poisson(q)."""
    p, q = _check_rates(p, q)
    return _out(p * np.log(p / q) - (p - q))


def kl_ztp(p, q):
    """KL divergence between zero-truncated Poisson(p) and Poisson(q) laws."""
    p, q = _check_rates(p, q)
    return _out(p / -np.expm1(-p) * np.log(p / q) - (log_expm1(p) - log_expm1(q)))


def dimension_requirement_met(shape, order: int | None = None) -> bool:
    """``min I_n >= (N - 1) log2(max I_n)^2 + 1``."""
    shape = Shape.of(shape)
    N = shape.order if order is None else int(order)
    return min(shape) >= (N - 1) * math.log2(max(shape)) ** 2 + 1


class BoundKind(enum.Enum):
    ZTP_NNCP = "ztp_nncp"
    ZTP_CP = "ztp_cp"
    POISSON_NNCP = "poisson_nncp"
    POISSON_CP = "poisson_cp"


@dataclass(frozen=True)
class BoundInputs:
    shape: Shape
    beta: float
    alpha: float
    rank_true: int
    rank_est: int
    omega_size: int

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape.of(self.shape))
        _positive("beta", self.beta)
        if not self.beta <= self.alpha:
            raise DomainError("need beta <= alpha")
        if self.rank_true < 1 or self.rank_est < 1:
            raise DomainError("ranks must be >= 1")
        if self.omega_size < 2:
            raise DomainError("omega_size must be >= 2 so that log2|omega| > 0")


def _ztp_constant(beta: float) -> float:
    # ((4 + b) e^b - 4) / (e^b - b - 1)
    if beta > _SCALED_ABOVE:
        e = math.exp(-beta)
        return ((4.0 + beta) - 4.0 * e) / (1.0 - (beta + 1.0) * e)
    return ((4.0 + beta) * math.exp(beta) - 4.0) / expm1mx(beta)


def theorem_bound(inputs: BoundInputs, kind: BoundKind) -> float:
    """Right-hand side of the squared relative-error bound.

    The value is returned as is, even when it exceeds 1 (vacuous).
    """
    b, a = inputs.beta, inputs.alpha
    R, Rh = inputs.rank_true, inputs.rank_est
    n_omega = inputs.omega_size
    sampling = (a * (math.e**2 - 2.0) + 3.0 * math.log2(n_omega)) * math.sqrt(sum(inputs.shape)) / math.sqrt(n_omega)
    if kind in (BoundKind.ZTP_NNCP, BoundKind.POISSON_NNCP):
        rank_term = R + Rh
    else:
        N = inputs.shape.order
        rank_term = (R * math.sqrt(R)) ** (N - 1) + (Rh * math.sqrt(Rh)) ** (N - 1)
    if kind in (BoundKind.POISSON_NNCP, BoundKind.POISSON_CP):
        prefactor = 128.0 * a * (a + 1.0) / b**3
    else:
        prefactor = 64.0 * a * (a + 1.0) * _ztp_constant(b) / b**3
    return prefactor * sampling * rank_term


@dataclass
class KLBoundReport:
    beta: float
    alpha: float
    samples: int
    poisson_violations: int = 0
    ztp_violations: int = 0
    worst_poisson_margin: float = math.inf
    worst_ztp_margin: float = math.inf
    failures: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return self.samples - len({(p, q) for _, p, q in self.failures})

    @property
    def ok(self) -> bool:
        return self.poisson_violations == 0 and self.ztp_violations == 0

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "alpha": self.alpha,
            "samples": self.samples,
            "passed": self.passed,
            "poisson_violations": self.poisson_violations,
            "ztp_violations": self.ztp_violations,
            "worst_poisson_margin": self.worst_poisson_margin,
            "worst_ztp_margin": self.worst_ztp_margin,
            "failures": [list(f) for f in self.failures[:20]],
        }


def kl_bound_margins(p, q, beta: float, alpha: float):
    """Margins (lhs - rhs) of the Poisson and zero-truncated KL lower bounds."""
    p, q = _check_rates(p, q)
    d2 = (p - q) ** 2
    poisson = kl_poisson(p, q) - d2 / (2.0 * alpha)
    ztp = -np.expm1(-p) * kl_ztp(p, q) - c_beta(beta) / (2.0 * alpha) * d2
    return poisson, ztp


def verify_kl_bounds(
    beta: float,
    alpha: float,
    samples: int,
    rng: np.random.Generator,
    slack: float = 1e-12,
    chunk: int = 1 << 18,
) -> KLBoundReport:
    """Check both KL lower bounds on ``samples`` random pairs from ``[beta, alpha]^2``.

    The corner pairs ``(beta, alpha)``, ``(alpha, beta)`` and ``(beta, beta)``
    are always included on top of the random draws.
    """
    _positive("beta", beta)
    if not beta <= alpha:
        raise DomainError("need beta <= alpha")
    if samples < 1:
        raise ContractError("samples must be >= 1")
    report = KLBoundReport(beta, alpha, samples + 3)
    corners = np.array([[beta, alpha], [alpha, beta], [beta, beta]])
    batches = [corners]
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        batches.append(rng.uniform(beta, alpha, size=(n, 2)))
        remaining -= n
    for pq in batches:
        p, q = pq[:, 0], pq[:, 1]
        m_pois, m_ztp = kl_bound_margins(p, q, beta, alpha)
        report.worst_poisson_margin = min(report.worst_poisson_margin, float(m_pois.min()))
        report.worst_ztp_margin = min(report.worst_ztp_margin, float(m_ztp.min()))
        bad_p = m_pois < -slack
        bad_z = m_ztp < -slack
        report.poisson_violations += int(bad_p.sum())
        report.ztp_violations += int(bad_z.sum())
        report.failures += [("poisson", float(a), float(b)) for a, b in pq[bad_p]]
        report.failures += [("ztp", float(a), float(b)) for a, b in pq[bad_z]]
    return report
