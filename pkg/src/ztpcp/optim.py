"""Box-constrained limited-memory quasi-Newton minimization.

Gradient projection identifies the active bounds; an L-BFGS two-loop
recursion supplies the step on the free variables; a projected Armijo
backtracking search keeps every accepted iterate feasible and strictly
descending.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

_ARMIJO_C1 = 1e-4
_BACKTRACK = 0.5
_CURVATURE_RTOL = 1e-12


class OptimizationError(RuntimeError):
    """The objective returned a non-finite value or gradient at a feasible point."""

    def __init__(self, message, iterate):
        super().__init__(message)
        self.iterate = iterate


class Status(enum.Enum):
    GRAD_TOL = "GradTol"
    FUNC_TOL = "FuncTol"
    MAX_ITERS = "MaxIters"
    LINE_SEARCH_FAILURE = "LineSearchFailure"


@dataclass(frozen=True)
class Box:
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"empty box [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class OptimOptions:
    memory: int = 5
    max_iters: int = 500
    grad_tol: float = 1e-6
    func_tol: float = 1e-10
    max_line_search: int = 20

    def __post_init__(self):
        for name in ("memory", "max_iters", "grad_tol", "func_tol", "max_line_search"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class OptimResult:
    solution: np.ndarray
    objective: float
    iterations: int
    status: Status
    objective_trace: list[float] = field(default_factory=list)
    evaluations: int = 0


def project(x, box: Box) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), box.lower, box.upper)


def projected_gradient_norm(x, g, box: Box) -> float:
    if len(x) == 0:
        return 0.0
    return float(np.max(np.abs(x - project(x - g, box))))


def _two_loop(q, pairs):
    q = q.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize(
    f_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    box: Box = Box(),
    opts: OptimOptions = OptimOptions(),
) -> OptimResult:
    """Minimize ``f`` over ``box``; ``f_and_grad(x)`` returns ``(f(x), grad f(x))``."""
    x = project(x0, box)
    if not np.array_equal(x, np.asarray(x0, dtype=np.float64)):
        log.warning("initial point outside the box; clamped")

    evals = 0

    def evaluate(z):
        nonlocal evals
        evals += 1
        fz, gz = f_and_grad(z)
        fz = float(fz)
        gz = np.asarray(gz, dtype=np.float64)
        if not math.isfinite(fz) or not np.all(np.isfinite(gz)):
            raise OptimizationError("objective or gradient is not finite", z.copy())
        return fz, gz

    f, g = evaluate(x)
    trace = [f]
    pairs: deque = deque(maxlen=opts.memory)
    status = Status.MAX_ITERS
    it = 0
    while it < opts.max_iters:
        pg = projected_gradient_norm(x, g, box)
        if pg <= opts.grad_tol:
            status = Status.GRAD_TOL
            break

        # Bertsekas-style active set: variables at (or within pg of) a bound
        # whose gradient pushes them outward.
        tol = min(pg, 1e-8)
        active = ((x <= box.lower + tol) & (g > 0)) | ((x >= box.upper - tol) & (g < 0))
        gf = np.where(active, 0.0, g)

        d = None
        if pairs:
            d = -_two_loop(gf, pairs)
            d[active] = 0.0
            if not g @ d < 0:
                pairs.clear()
                d = None
        if d is None:
            d = -gf / max(np.max(np.abs(gf)), 1.0)

        accepted = False
        t = 1.0
        for _ in range(opts.max_line_search):
            x_new = project(x + t * d, box)
            step = x_new - x
            decrease = g @ step
            if decrease < 0:
                f_new, g_new = evaluate(x_new)
                if f_new <= f + _ARMIJO_C1 * decrease:
                    accepted = True
                    break
            t *= _BACKTRACK
        if not accepted:
            if pairs:
                # Stale curvature information; retry from steepest descent.
                pairs.clear()
                continue
            status = Status.LINE_SEARCH_FAILURE
            break

        it += 1
        y = g_new - g
        sy = step @ y
        if sy > _CURVATURE_RTOL * np.linalg.norm(step) * np.linalg.norm(y):
            pairs.append((step, y, 1.0 / sy))
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if f_old - f <= opts.func_tol * max(abs(f_old), 1.0):
            status = Status.FUNC_TOL
            break

    return OptimResult(x, f, it, status, trace, evals)
