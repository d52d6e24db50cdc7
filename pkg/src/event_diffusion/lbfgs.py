"""Limited-memory BFGS with two-loop recursion and Armijo backtracking.

Used by the guided-sampling inner loop, where a handful of iterations per
noise level must make reliable progress: accepted steps always satisfy the
Armijo decrease condition, so the objective trace is non-increasing by
construction. Curvature pairs with non-positive s'y are skipped to keep the
implicit inverse-Hessian approximation positive definite. A failed line
search returns the current iterate flagged as stalled instead of raising.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 5
    max_iters: int = 50
    grad_tol: float = 1e-8
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30

    def __post_init__(self):
        if self.memory < 1:
            raise InvalidParameterError("memory must be >= 1")
        if self.max_iters < 0:
            raise InvalidParameterError("max_iters must be >= 0")
        if not (self.grad_tol >= 0):
            raise InvalidParameterError("grad_tol must be >= 0")
        if not (0 < self.armijo_c1 < 1):
            raise InvalidParameterError("armijo_c1 must be in (0, 1)")
        if not (0 < self.backtrack < 1):
            raise InvalidParameterError("backtrack factor must be in (0, 1)")
        if self.max_backtracks < 0:
            raise InvalidParameterError("max_backtracks must be >= 0")


@dataclass
class LbfgsResult:
    x: np.ndarray
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    grad_norm: float = 0.0
    stalled: bool = False


def _two_loop(g: np.ndarray, pairs: deque) -> np.ndarray:
    """Apply the implicit inverse Hessian to g, returning the descent step."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(
    objective: Objective, x0: np.ndarray, cfg: LbfgsConfig = LbfgsConfig()
) -> LbfgsResult:
    """Minimize objective(x) -> (value, gradient) from x0.

    Runs at most cfg.max_iters iterations; stops early once the gradient norm
    drops to cfg.grad_tol. trace[0] is f(x0) and one value is appended per
    accepted step, so the trace is non-increasing.
    """
    x = np.array(x0, dtype=np.float64).ravel()
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InvalidInputError("objective is non-finite at the starting point")
    if g.shape != x.shape:
        raise InvalidInputError("gradient shape does not match the iterate")

    trace = [f]
    pairs: deque = deque(maxlen=cfg.memory)
    result = LbfgsResult(x=x, trace=trace)

    for _ in range(cfg.max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.grad_tol:
            break

        if pairs:
            d = _two_loop(g, pairs)
            alpha = 1.0
        else:
            d = -g
            alpha = min(1.0, 1.0 / gnorm)
        gtd = float(g @ d)
        if gtd >= 0:
            # two-loop direction lost descent (numerics); fall back to steepest
            d = -g
            gtd = -gnorm * gnorm
            alpha = min(1.0, 1.0 / gnorm)

        accepted = False
        for _bt in range(cfg.max_backtracks + 1):
            x_new = x + alpha * d
            f_new, g_new = objective(x_new)
            f_new = float(f_new)
            g_new = np.asarray(g_new, dtype=np.float64).ravel()
            if (
                np.isfinite(f_new)
                and f_new <= f + cfg.armijo_c1 * alpha * gtd
                and np.all(np.isfinite(g_new))
            ):
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            result.stalled = True
            break

        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 0:
            pairs.append((s, yv, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        result.iterations += 1

    result.x = x
    result.grad_norm = float(np.linalg.norm(g))
    return result
