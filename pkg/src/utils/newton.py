import logging
from typing import List, Optional, Protocol, Tuple, runtime_checkable

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field

from .exceptions import SolverError

logger = logging.getLogger(__name__)


class NewtonInfo(BaseModel):
    """Outcome of a damped Newton solve."""

    iterations: int = Field(default=0, description="Number of accepted nonlinear steps.")
    residual: float = Field(default=0.0, description="Euclidean norm of the final residual.")
    history: List[float] = Field(default_factory=list, description="Residual norm after every accepted step.")
    picard_steps: int = Field(default=0, description="Steps taken with the frozen-coefficient fallback.")
    stalled: bool = Field(default=False, description="Stopped on stagnation inside the stall tolerance.")


@runtime_checkable
class NewtonProblem(Protocol):
    """A discrete nonlinear system F(x) = 0 with a sparse linearization."""

    def residual(self, x: np.ndarray) -> np.ndarray:
        ...

    def jacobian(self, x: np.ndarray) -> Tuple[sp.spmatrix, bool]:
        """Return the Jacobian and whether its flux linearization is positive definite."""
        ...

    def picard(self, x: np.ndarray) -> np.ndarray:
        """Return the next iterate of the frozen-coefficient iteration."""
        ...

    def solve(self, A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
        ...

    def project(self, x: np.ndarray) -> np.ndarray:
        ...


def damped_newton(
    problem: NewtonProblem,
    x0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 50,
    max_halvings: int = 30,
    stall_tol: Optional[float] = None,
    name: str = "newton",
) -> Tuple[np.ndarray, NewtonInfo]:
    """
    Damped Newton iteration with Armijo backtracking.

    The target residual is ``tol * max(1, |F(x0)|)``. Each step halves the step length
    until the residual norm decreases by the Armijo factor; when the flux linearization
    is not positive definite the frozen-coefficient step replaces the Newton step.

    :param problem: the discrete system.
    :param x0: initial iterate.
    :param tol: relative nonlinear tolerance.
    :param max_iter: maximum number of accepted steps.
    :param max_halvings: maximum number of step halvings per iteration.
    :param stall_tol: if given, a failed line search with residual below this value
        ends the iteration as converged and flags it as stalled.
    :param name: label used in log messages.
    """
    x = problem.project(np.asarray(x0, dtype=float).copy())
    r = problem.residual(x)
    norm = float(np.linalg.norm(r))
    target = tol * max(1.0, norm)
    info = NewtonInfo(history=[norm])

    while norm > target:
        if info.iterations >= max_iter:
            raise SolverError(
                f"{name}: no convergence after {max_iter} iterations (residual {norm:.3e})", info.history
            )
        J, positive = problem.jacobian(x)
        if positive:
            dx = problem.solve(J, -r)
        else:
            dx = problem.picard(x) - x
            info.picard_steps += 1

        alpha = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            trial = problem.project(x + alpha * dx)
            r_trial = problem.residual(trial)
            n_trial = float(np.linalg.norm(r_trial))
            if np.isfinite(n_trial) and (n_trial <= (1.0 - 1e-4 * alpha) * norm or n_trial <= target):
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            if not positive:
                # frozen-coefficient steps are taken undamped
                trial = problem.project(x + dx)
                r_trial = problem.residual(trial)
                n_trial = float(np.linalg.norm(r_trial))
            elif stall_tol is not None and norm <= stall_tol:
                info.stalled = True
                logger.debug(f"{name}: stalled at residual {norm:.3e}")
                break
            else:
                raise SolverError(f"{name}: line search failed at residual {norm:.3e}", info.history)

        x, r, norm = trial, r_trial, n_trial
        info.iterations += 1
        info.history.append(norm)
        logger.debug(f"{name}: iteration {info.iterations} step {alpha:.3g} residual {norm:.3e}")

    info.residual = norm
    return x, info
