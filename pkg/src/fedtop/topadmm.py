"""Consensus three-operator ADMM.

Solves

    minimize  sum_m f_m(x_m) + g(z) + beta * h(z)   s.t.  x_m = z  for all m

with the iterates

    x_m <- argmin_x f_m(x) + rho ||x - z + y_m/rho||^2
    z   <- argmin_z g(z) + sum_m rho ||x_m - z - tau grad_h(z_old) + y_m/rho||^2
    y_m <- y_m + rho (x_m - z)

Penalties here use the ``rho ||.||^2`` scaling. Block solvers and the
federated engine use ``(rho_c/2) ||.||^2``; the two agree under
``rho_c = 2 rho`` and ``lambda = 2 y`` (see :func:`penalty_adapter`).
With ``grad_h`` absent the scheme is classical consensus ADMM.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .prox import ZERO, Regularizer, prox

# A block solver returns argmin_x f(x) + (penalty/2) ||x - anchor||^2.
BlockSolver = Callable[[np.ndarray, float], np.ndarray]


class BlockSolverError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"block solver {index} failed: {cause}")
        self.index = index


@dataclass
class ConsensusProblem:
    blocks: Sequence[BlockSolver]
    g: Regularizer = ZERO
    grad_h: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h: Optional[Callable[[np.ndarray], float]] = None
    beta: float = 0.0

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ValueError("a consensus problem needs at least one block")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


@dataclass
class SplitState:
    x: list
    z: np.ndarray
    y: list

    @classmethod
    def zeros(cls, n_blocks: int, dim: int) -> "SplitState":
        return cls(
            x=[np.zeros(dim) for _ in range(n_blocks)],
            z=np.zeros(dim),
            y=[np.zeros(dim) for _ in range(n_blocks)],
        )

    def copy(self) -> "SplitState":
        return SplitState([a.copy() for a in self.x], self.z.copy(), [a.copy() for a in self.y])


@dataclass
class ResidualReport:
    primal_norms: list
    dual_norm: float
    objective: float = float("nan")

    @property
    def max_primal(self) -> float:
        return max(self.primal_norms) if self.primal_norms else 0.0


@dataclass
class SolveResult:
    state: SplitState
    reports: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.reports)


def _check_state(problem: ConsensusProblem, state: SplitState):
    M = problem.n_blocks
    if len(state.x) != M or len(state.y) != M:
        raise ValueError(f"state carries {len(state.x)} blocks, problem has {M}")
    n = state.z.shape
    for a in (*state.x, *state.y):
        if a.shape != n:
            raise ValueError("all state vectors must share one dimension")


def iterate(problem: ConsensusProblem, state: SplitState, rho: float, tau: float = 0.0,
            executor: Optional[Executor] = None) -> SplitState:
    """One sweep of x-, z- and y-updates. ``state`` is left untouched."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    _check_state(problem, state)
    M = problem.n_blocks
    z_old = state.z

    def solve_block(m):
        try:
            return np.asarray(problem.blocks[m](z_old - state.y[m] / rho, 2.0 * rho), dtype=float)
        except Exception as exc:  # noqa: BLE001 - re-raised with the block index
            raise BlockSolverError(m, exc) from exc

    if executor is None:
        x = [solve_block(m) for m in range(M)]
    else:
        x = list(executor.map(solve_block, range(M)))

    point = np.zeros_like(z_old)
    for m in range(M):
        point += x[m] + state.y[m] / rho
    point /= M
    if problem.grad_h is not None and tau > 0:
        point = point - tau * np.asarray(problem.grad_h(z_old), dtype=float)
    z = point if problem.g.is_zero else prox(problem.g, 1.0 / (2.0 * rho * M), point)

    y = [state.y[m] + rho * (x[m] - z) for m in range(M)]
    return SplitState(x, z, y)


def residuals(prev: SplitState, new: SplitState) -> ResidualReport:
    return ResidualReport(
        primal_norms=[float(np.linalg.norm(xm - new.z)) for xm in new.x],
        dual_norm=float(np.linalg.norm(new.z - prev.z)),
    )


def objective_value(problem: ConsensusProblem, f_evals: Sequence[Callable], state: SplitState) -> float:
    """``sum_m f_m(x_m) + g(z) + beta h(z)``."""
    if len(f_evals) != problem.n_blocks:
        raise ValueError("need one objective callable per block")
    total = 0.0
    for f, xm in zip(f_evals, state.x):
        total += float(f(xm))
    total += problem.g.value(state.z)
    if problem.h is not None and problem.beta != 0.0:
        total += problem.beta * float(problem.h(state.z))
    return total


def solve(problem: ConsensusProblem, init: Optional[SplitState] = None, rho: float = 1.0,
          tau: float = 0.0, max_iter: int = 1000, eps_primal: float = 1e-6, eps_dual: float = 1e-6,
          f_evals: Optional[Sequence[Callable]] = None, dim: Optional[int] = None,
          executor: Optional[Executor] = None,
          callback: Optional[Callable[[int, SplitState], None]] = None) -> SolveResult:
    """Iterate until every primal residual is below ``eps_primal`` and the
    dual residual is below ``eps_dual``, or ``max_iter`` sweeps are done.

    Non-convergence is not an error; check ``SolveResult.converged``.
    """
    if eps_primal <= 0 or eps_dual <= 0:
        raise ValueError("residual thresholds must be positive")
    if init is None:
        if dim is None:
            raise ValueError("pass either an initial state or the problem dimension")
        init = SplitState.zeros(problem.n_blocks, dim)
    state = init.copy()
    result = SolveResult(state)
    for it in range(max_iter):
        new = iterate(problem, state, rho, tau, executor=executor)
        report = residuals(state, new)
        if f_evals is not None:
            report.objective = objective_value(problem, f_evals, new)
        result.reports.append(report)
        state = new
        if callback is not None:
            callback(it, state)
        if report.max_primal < eps_primal and report.dual_norm < eps_dual:
            result.converged = True
            break
    result.state = state
    return result


def lyapunov(state: SplitState, z_opt, y_opt: Sequence, rho: float) -> float:
    """``sum_m (1/rho) ||y_m - y_m*||^2 + rho ||z - z*||^2``."""
    total = 0.0
    for ym, ym_opt in zip(state.y, y_opt):
        d = ym - ym_opt
        total += float(d @ d) / rho
    dz = state.z - np.asarray(z_opt, dtype=float)
    return total + rho * float(dz @ dz)


# -- block solvers -----------------------------------------------------------

def quadratic_block_solver(P, q) -> BlockSolver:
    """Exact block solver for ``f(x) = 1/2 x^T P x + q^T x`` (P symmetric PSD)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.asarray(q, dtype=float)
    eye = np.eye(P.shape[0])

    def solver(anchor, penalty):
        return np.linalg.solve(P + penalty * eye, penalty * anchor - q)

    return solver


def gradient_block_solver(grad_f: Callable[[np.ndarray], np.ndarray], lipschitz: float,
                          tol: float = 1e-12, max_iter: int = 100_000,
                          warm_start: bool = False) -> BlockSolver:
    """Block solver for a smooth ``f`` by accelerated gradient descent.

    The subproblem is ``(L + penalty)``-smooth and ``penalty``-strongly
    convex; iteration stops when its gradient norm falls below ``tol``.
    """
    last = {}

    def solver(anchor, penalty):
        x = last.get("x", anchor.copy()) if warm_start else anchor.copy()
        if x.shape != anchor.shape:
            x = anchor.copy()
        step = 1.0 / (lipschitz + penalty)
        kappa = (lipschitz + penalty) / penalty
        momentum = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
        x_prev = x.copy()
        for _ in range(max_iter):
            v = x + momentum * (x - x_prev)
            gv = grad_f(v) + penalty * (v - anchor)
            if np.linalg.norm(gv) < tol:
                x = v
                break
            x_prev = x
            x = v - step * gv
        else:
            raise RuntimeError("gradient block solver hit its iteration cap")
        last["x"] = x.copy()
        return x

    return solver


def penalty_adapter(rho_c: float, literal: bool = False) -> float:
    """Map a ``(rho_c/2)``-convention penalty to this module's ``rho``.

    The exact correspondence is ``rho = rho_c / 2`` with duals related by
    ``lambda = 2 y``. ``literal=True`` instead returns ``rho_c`` unchanged,
    which reads the two penalty conventions as the same number.
    """
    return rho_c if literal else rho_c / 2.0
