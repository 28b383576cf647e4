"""Small dense linear-algebra helpers and seeded random streams."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class PowerIterationError(RuntimeError):
    """Power iteration did not reach the requested tolerance.

    The last eigenvalue estimate is kept on ``estimate``.
    """

    def __init__(self, estimate: float, iterations: int):
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(last estimate {estimate!r})"
        )
        self.estimate = estimate
        self.iterations = iterations


def max_eigenvalue_gram(A, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of ``A.T @ A`` by power iteration.

    The iteration starts from the normalized all-ones vector, so the result is
    deterministic. The returned value is the Rayleigh quotient ``||A v||^2`` of
    the current unit iterate ``v``, which never decreases from one iteration
    to the next. Iteration stops once the relative change drops below ``tol``.

    An ``A`` with zero columns (an empty shard) has an empty Gram matrix whose
    largest eigenvalue is taken to be 0.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if A.shape[1] == 0 or A.shape[0] == 0:
        return 0.0

    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    Av = A @ v
    estimate = float(Av @ Av)
    for it in range(1, max_iter + 1):
        w = A.T @ Av
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # all-ones start lies in the null space of A
            return 0.0 if not np.any(A) else _restart(A, tol, max_iter)
        v = w / norm
        Av = A @ v
        new = float(Av @ Av)
        if abs(new - estimate) <= tol * abs(new):
            return new
        estimate = new
    raise PowerIterationError(estimate, max_iter)


def _restart(A, tol, max_iter):
    # Deterministic fallback start when the all-ones vector is annihilated.
    v = np.arange(1, A.shape[1] + 1, dtype=float)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        Av = A @ v
        new = float(Av @ Av)
        if abs(new - estimate) <= tol * abs(new):
            return new
        estimate = new
    raise PowerIterationError(estimate, max_iter)


def finite_difference_gradient(f: Callable[[np.ndarray], float], w, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient ``(f(w + h e_j) - f(w - h e_j)) / 2h``."""
    w = np.asarray(w, dtype=float)
    grad = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        grad[j] = (f(w + e) - f(w - e)) / (2.0 * h)
    return grad


@dataclass
class RngStream:
    """A named, seeded random stream.

    Two streams built from the same ``(seed, label)`` pair produce the same
    draws. Streams are single-owner; do not share one between workers.
    """

    seed: int
    label: str = ""
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF, *words]
        self.generator = np.random.default_rng(np.random.SeedSequence(entropy))


def rng_uniform_subset(rng: RngStream, universe: int, size: int) -> list[int]:
    """Draw ``size`` distinct indices from ``range(universe)``, sorted ascending."""
    if size > universe:
        raise ValueError(f"cannot draw {size} items from a universe of {universe}")
    if size < 0:
        raise ValueError("size must be non-negative")
    picked = rng.generator.choice(universe, size=size, replace=False)
    return sorted(int(i) for i in picked)
