"""Proximal operators for the regularizers used by the solvers.

All operators follow the real-vector convention

    prox_{lam g}(x) = argmin_z  g(z) + 1/(2 lam) ||x - z||^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Regularizer:
    """Either the zero function or ``strength * ||.||_1``."""

    kind: str = "zero"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "l1"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.strength < 0:
            raise ValueError("regularizer strength must be non-negative")

    @classmethod
    def zero(cls) -> "Regularizer":
        return cls("zero", 0.0)

    @classmethod
    def l1(cls, strength: float) -> "Regularizer":
        return cls("l1", float(strength))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.strength == 0.0

    def value(self, x) -> float:
        if self.kind == "zero":
            return 0.0
        return self.strength * float(np.sum(np.abs(x)))


ZERO = Regularizer.zero()


def soft_threshold(x, threshold: float) -> np.ndarray:
    """Coordinate-wise ``sign(x) * max(|x| - threshold, 0)``.

    Entries with ``|x_j| == threshold`` map to exactly 0.
    """
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def prox(reg: Regularizer, scale: float, point) -> np.ndarray:
    """Exact proximal map of ``reg`` with parameter ``scale`` at ``point``."""
    if not scale > 0:
        raise ValueError(f"prox scale must be positive, got {scale!r}")
    point = np.asarray(point, dtype=float)
    if reg.kind == "zero":
        return point.copy()
    return soft_threshold(point, scale * reg.strength)
