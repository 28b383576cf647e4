"""L2-regularized logistic loss on a data shard.

Feature matrices are stored with examples as *columns*: ``A`` has shape
``(n_features, n_examples)`` and labels ``t`` are in {0, 1}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import max_eigenvalue_gram


@dataclass(frozen=True)
class LogisticShard:
    A: np.ndarray
    t: np.ndarray
    kappa: float = 0.001

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be 2-D (features x examples)")
        if t.ndim != 1 or t.size != A.shape[1]:
            raise ValueError(
                f"label vector has length {t.size}, expected {A.shape[1]} (columns of A)"
            )
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("labels must be 0 or 1")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "t", t)

    @property
    def n_features(self) -> int:
        return self.A.shape[0]

    @property
    def n_examples(self) -> int:
        return self.A.shape[1]


def _check_dim(shard: LogisticShard, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (shard.n_features,):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({shard.n_features},)")
    return w


def log1pexp(u) -> np.ndarray:
    """``log(1 + exp(u))`` without overflow."""
    u = np.asarray(u, dtype=float)
    return np.where(u > 0, u + np.log1p(np.exp(-np.abs(u))), np.log1p(np.exp(np.minimum(u, 0.0))))


def sigmoid(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss(shard: LogisticShard, w) -> float:
    """Mean logistic loss plus ``(kappa/2)||w||^2``."""
    w = _check_dim(shard, w)
    ridge = 0.5 * shard.kappa * float(w @ w)
    if shard.n_examples == 0:
        return ridge
    u = shard.A.T @ w
    return float(np.mean(log1pexp(u) - shard.t * u)) + ridge


def gradient(shard: LogisticShard, w) -> np.ndarray:
    w = _check_dim(shard, w)
    if shard.n_examples == 0:
        return shard.kappa * w
    u = shard.A.T @ w
    return shard.A @ (sigmoid(u) - shard.t) / shard.n_examples + shard.kappa * w


def smoothness_surrogate(shard: LogisticShard, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Curvature surrogate ``eig_max(A^T A) / (4 + kappa)``.

    This is the client proximity weight of the inexact local update. Note that
    it is not divided by the shard size, so it over-estimates the Lipschitz
    constant of :func:`gradient` by roughly that factor.
    """
    return max_eigenvalue_gram(shard.A, tol=tol, max_iter=max_iter) / (4.0 + shard.kappa)


def predict(shard: LogisticShard, w) -> np.ndarray:
    """Predicted labels; a score of exactly 0.5 is classified as 1."""
    w = _check_dim(shard, w)
    return (sigmoid(shard.A.T @ w) >= 0.5).astype(float)


def accuracy(shard: LogisticShard, w) -> float:
    if shard.n_examples == 0:
        raise ValueError("accuracy of an empty shard is undefined")
    return float(np.mean(predict(shard, w) == shard.t))


def l1_term(w, upsilon: float) -> float:
    if upsilon < 0:
        raise ValueError("upsilon must be non-negative")
    return upsilon * float(np.sum(np.abs(w)))
