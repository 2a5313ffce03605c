"""Scalar kernels on flattened output vectors: rational quadratic and energy.

Values and input gradients are exposed both for single vector pairs and for
the batched layouts used by the loss estimators:

* pairwise:  Y of shape (B, S, D) -> (B, S, S) kernel values among samples;
* cross:     y* of shape (B, D) against Y -> (B, S);
* gradient factors g such that d k(a, b)/da = g * (a - b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

RATIONAL_QUADRATIC = "rational_quadratic"
ENERGY = "energy"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice plus hyperparameters (sigma/alpha used by rational_quadratic)."""

    kind: str = RATIONAL_QUADRATIC
    sigma: float = 0.04
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in (RATIONAL_QUADRATIC, ENERGY):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.sigma <= 0.0 or self.alpha <= 0.0:
            raise ValueError("sigma and alpha must be positive")


def eval(spec: KernelSpec, a, b) -> float:
    """Kernel value k(a, b) for two equal-length vectors."""
    a, b = _pair(a, b)
    sq = float(np.sum((a - b) ** 2))
    if spec.kind == ENERGY:
        return -np.sqrt(sq)
    return float((1.0 + sq / (2.0 * spec.alpha * spec.sigma**2)) ** (-spec.alpha))


def grad_wrt_first(spec: KernelSpec, a, b) -> np.ndarray:
    """Exact gradient of :func:`eval` with respect to its first argument.

    rational_quadratic: -(a-b)/sigma^2 * (1 + ||a-b||^2/(2 alpha sigma^2))^(-alpha-1);
    energy: -(a-b)/||a-b||, defined as the zero vector at a = b.
    """
    a, b = _pair(a, b)
    d = a - b
    sq = float(np.sum(d * d))
    if spec.kind == ENERGY:
        if sq == 0.0:
            return np.zeros_like(d)
        return -d / np.sqrt(sq)
    base = 1.0 + sq / (2.0 * spec.alpha * spec.sigma**2)
    return -d / spec.sigma**2 * base ** (-spec.alpha - 1.0)


# -- batched helpers for the loss estimators ----------------------------------


def pairwise_sq_dists(Y: np.ndarray) -> np.ndarray:
    """Squared distances among samples: Y (B, S, D) -> (B, S, S), clipped at 0.

    Self-distances are exactly zero (the gram expansion would otherwise leave
    cancellation residue on the diagonal).
    """
    sq = np.sum(Y * Y, axis=-1)
    gram = np.matmul(Y, np.swapaxes(Y, -1, -2))
    d = np.maximum(sq[..., :, None] + sq[..., None, :] - 2.0 * gram, 0.0)
    idx = np.arange(Y.shape[-2])
    d[..., idx, idx] = 0.0
    return d


def cross_sq_dists(ystar: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Squared distances from y* (B, D) to each sample in Y (B, S, D) -> (B, S)."""
    d = Y - ystar[:, None, :]
    return np.sum(d * d, axis=-1)


def values_from_sq(spec: KernelSpec, sq: np.ndarray) -> np.ndarray:
    """Kernel values from squared distances (any shape)."""
    if spec.kind == ENERGY:
        return -np.sqrt(sq)
    return (1.0 + sq / (2.0 * spec.alpha * spec.sigma**2)) ** (-spec.alpha)


def grad_factors_from_sq(spec: KernelSpec, sq: np.ndarray) -> np.ndarray:
    """Scalar factors g with d k(a, b)/da = g * (a - b), from squared distances."""
    if spec.kind == ENERGY:
        with np.errstate(divide="ignore"):
            g = -1.0 / np.sqrt(sq)
        return np.where(sq > 0.0, g, 0.0)
    base = 1.0 + sq / (2.0 * spec.alpha * spec.sigma**2)
    return -(base ** (-spec.alpha - 1.0)) / spec.sigma**2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"vector lengths differ: {a.shape} vs {b.shape}")
    return a, b
