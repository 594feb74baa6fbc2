"""
Translation matrices and RBF kernel pooling, each with its reverse pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Sequence, Tuple

import numpy as np

from twostage_ranker.embeddings import EmbeddingStore
from twostage_ranker.exceptions import DegeneratePairError

DEFAULT_EPSILON = 1e-10

_DEFAULT_MU = (1.0, 0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9)
_DEFAULT_SIGMA = (1e-3,) + (0.1,) * 10


@dataclass(frozen=True)
class KernelBank:
    """
    RBF kernels over cosine similarities.

    Attributes:
        mu (Tuple[float, ...]): Kernel means in `[-1, 1]`.
        sigma (Tuple[float, ...]): Kernel widths, all positive.
    """

    mu: Tuple[float, ...] = _DEFAULT_MU
    sigma: Tuple[float, ...] = _DEFAULT_SIGMA

    def __post_init__(self) -> None:
        if not self.mu or len(self.mu) != len(self.sigma):
            raise ValueError("'mu' and 'sigma' must be non-empty and of equal length")
        if any(width <= 0.0 for width in self.sigma):
            raise ValueError("'sigma' values must be positive")
        if any(not -1.0 <= mean <= 1.0 for mean in self.mu):
            raise ValueError("'mu' values must lie in [-1, 1]")

    @property
    def count(self) -> int:
        return len(self.mu)

    @property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=np.float64)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {"mu": list(self.mu), "sigma": list(self.sigma)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> KernelBank:
        return cls(tuple(float(m) for m in data["mu"]), tuple(float(s) for s in data["sigma"]))


class CosineCache(NamedTuple):
    """Intermediate values of `cosine_matrix_forward`."""

    unit_queries: np.ndarray
    unit_docs: np.ndarray
    query_norms: np.ndarray
    doc_norms: np.ndarray


class PoolCache(NamedTuple):
    """Intermediate values of `kernel_pool_forward`."""

    matrix: np.ndarray
    activations: np.ndarray
    soft_counts: np.ndarray
    active: np.ndarray


def _unit_rows(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    units = np.where((norms > 0.0)[:, None], vectors / safe[:, None], 0.0)
    return units, norms


def cosine_matrix_forward(queries: np.ndarray, docs: np.ndarray) -> Tuple[np.ndarray, CosineCache]:
    """Row-wise cosine similarities; a zero row yields a zero row or column."""
    unit_queries, query_norms = _unit_rows(queries)
    unit_docs, doc_norms = _unit_rows(docs)
    matrix = np.clip(unit_queries @ unit_docs.T, -1.0, 1.0)
    return matrix, CosineCache(unit_queries, unit_docs, query_norms, doc_norms)


def _unit_backward(units: np.ndarray, norms: np.ndarray, grad_units: np.ndarray) -> np.ndarray:
    projection = np.sum(units * grad_units, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)[:, None]
    grads = (grad_units - units * projection) / safe
    grads[norms == 0.0] = 0.0
    return grads


def cosine_matrix_backward(
    grad_matrix: np.ndarray, cache: CosineCache
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the query and document rows; zero rows get none."""
    grad_unit_queries = grad_matrix @ cache.unit_docs
    grad_unit_docs = grad_matrix.T @ cache.unit_queries
    return (
        _unit_backward(cache.unit_queries, cache.query_norms, grad_unit_queries),
        _unit_backward(cache.unit_docs, cache.doc_norms, grad_unit_docs),
    )


def translation_matrix(
    query_tokens: Sequence[str], doc_tokens: Sequence[str], store: EmbeddingStore
) -> np.ndarray:
    """Cosine similarity of every query token to every document token."""
    if not query_tokens or not doc_tokens:
        raise DegeneratePairError("query and document must each have at least one token")
    matrix, _ = cosine_matrix_forward(store.lookup(query_tokens), store.lookup(doc_tokens))
    return matrix


def kernel_pool_forward(
    matrix: np.ndarray, kernels: KernelBank, epsilon: float = DEFAULT_EPSILON
) -> Tuple[np.ndarray, PoolCache]:
    """
    Soft-match counts per query row and kernel, log-summed over rows.
    Counts below `epsilon` are clamped to it.
    """
    mu = kernels.mu_array[:, None, None]
    sigma = kernels.sigma_array[:, None, None]
    activations = np.exp(-((matrix[None, :, :] - mu) ** 2) / (2.0 * sigma**2))
    soft_counts = activations.sum(axis=2)
    active = soft_counts > epsilon
    features = np.log(np.maximum(soft_counts, epsilon)).sum(axis=1)
    return features, PoolCache(matrix, activations, soft_counts, active)


def kernel_pool_backward(
    grad_features: np.ndarray, kernels: KernelBank, cache: PoolCache
) -> np.ndarray:
    """Gradient of the translation matrix; clamped counts pass none."""
    grad_counts = np.where(
        cache.active, grad_features[:, None] / np.where(cache.active, cache.soft_counts, 1.0), 0.0
    )
    mu = kernels.mu_array[:, None, None]
    sigma = kernels.sigma_array[:, None, None]
    slopes = -(cache.matrix[None, :, :] - mu) / sigma**2
    return np.sum(grad_counts[:, :, None] * cache.activations * slopes, axis=0)


def kernel_pool(
    matrix: np.ndarray, kernels: KernelBank, epsilon: float = DEFAULT_EPSILON
) -> np.ndarray:
    """The kernel feature vector of a translation matrix, length `kernels.count`."""
    features, _ = kernel_pool_forward(np.asarray(matrix, dtype=np.float64), kernels, epsilon)
    return features
