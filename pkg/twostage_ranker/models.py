"""
K-NRM and Conv-KNRM rerankers over a trainable copy of the embedding table.

Both models expose a forward pass that keeps its intermediate values and a
hand-written reverse pass over the fixed graph
embed -> (conv, ReLU) -> cosine -> kernels -> log-sum -> linear -> tanh.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import (
    Any,
    ClassVar,
    Dict,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Type,
)

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from twostage_ranker._typing import TypeAlias
from twostage_ranker.concurrency import ThreadingSettings, map_in_threads
from twostage_ranker.embeddings import EmbeddingStore
from twostage_ranker.exceptions import DegeneratePairError, MissingInputError
from twostage_ranker.kernels import (
    DEFAULT_EPSILON,
    CosineCache,
    KernelBank,
    PoolCache,
    cosine_matrix_backward,
    cosine_matrix_forward,
    kernel_pool_backward,
    kernel_pool_forward,
)
from twostage_ranker.runs import RankedList, TrecRun, rank_entries

logger = logging.getLogger(__name__)

RankerKind: TypeAlias = Literal["knrm", "conv_knrm"]
RANKER_KINDS: Tuple[RankerKind, ...] = ("knrm", "conv_knrm")

_W_INIT_SCALE = 0.014


@dataclass(frozen=True)
class RerankerConfig:
    """
    Architecture of a kernel reranker and how deep it reranks.

    Attributes:
        kind (RankerKind): `knrm` or `conv_knrm`.
        kernels (KernelBank): RBF kernel means and widths.
        epsilon (float): Log guard for empty kernels, in `(0, 1e-6]`.
        ngram_sizes (Tuple[int, ...]): Conv-KNRM n-gram sizes.
        num_filters (int): Conv-KNRM filters per n-gram size.
        depth (int): Number of first-stage documents reranked per query.
    """

    kind: RankerKind = "knrm"
    kernels: KernelBank = field(default_factory=KernelBank)
    epsilon: float = DEFAULT_EPSILON
    ngram_sizes: Tuple[int, ...] = (1, 2, 3)
    num_filters: int = 128
    depth: int = 100

    def __post_init__(self) -> None:
        if self.kind not in RANKER_KINDS:
            raise ValueError(f"'kind' must be one of {RANKER_KINDS}, got {self.kind!r}")
        if not 0.0 < self.epsilon <= 1e-6:
            raise ValueError("'epsilon' must lie in (0, 1e-6]")
        if not self.ngram_sizes or any(size < 1 for size in self.ngram_sizes):
            raise ValueError("'ngram_sizes' must be non-empty positive sizes")
        if len(set(self.ngram_sizes)) != len(self.ngram_sizes):
            raise ValueError("'ngram_sizes' must not repeat a size")
        if self.num_filters < 1:
            raise ValueError("'num_filters' must be at least 1")
        if self.depth < 0:
            raise ValueError("'depth' must be non-negative")


@dataclass
class Gradients:
    """
    Gradients of a scalar objective.

    Attributes:
        dense (Dict[str, np.ndarray]): Gradient per named dense parameter.
        embedding_rows (Dict[int, np.ndarray]): Gradient per touched row of
            the embedding table.
    """

    dense: Dict[str, np.ndarray] = field(default_factory=dict)
    embedding_rows: Dict[int, np.ndarray] = field(default_factory=dict)

    def add_dense(self, name: str, value: np.ndarray) -> None:
        if name in self.dense:
            self.dense[name] = self.dense[name] + value
        else:
            self.dense[name] = np.array(value, dtype=np.float64)

    def add_rows(self, rows: Sequence[Optional[int]], values: np.ndarray) -> None:
        """Scatter per-position gradients onto embedding rows, skipping OOV."""
        for row, value in zip(rows, values):
            if row is None:
                continue
            if row in self.embedding_rows:
                self.embedding_rows[row] = self.embedding_rows[row] + value
            else:
                self.embedding_rows[row] = np.array(value, dtype=np.float64)

    def merge(self, other: Gradients) -> None:
        for name, value in other.dense.items():
            self.add_dense(name, value)
        for row, value in other.embedding_rows.items():
            self.add_rows([row], value[None, :])


@dataclass
class ForwardCache:
    """Everything a reverse pass needs from one scored pair."""

    score: float
    features: np.ndarray
    query_rows: List[Optional[int]]
    doc_rows: List[Optional[int]]
    query_vectors: np.ndarray
    doc_vectors: np.ndarray
    extras: Dict[str, Any] = field(default_factory=dict)


class KernelRanker(ABC):
    """
    Base of the kernel-pooling rerankers. Dense parameters live in `params`,
    the trainable embedding table in `embeddings`.
    """

    __ranker_kind__: ClassVar[RankerKind]

    def __init__(
        self,
        store: EmbeddingStore,
        config: RerankerConfig,
        params: Dict[str, np.ndarray],
        max_query_length: int = 32,
        max_doc_length: int = 256,
    ) -> None:
        self.store = store
        self.config = config
        self.params = params
        self.embeddings = np.array(store.matrix, dtype=np.float64)
        self.max_query_length = max_query_length
        self.max_doc_length = max_doc_length

    @property
    def kind(self) -> RankerKind:
        return self.__ranker_kind__

    @property
    def kernels(self) -> KernelBank:
        return self.config.kernels

    @property
    def feature_count(self) -> int:
        return int(self.params["w"].shape[0])

    @classmethod
    @abstractmethod
    def initialize(
        cls, store: EmbeddingStore, config: RerankerConfig, seed: int = 0
    ) -> KernelRanker:
        """Create a model with seeded random parameters."""
        pass

    @abstractmethod
    def _features(
        self, query_vectors: np.ndarray, doc_vectors: np.ndarray
    ) -> Tuple[np.ndarray, Dict[str, Any]]:
        pass

    @abstractmethod
    def _features_backward(
        self, grad_features: np.ndarray, cache: ForwardCache, gradients: Gradients
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Accumulate parameter gradients; return input-vector gradients."""
        pass

    def _rows(self, tokens: Sequence[str]) -> List[Optional[int]]:
        return [self.store.row(token) for token in tokens]

    def _vectors(self, rows: Sequence[Optional[int]]) -> np.ndarray:
        vectors = np.zeros((len(rows), self.embeddings.shape[1]), dtype=np.float64)
        for position, row in enumerate(rows):
            if row is not None:
                vectors[position] = self.embeddings[row]
        return vectors

    def forward(self, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> ForwardCache:
        """Score a pair after truncation, keeping intermediates for `backward`."""
        query_tokens = list(query_tokens)[: self.max_query_length]
        doc_tokens = list(doc_tokens)[: self.max_doc_length]
        if not query_tokens or not doc_tokens:
            raise DegeneratePairError("query and document must each have at least one token")

        query_rows = self._rows(query_tokens)
        doc_rows = self._rows(doc_tokens)
        query_vectors = self._vectors(query_rows)
        doc_vectors = self._vectors(doc_rows)
        features, extras = self._features(query_vectors, doc_vectors)
        logit = float(self.params["w"] @ features + self.params["b"])
        return ForwardCache(
            math.tanh(logit),
            features,
            query_rows,
            doc_rows,
            query_vectors,
            doc_vectors,
            extras,
        )

    def score(self, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> float:
        """`tanh(w . phi + b)` of a query/document pair."""
        return self.forward(query_tokens, doc_tokens).score

    def features(self, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> np.ndarray:
        return self.forward(query_tokens, doc_tokens).features

    def backward(self, cache: ForwardCache, grad_score: float, gradients: Gradients) -> None:
        """Add the gradients of `grad_score * score` to `gradients`."""
        if grad_score == 0.0:
            return

        grad_logit = grad_score * (1.0 - cache.score**2)
        gradients.add_dense("w", grad_logit * cache.features)
        gradients.add_dense("b", np.array(grad_logit))
        grad_features = grad_logit * self.params["w"]
        grad_queries, grad_docs = self._features_backward(grad_features, cache, gradients)
        gradients.add_rows(cache.query_rows, grad_queries)
        gradients.add_rows(cache.doc_rows, grad_docs)

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter, restorable with `restore`."""
        state = {name: value.copy() for name, value in self.params.items()}
        state["embeddings"] = self.embeddings.copy()
        return state

    def restore(self, state: Dict[str, np.ndarray]) -> None:
        for name in self.params:
            self.params[name] = state[name].copy()
        self.embeddings = state["embeddings"].copy()

    def embedding_updates(self) -> Dict[str, np.ndarray]:
        """Vectors of the tokens whose embeddings differ from the store."""
        changed = np.flatnonzero(np.any(self.embeddings != self.store.matrix, axis=1))
        return {self.store.tokens[row]: self.embeddings[row].copy() for row in changed.tolist()}


def _pool_forward(
    queries: np.ndarray, docs: np.ndarray, kernels: KernelBank, epsilon: float
) -> Tuple[np.ndarray, CosineCache, PoolCache]:
    matrix, cosine_cache = cosine_matrix_forward(queries, docs)
    features, pool_cache = kernel_pool_forward(matrix, kernels, epsilon)
    return features, cosine_cache, pool_cache


class KnrmModel(KernelRanker):
    """Kernel pooling over word-level translation matrices."""

    __ranker_kind__: ClassVar[RankerKind] = "knrm"

    @classmethod
    def initialize(
        cls, store: EmbeddingStore, config: RerankerConfig, seed: int = 0
    ) -> KnrmModel:
        rng = np.random.default_rng(seed)
        params = {
            "w": rng.uniform(-_W_INIT_SCALE, _W_INIT_SCALE, config.kernels.count),
            "b": np.array(0.0),
        }
        return cls(store, config, params)

    def _features(
        self, query_vectors: np.ndarray, doc_vectors: np.ndarray
    ) -> Tuple[np.ndarray, Dict[str, Any]]:
        features, cosine_cache, pool_cache = _pool_forward(
            query_vectors, doc_vectors, self.kernels, self.config.epsilon
        )
        return features, {"cosine": cosine_cache, "pool": pool_cache}

    def _features_backward(
        self, grad_features: np.ndarray, cache: ForwardCache, gradients: Gradients
    ) -> Tuple[np.ndarray, np.ndarray]:
        grad_matrix = kernel_pool_backward(grad_features, self.kernels, cache.extras["pool"])
        return cosine_matrix_backward(grad_matrix, cache.extras["cosine"])


@dataclass
class _ConvOutput:
    """One n-gram size applied to one side of a pair."""

    windows: np.ndarray
    pre_activation: np.ndarray
    hidden: np.ndarray


class ConvKnrmModel(KernelRanker):
    """
    Kernel pooling over translation matrices of convolved n-gram vectors,
    one matrix per (query size, document size) pair.
    """

    __ranker_kind__: ClassVar[RankerKind] = "conv_knrm"

    @classmethod
    def initialize(
        cls, store: EmbeddingStore, config: RerankerConfig, seed: int = 0
    ) -> ConvKnrmModel:
        rng = np.random.default_rng(seed)
        sizes = config.ngram_sizes
        params: Dict[str, np.ndarray] = {
            "w": rng.uniform(
                -_W_INIT_SCALE, _W_INIT_SCALE, len(sizes) ** 2 * config.kernels.count
            ),
            "b": np.array(0.0),
        }
        for size in sizes:
            bound = 1.0 / math.sqrt(size * store.dim)
            params[f"filters_{size}"] = rng.uniform(
                -bound, bound, (config.num_filters, size, store.dim)
            )
            params[f"filter_bias_{size}"] = np.zeros(config.num_filters)
        return cls(store, config, params)

    def _convolve(self, vectors: np.ndarray, size: int) -> Optional[_ConvOutput]:
        length, dim = vectors.shape
        if length < size:
            return None

        windows = sliding_window_view(vectors, size, axis=0)
        windows = windows.transpose(0, 2, 1).reshape(length - size + 1, size * dim)
        filters = self.params[f"filters_{size}"].reshape(-1, size * dim)
        pre_activation = windows @ filters.T + self.params[f"filter_bias_{size}"]
        return _ConvOutput(windows, pre_activation, np.maximum(pre_activation, 0.0))

    def _convolve_backward(
        self,
        grad_hidden: np.ndarray,
        output: _ConvOutput,
        size: int,
        grad_vectors: np.ndarray,
        gradients: Gradients,
    ) -> None:
        filters = self.params[f"filters_{size}"]
        grad_pre = grad_hidden * (output.pre_activation > 0.0)
        gradients.add_dense(f"filters_{size}", (grad_pre.T @ output.windows).reshape(filters.shape))
        gradients.add_dense(f"filter_bias_{size}", grad_pre.sum(axis=0))

        positions = grad_pre.shape[0]
        grad_windows = (grad_pre @ filters.reshape(filters.shape[0], -1)).reshape(
            positions, size, -1
        )
        for offset in range(size):
            grad_vectors[offset : offset + positions] += grad_windows[:, offset, :]

    def _features(
        self, query_vectors: np.ndarray, doc_vectors: np.ndarray
    ) -> Tuple[np.ndarray, Dict[str, Any]]:
        sizes = self.config.ngram_sizes
        query_outputs = {size: self._convolve(query_vectors, size) for size in sizes}
        doc_outputs = {size: self._convolve(doc_vectors, size) for size in sizes}
        sentinel = np.full(self.kernels.count, math.log(self.config.epsilon))

        blocks: List[np.ndarray] = []
        pair_caches: Dict[Tuple[int, int], Tuple[CosineCache, PoolCache]] = {}
        for query_size in sizes:
            for doc_size in sizes:
                query_output = query_outputs[query_size]
                doc_output = doc_outputs[doc_size]
                if query_output is None or doc_output is None:
                    blocks.append(sentinel.copy())
                    continue

                features, cosine_cache, pool_cache = _pool_forward(
                    query_output.hidden, doc_output.hidden, self.kernels, self.config.epsilon
                )
                blocks.append(features)
                pair_caches[(query_size, doc_size)] = (cosine_cache, pool_cache)

        extras = {"query": query_outputs, "doc": doc_outputs, "pairs": pair_caches}
        return np.concatenate(blocks), extras

    def _features_backward(
        self, grad_features: np.ndarray, cache: ForwardCache, gradients: Gradients
    ) -> Tuple[np.ndarray, np.ndarray]:
        sizes = self.config.ngram_sizes
        count = self.kernels.count
        query_outputs: Dict[int, Optional[_ConvOutput]] = cache.extras["query"]
        doc_outputs: Dict[int, Optional[_ConvOutput]] = cache.extras["doc"]
        grad_query_hidden = {
            size: np.zeros_like(output.hidden)
            for size, output in query_outputs.items()
            if output is not None
        }
        grad_doc_hidden = {
            size: np.zeros_like(output.hidden)
            for size, output in doc_outputs.items()
            if output is not None
        }

        block = 0
        for query_size in sizes:
            for doc_size in sizes:
                pair_cache = cache.extras["pairs"].get((query_size, doc_size))
                block_grad = grad_features[block * count : (block + 1) * count]
                block += 1
                if pair_cache is None:
                    continue

                cosine_cache, pool_cache = pair_cache
                grad_matrix = kernel_pool_backward(block_grad, self.kernels, pool_cache)
                grad_query, grad_doc = cosine_matrix_backward(grad_matrix, cosine_cache)
                grad_query_hidden[query_size] += grad_query
                grad_doc_hidden[doc_size] += grad_doc

        grad_queries = np.zeros_like(cache.query_vectors)
        grad_docs = np.zeros_like(cache.doc_vectors)
        for size, grad_hidden in grad_query_hidden.items():
            output = query_outputs[size]
            assert output is not None
            self._convolve_backward(grad_hidden, output, size, grad_queries, gradients)
        for size, grad_hidden in grad_doc_hidden.items():
            output = doc_outputs[size]
            assert output is not None
            self._convolve_backward(grad_hidden, output, size, grad_docs, gradients)
        return grad_queries, grad_docs


_RANKERS: Dict[RankerKind, Type[KernelRanker]] = {
    "knrm": KnrmModel,
    "conv_knrm": ConvKnrmModel,
}


def ranker_class(kind: RankerKind) -> Type[KernelRanker]:
    ranker = _RANKERS.get(kind)
    if ranker is None:
        raise ValueError(f"'kind' must be one of {RANKER_KINDS}, got {kind!r}")
    return ranker


def create_model(
    store: EmbeddingStore,
    config: RerankerConfig,
    seed: int = 0,
    max_query_length: int = 32,
    max_doc_length: int = 256,
) -> KernelRanker:
    """Initialize the reranker `config.kind` names with seeded parameters."""
    model = ranker_class(config.kind).initialize(store, config, seed)
    model.max_query_length = max_query_length
    model.max_doc_length = max_doc_length
    logger.debug("Initialized %s with %d ranking features", config.kind, model.feature_count)
    return model


def knrm_score(
    model: KernelRanker, query_tokens: Sequence[str], doc_tokens: Sequence[str]
) -> float:
    """Score of a K-NRM model; `model.kind` must be `knrm`."""
    if not isinstance(model, KnrmModel):
        raise TypeError("'model' must be a KnrmModel")
    return model.score(query_tokens, doc_tokens)


def convknrm_score(
    model: KernelRanker, query_tokens: Sequence[str], doc_tokens: Sequence[str]
) -> float:
    """Score of a Conv-KNRM model; `model.kind` must be `conv_knrm`."""
    if not isinstance(model, ConvKnrmModel):
        raise TypeError("'model' must be a ConvKnrmModel")
    return model.score(query_tokens, doc_tokens)


def _rerank_list(
    model: KernelRanker,
    ranked: RankedList,
    corpus: Mapping[str, Sequence[str]],
    queries: Mapping[str, Sequence[str]],
    depth: int,
) -> RankedList:
    query_tokens = queries.get(ranked.query_id)
    if query_tokens is None:
        raise MissingInputError(f"query {ranked.query_id!r} of the run has no text")

    scores: Dict[str, float] = {}
    for doc_id, _ in ranked.entries[:depth]:
        doc_tokens = corpus.get(doc_id)
        if doc_tokens is None:
            raise MissingInputError(f"document {doc_id!r} of the run is not in the corpus")
        try:
            scores[doc_id] = model.score(query_tokens, doc_tokens)
        except DegeneratePairError:
            logger.warning(
                "Pair (%s, %s) has no tokens to match; scored -1.0", ranked.query_id, doc_id
            )
            scores[doc_id] = -1.0

    entries = rank_entries(scores)
    if entries:
        floor = entries[-1][1]
        for offset, (doc_id, _) in enumerate(ranked.entries[depth:], start=1):
            entries.append((doc_id, floor - offset))
    return RankedList(ranked.query_id, tuple(entries))


def rerank(
    model: KernelRanker,
    run: TrecRun,
    corpus: Mapping[str, Sequence[str]],
    queries: Mapping[str, Sequence[str]],
    depth: int,
    threading: Optional[ThreadingSettings] = None,
    run_tag: Optional[str] = None,
) -> TrecRun:
    """
    Rescore the top `depth` documents of every query with the model.

    Documents below `depth` keep their first-stage order and are scored
    below every rescored document. `corpus` and `queries` map ids to
    token lists.
    """
    if depth < 0:
        raise ValueError(f"'depth' must be non-negative, got {depth}")
    if depth == 0:
        return run

    ranked_lists = map_in_threads(
        lambda ranked: _rerank_list(model, ranked, corpus, queries, depth), list(run), threading
    )
    return TrecRun.from_lists(ranked_lists, run_tag or model.kind)
