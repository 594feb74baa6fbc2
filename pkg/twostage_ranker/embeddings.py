"""
Static word embeddings and exact dense retrieval over averaged document
vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.concurrency import ThreadingSettings, map_in_threads
from twostage_ranker.exceptions import FormatError, MissingInputError
from twostage_ranker.runs import RankedList, TrecRun
from twostage_ranker.text import (
    Document,
    FieldPolicy,
    Query,
    TokenizerConfig,
    document_tokens,
    tokenize,
)

logger = logging.getLogger(__name__)

DenseMetric: TypeAlias = Literal["dot", "cosine"]


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    """
    A token to vector table. Unknown tokens map to the zero vector.

    Attributes:
        tokens (Tuple[str, ...]): Vocabulary, one entry per matrix row.
        matrix (np.ndarray): `(len(tokens), dim)` float64 vectors.
        duplicate_count (int): Number of duplicate tokens dropped on load.
    """

    tokens: Tuple[str, ...]
    matrix: np.ndarray
    duplicate_count: int = 0

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[1] == 0:
            raise ValueError("'matrix' must be a 2-D array with at least one column")
        if self.matrix.shape[0] != len(self.tokens):
            raise ValueError("'matrix' must have one row per token")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("'tokens' must be unique")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("'matrix' must contain only finite values")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @cached_property
    def _rows(self) -> Dict[str, int]:
        return {token: row for row, token in enumerate(self.tokens)}

    def row(self, token: str) -> Optional[int]:
        """Matrix row of a token, `None` when out of vocabulary."""
        return self._rows.get(token)

    def vector(self, token: str) -> np.ndarray:
        row = self._rows.get(token)
        if row is None:
            return np.zeros(self.dim, dtype=np.float64)
        return self.matrix[row].copy()

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        """Stack the vectors of a token sequence into a `(len, dim)` array."""
        vectors = np.zeros((len(tokens), self.dim), dtype=np.float64)
        for position, token in enumerate(tokens):
            row = self._rows.get(token)
            if row is not None:
                vectors[position] = self.matrix[row]
        return vectors

    def with_matrix(self, matrix: np.ndarray) -> EmbeddingStore:
        """A store over the same vocabulary with replaced vectors."""
        return EmbeddingStore(self.tokens, np.array(matrix, dtype=np.float64), self.duplicate_count)

    def __contains__(self, token: object) -> bool:
        return token in self._rows

    def __len__(self) -> int:
        return len(self.tokens)


def load_embeddings(path: StrOrPath) -> EmbeddingStore:
    """
    Read a word2vec text file: a `vocab_size dim` header, then one
    `token v1 ... v_dim` line per token. A repeated token keeps its last
    vector.
    """
    embeddings_path = Path(path)
    if not embeddings_path.is_file():
        raise MissingInputError(f"embedding file '{embeddings_path}' does not exist")

    vectors: Dict[str, np.ndarray] = {}
    duplicate_count = 0
    vector_lines = 0
    with open(embeddings_path, "r", encoding="utf-8") as embeddings_file:
        header = embeddings_file.readline().split()
        if len(header) != 2:
            raise FormatError("expected a 'vocab_size dim' header", embeddings_path, 1)
        try:
            vocab_size, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError("header values must be integers", embeddings_path, 1) from exc
        if vocab_size < 0 or dim <= 0:
            raise FormatError("header declares an invalid shape", embeddings_path, 1)

        line_no = 1
        for line_no, line in enumerate(embeddings_file, start=2):
            fields = line.rstrip("\r\n").split(" ")
            fields = [value for value in fields if value]
            if not fields:
                continue
            if len(fields) != dim + 1:
                raise FormatError(
                    f"expected a token and {dim} values, got {len(fields) - 1} values",
                    embeddings_path,
                    line_no,
                )
            try:
                vector = np.array([float(value) for value in fields[1:]], dtype=np.float64)
            except ValueError as exc:
                message = "vector values must be numbers"
                raise FormatError(message, embeddings_path, line_no) from exc
            if not np.all(np.isfinite(vector)):
                raise FormatError("vector values must be finite", embeddings_path, line_no)

            vector_lines += 1
            token = fields[0]
            if token in vectors:
                duplicate_count += 1
                del vectors[token]
            vectors[token] = vector

    if vector_lines != vocab_size:
        raise FormatError(
            f"header declares {vocab_size} vectors, file holds {vector_lines}",
            embeddings_path,
            line_no,
        )
    if duplicate_count:
        logger.warning(
            "%d duplicate tokens in %s; the last vector of each was kept",
            duplicate_count,
            embeddings_path,
        )

    tokens = tuple(vectors)
    matrix = np.zeros((len(tokens), dim), dtype=np.float64)
    for row, token in enumerate(tokens):
        matrix[row] = vectors[token]
    logger.info("Loaded %d embeddings of dimension %d from %s", len(tokens), dim, embeddings_path)
    return EmbeddingStore(tokens, matrix, duplicate_count)


def write_embeddings(store: EmbeddingStore, path: StrOrPath) -> None:
    """Write a store in the word2vec text format `load_embeddings` reads."""
    with open(path, "w", encoding="utf-8", newline="\n") as embeddings_file:
        embeddings_file.write(f"{len(store)} {store.dim}\n")
        for token, vector in zip(store.tokens, store.matrix):
            values = " ".join(repr(float(value)) for value in vector)
            embeddings_file.write(f"{token} {values}\n")


def encode_avg(tokens: Sequence[str], store: EmbeddingStore) -> np.ndarray:
    """Mean vector of the in-vocabulary tokens; zero if there are none."""
    rows = [row for row in (store.row(token) for token in tokens) if row is not None]
    if not rows:
        return np.zeros(store.dim, dtype=np.float64)
    return store.matrix[rows].mean(axis=0)


@dataclass(frozen=True)
class DenseConfig:
    """
    How documents are pooled into the dense matrix.

    Attributes:
        metric (DenseMetric): Similarity used for retrieval.
        field_policy (FieldPolicy): Which document fields are encoded.
        tokenizer (TokenizerConfig): Tokenization applied before lookup.
    """

    metric: DenseMetric = "cosine"
    field_policy: FieldPolicy = "title+body"
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)

    def __post_init__(self) -> None:
        if self.metric not in ("dot", "cosine"):
            raise ValueError("'metric' must be one of ('dot', 'cosine')")


@dataclass(frozen=True, eq=False)
class DenseDocMatrix:
    """
    Pooled document vectors searched exhaustively.

    Attributes:
        doc_ids (Tuple[str, ...]): Document id per row.
        vectors (np.ndarray): `(num_docs, dim)` document vectors.
        metric (DenseMetric): `dot` or `cosine`.
    """

    doc_ids: Tuple[str, ...]
    vectors: np.ndarray
    metric: DenseMetric = "cosine"

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.doc_ids):
            raise ValueError("'vectors' must have one row per doc_id")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("'vectors' must not contain NaN or Inf")
        if self.metric not in ("dot", "cosine"):
            raise ValueError("'metric' must be one of ('dot', 'cosine')")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @cached_property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    def similarities(self, query_vector: np.ndarray) -> np.ndarray:
        """Similarity of the query to every row under the matrix metric."""
        query_vector = np.asarray(query_vector, dtype=np.float64)
        if query_vector.shape != (self.dim,):
            raise ValueError(
                f"query vector has shape {query_vector.shape}, expected ({self.dim},)"
            )

        dots = self.vectors @ query_vector
        if self.metric == "dot":
            return dots

        denominators = self.norms * np.linalg.norm(query_vector)
        cosines = np.divide(
            dots, denominators, out=np.zeros_like(dots), where=denominators > 0.0
        )
        return np.clip(cosines, -1.0, 1.0)


def cosine(first: np.ndarray, second: np.ndarray) -> float:
    """Cosine similarity, defined as 0 when either vector is zero."""
    denominator = float(np.linalg.norm(first) * np.linalg.norm(second))
    if denominator == 0.0:
        return 0.0
    return float(np.clip(np.dot(first, second) / denominator, -1.0, 1.0))


def build_dense(
    documents: Iterable[Document], store: EmbeddingStore, config: DenseConfig
) -> DenseDocMatrix:
    """Encode every document as the average of its token embeddings."""
    doc_ids: List[str] = []
    rows: List[np.ndarray] = []
    for document in documents:
        tokens = document_tokens(document, config.tokenizer, config.field_policy)
        doc_ids.append(document.doc_id)
        rows.append(encode_avg(tokens, store))

    vectors = np.vstack(rows) if rows else np.zeros((0, store.dim), dtype=np.float64)
    logger.info("Encoded %d documents into a %s dense matrix", len(doc_ids), config.metric)
    return DenseDocMatrix(tuple(doc_ids), vectors, config.metric)


def dense_retrieve(
    query_vector: np.ndarray, matrix: DenseDocMatrix, k: int, query_id: str = "query"
) -> RankedList:
    """Exact top-`k` documents by similarity, ties by doc_id descending."""
    if k <= 0:
        raise ValueError(f"'k' must be positive, got {k}")

    similarities = matrix.similarities(query_vector)
    scores = {doc_id: float(score) for doc_id, score in zip(matrix.doc_ids, similarities)}
    return RankedList.from_scores(query_id, scores, k)


def batch_dense_retrieve(
    queries: Sequence[Query],
    matrix: DenseDocMatrix,
    store: EmbeddingStore,
    tokenizer: TokenizerConfig,
    k: int,
    threading: Optional[ThreadingSettings] = None,
    run_tag: str = "dense",
) -> TrecRun:
    """Encode and retrieve every query, keeping input query order."""

    def retrieve_one(query: Query) -> RankedList:
        query_vector = encode_avg(tokenize(query.text, tokenizer), store)
        return dense_retrieve(query_vector, matrix, k, query.query_id)

    ranked_lists = map_in_threads(retrieve_one, queries, threading)
    logger.info("Dense-retrieved %d queries", len(queries))
    return TrecRun.from_lists(ranked_lists, run_tag)
