"""
Bag-of-words and proximity scorers over the inverted index, and first-stage
retrieval built on them.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass
from typing import (
    Any,
    ClassVar,
    DefaultDict,
    Dict,
    List,
    Literal,
    Optional,
    Sequence,
    Set,
    Tuple,
    Type,
    Union,
)

import numpy as np

from twostage_ranker._typing import TypeAlias
from twostage_ranker.concurrency import ThreadingSettings, map_in_threads
from twostage_ranker.index import InvertedIndex
from twostage_ranker.runs import RankedList, TrecRun
from twostage_ranker.text import Query, tokenize

logger = logging.getLogger(__name__)

ScorerKind: TypeAlias = Literal[
    "boolean_and",
    "boolean_or",
    "tfidf",
    "cosine",
    "coordinate_match",
    "lm_jm",
    "lm_dirichlet",
    "bm25",
    "sdm",
]
BooleanMode: TypeAlias = Literal["and", "or"]
QueryInput: TypeAlias = Union[Query, str, Sequence[str]]

SCORER_KINDS: Tuple[ScorerKind, ...] = (
    "boolean_and",
    "boolean_or",
    "tfidf",
    "cosine",
    "coordinate_match",
    "lm_jm",
    "lm_dirichlet",
    "bm25",
    "sdm",
)


@dataclass(frozen=True)
class SparseScorerConfig:
    """
    A sparse scoring model and its parameters.

    Attributes:
        kind (ScorerKind): Which model to score with.
        k1 (float): BM25 term-frequency saturation, `k1 >= 0`.
        b (float): BM25 length normalization, `0 <= b <= 1`.
        mu (float): Dirichlet prior for `lm_dirichlet` and `sdm`, `mu > 0`.
        jm_lambda (float): Jelinek-Mercer background weight, `0 < lambda < 1`.
        sdm_weights (Tuple[float, float, float]): Unigram, ordered-window and
            unordered-window weights; non-negative and summing to 1.
        sdm_window (int): Unordered window width, at least 2.
    """

    kind: ScorerKind = "bm25"
    k1: float = 0.9
    b: float = 0.4
    mu: float = 2000.0
    jm_lambda: float = 0.4
    sdm_weights: Tuple[float, float, float] = (0.85, 0.10, 0.05)
    sdm_window: int = 8

    def __post_init__(self) -> None:
        if self.kind not in SCORER_KINDS:
            raise ValueError(f"'kind' must be one of {SCORER_KINDS}, got {self.kind!r}")
        if not 0.0 < self.jm_lambda < 1.0:
            raise ValueError("'jm_lambda' must lie in (0, 1)")
        if self.mu <= 0.0:
            raise ValueError("'mu' must be positive")
        if self.k1 < 0.0:
            raise ValueError("'k1' must be non-negative")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("'b' must lie in [0, 1]")
        if len(self.sdm_weights) != 3 or any(weight < 0.0 for weight in self.sdm_weights):
            raise ValueError("'sdm_weights' must be three non-negative weights")
        if not math.isclose(sum(self.sdm_weights), 1.0, abs_tol=1e-9):
            raise ValueError("'sdm_weights' must sum to 1")
        if self.sdm_window < 2:
            raise ValueError("'sdm_window' must be at least 2")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "k1": self.k1,
            "b": self.b,
            "mu": self.mu,
            "jm_lambda": self.jm_lambda,
            "sdm_weights": list(self.sdm_weights),
            "sdm_window": self.sdm_window,
        }


class _AbstractSparseScorer(ABC):
    """
    An abstract base class for scoring documents of an index against a
    tokenized query.
    """

    __scorer_kind__: ClassVar[ScorerKind]

    def __init__(self, index: InvertedIndex) -> None:
        self.index = index

    @classmethod
    @abstractmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _AbstractSparseScorer:
        """Create the scorer from a `SparseScorerConfig`."""
        pass

    @abstractmethod
    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        """Score every candidate document, keyed by document ordinal."""
        pass

    def score(self, tokens: Sequence[str]) -> Dict[str, float]:
        """Score every candidate document, keyed by document id."""
        return {
            self.index.doc_id(ordinal): score
            for ordinal, score in self.score_ordinals(tokens).items()
        }

    def _term_frequencies(self, term: str) -> np.ndarray:
        """Dense term-frequency vector over all documents."""
        frequencies = np.zeros(len(self.index.doc_table), dtype=np.float64)
        for posting in self.index.postings(term):
            frequencies[posting.doc_ordinal] = posting.term_frequency
        return frequencies


class _Bm25Scorer(_AbstractSparseScorer):
    """Okapi BM25 with the non-negative `ln(1 + ...)` idf."""

    __scorer_kind__: ClassVar[ScorerKind] = "bm25"

    def __init__(self, index: InvertedIndex, k1: float = 0.9, b: float = 0.4) -> None:
        super().__init__(index)
        self.k1 = k1
        self.b = b

    @classmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _Bm25Scorer:
        return cls(index, config.k1, config.b)

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        stats = self.index.stats
        scores: DefaultDict[int, float] = defaultdict(float)
        for term in tokens:
            postings_list = self.index.postings(term)
            if not postings_list:
                continue

            df = len(postings_list)
            idf = math.log(1.0 + (stats.num_docs - df + 0.5) / (df + 0.5))
            for posting in postings_list:
                tf = posting.term_frequency
                doc_length = self.index.doc_table[posting.doc_ordinal].doc_length
                norm = tf + self.k1 * (1.0 - self.b + self.b * doc_length / stats.avgdl)
                scores[posting.doc_ordinal] += idf * tf * (self.k1 + 1.0) / norm
        return dict(scores)


class _TfIdfScorer(_AbstractSparseScorer):
    """Sum of `(1 + ln tf) * ln(N / df)` over query terms."""

    __scorer_kind__: ClassVar[ScorerKind] = "tfidf"

    @classmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _TfIdfScorer:
        return cls(index)

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        num_docs = self.index.stats.num_docs
        scores: DefaultDict[int, float] = defaultdict(float)
        for term in tokens:
            postings_list = self.index.postings(term)
            if not postings_list:
                continue

            idf = math.log(num_docs / len(postings_list))
            for posting in postings_list:
                scores[posting.doc_ordinal] += (1.0 + math.log(posting.term_frequency)) * idf
        return dict(scores)


class _CosineScorer(_AbstractSparseScorer):
    """Cosine between ltc-weighted query and document vectors."""

    __scorer_kind__: ClassVar[ScorerKind] = "cosine"

    @classmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _CosineScorer:
        return cls(index)

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        num_docs = self.index.stats.num_docs
        query_counts: Dict[str, int] = {}
        for term in tokens:
            if self.index.postings(term):
                query_counts[term] = query_counts.get(term, 0) + 1

        query_weights = {
            term: (1.0 + math.log(count)) * math.log(num_docs / len(self.index.postings(term)))
            for term, count in query_counts.items()
        }
        query_norm = math.sqrt(sum(weight * weight for weight in query_weights.values()))

        dots: DefaultDict[int, float] = defaultdict(float)
        for term, query_weight in query_weights.items():
            postings_list = self.index.postings(term)
            idf = math.log(num_docs / len(postings_list))
            for posting in postings_list:
                doc_weight = (1.0 + math.log(posting.term_frequency)) * idf
                dots[posting.doc_ordinal] += query_weight * doc_weight

        doc_norms = self.index.doc_norms
        scores: Dict[int, float] = {}
        for ordinal, dot in dots.items():
            denominator = query_norm * doc_norms[ordinal]
            scores[ordinal] = dot / denominator if denominator > 0.0 else 0.0
        return scores


class _CoordinateMatchScorer(_AbstractSparseScorer):
    """Number of distinct query terms present in the document."""

    __scorer_kind__: ClassVar[ScorerKind] = "coordinate_match"

    @classmethod
    def from_config(
        cls, index: InvertedIndex, config: SparseScorerConfig
    ) -> _CoordinateMatchScorer:
        return cls(index)

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        scores: DefaultDict[int, float] = defaultdict(float)
        for term in dict.fromkeys(tokens):
            for posting in self.index.postings(term):
                scores[posting.doc_ordinal] += 1.0
        return dict(scores)


class _BooleanScorer(_AbstractSparseScorer):
    """Unranked conjunctive or disjunctive match; every match scores 1."""

    __scorer_kind__: ClassVar[ScorerKind] = "boolean_or"

    def __init__(self, index: InvertedIndex, mode: BooleanMode = "or") -> None:
        super().__init__(index)
        if mode not in ("and", "or"):
            raise ValueError("'mode' must be one of ('and', 'or')")
        self.mode = mode

    @classmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _BooleanScorer:
        return cls(index, "and" if config.kind == "boolean_and" else "or")

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        matches: Optional[Set[int]] = None
        for term in dict.fromkeys(tokens):
            ordinals = {posting.doc_ordinal for posting in self.index.postings(term)}
            if matches is None:
                matches = ordinals
            elif self.mode == "and":
                matches &= ordinals
            else:
                matches |= ordinals
        return {ordinal: 1.0 for ordinal in sorted(matches or ())}


class _BooleanAndScorer(_BooleanScorer):
    __scorer_kind__: ClassVar[ScorerKind] = "boolean_and"


class _LmDirichletScorer(_AbstractSparseScorer):
    """Query likelihood with Dirichlet smoothing."""

    __scorer_kind__: ClassVar[ScorerKind] = "lm_dirichlet"

    def __init__(self, index: InvertedIndex, mu: float = 2000.0) -> None:
        super().__init__(index)
        if mu <= 0.0:
            raise ValueError("'mu' must be positive")
        self.mu = mu

    @classmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _LmDirichletScorer:
        return cls(index, config.mu)

    def unigram_component(self, tokens: Sequence[str]) -> Optional[np.ndarray]:
        """Per-document log-likelihood, `None` when no term has `ctf > 0`."""
        total_terms = self.index.stats.total_terms
        doc_lengths = self.index.doc_lengths
        component: Optional[np.ndarray] = None
        for term in tokens:
            ctf = self.index.term_stats(term).ctf
            if ctf == 0:
                continue

            background = self.mu * ctf / total_terms
            smoothed = self._term_frequencies(term) + background
            term_scores = np.log(smoothed / (doc_lengths + self.mu))
            component = term_scores if component is None else component + term_scores
        return component

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        component = self.unigram_component(tokens)
        if component is None:
            return {}
        return {ordinal: float(score) for ordinal, score in enumerate(component)}


class _LmJelinekMercerScorer(_AbstractSparseScorer):
    """Query likelihood with Jelinek-Mercer smoothing."""

    __scorer_kind__: ClassVar[ScorerKind] = "lm_jm"

    def __init__(self, index: InvertedIndex, jm_lambda: float = 0.4) -> None:
        super().__init__(index)
        if not 0.0 < jm_lambda <= 1.0:
            raise ValueError("'jm_lambda' must lie in (0, 1]")
        self.jm_lambda = jm_lambda

    @classmethod
    def from_config(
        cls, index: InvertedIndex, config: SparseScorerConfig
    ) -> _LmJelinekMercerScorer:
        return cls(index, config.jm_lambda)

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        total_terms = self.index.stats.total_terms
        doc_lengths = self.index.doc_lengths
        nonempty = doc_lengths > 0
        safe_lengths = np.where(nonempty, doc_lengths, 1.0)

        component: Optional[np.ndarray] = None
        for term in tokens:
            ctf = self.index.term_stats(term).ctf
            if ctf == 0:
                continue

            foreground = (1.0 - self.jm_lambda) * self._term_frequencies(term) / safe_lengths
            term_scores = np.log(foreground + self.jm_lambda * ctf / total_terms)
            component = term_scores if component is None else component + term_scores

        if component is None:
            return {}
        return {
            ordinal: float(component[ordinal])
            for ordinal in np.flatnonzero(nonempty).tolist()
        }


def _positions_by_doc(index: InvertedIndex, term: str) -> Dict[int, Tuple[int, ...]]:
    return {posting.doc_ordinal: posting.positions for posting in index.postings(term)}


def ordered_window_count(first: Sequence[int], second: Sequence[int]) -> int:
    """Occurrences of `second` immediately following `first`."""
    following = set(second)
    return sum(1 for position in first if position + 1 in following)


def unordered_window_count(
    first: Sequence[int], second: Sequence[int], window: int, same_term: bool = False
) -> int:
    """
    Position pairs of the two terms closer than `window` tokens, in either
    order. Pairs of one term with itself are counted once.
    """
    count = 0
    for i in first:
        for j in second:
            if i == j or abs(i - j) >= window:
                continue
            if same_term and j < i:
                continue
            count += 1
    return count


class _SdmScorer(_LmDirichletScorer):
    """
    Sequential dependence model: Dirichlet-smoothed unigram, ordered-bigram
    and unordered-window likelihoods, linearly interpolated.
    """

    __scorer_kind__: ClassVar[ScorerKind] = "sdm"

    def __init__(
        self,
        index: InvertedIndex,
        weights: Tuple[float, float, float] = (0.85, 0.10, 0.05),
        window: int = 8,
        mu: float = 2000.0,
    ) -> None:
        super().__init__(index, mu)
        if window < 2:
            raise ValueError("'window' must be at least 2")
        self.weights = weights
        self.window = window

    @classmethod
    def from_config(cls, index: InvertedIndex, config: SparseScorerConfig) -> _SdmScorer:
        return cls(index, config.sdm_weights, config.sdm_window, config.mu)

    def _pair_component(self, tokens: Sequence[str], ordered: bool) -> Optional[np.ndarray]:
        total_terms = self.index.stats.total_terms
        doc_lengths = self.index.doc_lengths
        component: Optional[np.ndarray] = None
        for first, second in zip(tokens, tokens[1:]):
            first_positions = _positions_by_doc(self.index, first)
            second_positions = _positions_by_doc(self.index, second)

            counts = np.zeros(len(self.index.doc_table), dtype=np.float64)
            for ordinal in sorted(first_positions.keys() & second_positions.keys()):
                if ordered:
                    counts[ordinal] = ordered_window_count(
                        first_positions[ordinal], second_positions[ordinal]
                    )
                else:
                    counts[ordinal] = unordered_window_count(
                        first_positions[ordinal],
                        second_positions[ordinal],
                        self.window,
                        same_term=first == second,
                    )

            collection_count = counts.sum()
            if collection_count == 0:
                continue
            background = self.mu * collection_count / total_terms
            pair_scores = np.log((counts + background) / (doc_lengths + self.mu))
            component = pair_scores if component is None else component + pair_scores
        return component

    def score_ordinals(self, tokens: Sequence[str]) -> Dict[int, float]:
        components = (
            self.unigram_component(tokens),
            self._pair_component(tokens, ordered=True),
            self._pair_component(tokens, ordered=False),
        )
        if all(component is None for component in components):
            return {}

        combined = np.zeros(len(self.index.doc_table), dtype=np.float64)
        for weight, component in zip(self.weights, components):
            if component is not None:
                combined = combined + weight * component
        return {ordinal: float(score) for ordinal, score in enumerate(combined)}


_SCORERS: Dict[ScorerKind, Type[_AbstractSparseScorer]] = {
    "boolean_and": _BooleanAndScorer,
    "boolean_or": _BooleanScorer,
    "tfidf": _TfIdfScorer,
    "cosine": _CosineScorer,
    "coordinate_match": _CoordinateMatchScorer,
    "lm_jm": _LmJelinekMercerScorer,
    "lm_dirichlet": _LmDirichletScorer,
    "bm25": _Bm25Scorer,
    "sdm": _SdmScorer,
}


def create_scorer(index: InvertedIndex, config: SparseScorerConfig) -> _AbstractSparseScorer:
    """Instantiate the scorer registered for `config.kind`."""
    scorer_class = _SCORERS.get(config.kind)
    if scorer_class is None:
        raise ValueError(f"'kind' must be one of {SCORER_KINDS}")
    return scorer_class.from_config(index, config)


def score_bm25(
    query: Sequence[str], index: InvertedIndex, k1: float = 0.9, b: float = 0.4
) -> Dict[str, float]:
    """BM25 scores of the documents containing at least one query term."""
    return _Bm25Scorer(index, k1, b).score(query)


def score_lm_dirichlet(
    query: Sequence[str], index: InvertedIndex, mu: float = 2000.0
) -> Dict[str, float]:
    """Dirichlet-smoothed query log-likelihood of every document."""
    return _LmDirichletScorer(index, mu).score(query)


def score_lm_jm(
    query: Sequence[str], index: InvertedIndex, jm_lambda: float = 0.4
) -> Dict[str, float]:
    """Jelinek-Mercer query log-likelihood of every non-empty document."""
    return _LmJelinekMercerScorer(index, jm_lambda).score(query)


def score_tfidf(query: Sequence[str], index: InvertedIndex) -> Dict[str, float]:
    return _TfIdfScorer(index).score(query)


def score_cosine(query: Sequence[str], index: InvertedIndex) -> Dict[str, float]:
    return _CosineScorer(index).score(query)


def score_coordinate_match(query: Sequence[str], index: InvertedIndex) -> Dict[str, float]:
    return _CoordinateMatchScorer(index).score(query)


def score_boolean(
    query: Sequence[str], index: InvertedIndex, mode: BooleanMode = "or"
) -> Dict[str, float]:
    """Documents matching all (`and`) or any (`or`) query terms, scored 1."""
    return _BooleanScorer(index, mode).score(query)


def score_sdm(
    query: Sequence[str],
    index: InvertedIndex,
    weights: Tuple[float, float, float] = (0.85, 0.10, 0.05),
    window: int = 8,
    mu: float = 2000.0,
) -> Dict[str, float]:
    """Sequential dependence model scores of every document."""
    return _SdmScorer(index, weights, window, mu).score(query)


def query_tokens(query: QueryInput, index: InvertedIndex) -> Tuple[str, List[str]]:
    """Resolve a query into `(query_id, tokens)` using the index tokenizer."""
    if isinstance(query, Query):
        return query.query_id, tokenize(query.text, index.tokenizer)
    if isinstance(query, str):
        return "query", tokenize(query, index.tokenizer)
    return "query", list(query)


def retrieve(
    query: QueryInput, index: InvertedIndex, config: SparseScorerConfig, k: int
) -> RankedList:
    """Score the index against a query and keep the top `k` documents."""
    if k <= 0:
        raise ValueError(f"'k' must be positive, got {k}")

    query_id, tokens = query_tokens(query, index)
    scores = create_scorer(index, config).score(tokens)
    return RankedList.from_scores(query_id, scores, k)


def batch_retrieve(
    queries: Sequence[Query],
    index: InvertedIndex,
    config: SparseScorerConfig,
    k: int,
    threading: Optional[ThreadingSettings] = None,
    run_tag: Optional[str] = None,
) -> TrecRun:
    """
    Retrieve the top `k` documents of every query. Queries may be scored
    concurrently; the run lists them in input order either way.
    """
    if k <= 0:
        raise ValueError(f"'k' must be positive, got {k}")

    ranked_lists = map_in_threads(
        lambda query: retrieve(query, index, config, k), queries, threading
    )
    logger.info("Retrieved %d queries with %s", len(queries), config.kind)
    return TrecRun.from_lists(ranked_lists, run_tag or config.kind)


def rescore_run(
    run: TrecRun,
    queries: Sequence[Query],
    index: InvertedIndex,
    config: SparseScorerConfig,
    run_tag: Optional[str] = None,
) -> TrecRun:
    """
    Score only the candidates of an existing run with a sparse model.
    Candidates the model does not match are left out of the result.
    """
    scorer = create_scorer(index, config)
    texts = {query.query_id: query for query in queries}
    ranked_lists = []
    for ranked in run:
        query = texts.get(ranked.query_id)
        if query is None:
            logger.warning("Query %s of the run has no text; skipped", ranked.query_id)
            continue

        scores = scorer.score(tokenize(query.text, index.tokenizer))
        candidates = {doc_id: scores[doc_id] for doc_id in ranked.doc_ids if doc_id in scores}
        ranked_lists.append(RankedList.from_scores(ranked.query_id, candidates))
    return TrecRun.from_lists(ranked_lists, run_tag or config.kind)
