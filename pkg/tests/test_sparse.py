from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import pytest

from twostage_ranker import (
    Document,
    Query,
    RankedList,
    SparseScorerConfig,
    ThreadingSettings,
    TokenizerConfig,
    TrecRun,
    batch_retrieve,
    build_index,
    load_corpus,
    load_queries,
    rescore_run,
    retrieve,
    score_bm25,
    score_boolean,
    score_coordinate_match,
    score_cosine,
    score_lm_dirichlet,
    score_lm_jm,
    score_sdm,
    score_tfidf,
)
from twostage_ranker.index import InvertedIndex
from twostage_ranker.sparse import (
    SCORER_KINDS,
    create_scorer,
    ordered_window_count,
    unordered_window_count,
)

from tests.helpers import (
    PLAIN_TOKENIZER,
    TOY_CORPUS_PATH,
    TOY_QUERIES_PATH,
    brute_bm25,
    brute_boolean,
    brute_coordinate_match,
    brute_cosine,
    brute_lm_dirichlet,
    brute_lm_jm,
    brute_ordered_count,
    brute_sdm,
    brute_tfidf,
    brute_unordered_count,
    random_documents,
    random_query,
)

CORPUS_SEEDS = [0, 1, 2, 3]
QUERY_SEEDS = [10, 11, 12]

Scorer = Callable[[Sequence[str], InvertedIndex], Dict[str, float]]
Oracle = Callable[[Sequence[str], List[Document]], Dict[str, float]]


@dataclass(frozen=True)
class OracleTestCase:
    """
    Dataclass representing a sparse scorer and the brute-force computation
    over raw token lists it must agree with.
    """

    name: str
    scorer: Scorer
    oracle: Oracle


ORACLE_CASES = [
    OracleTestCase("bm25", score_bm25, brute_bm25),
    OracleTestCase(
        "bm25-k1-b",
        lambda query, index: score_bm25(query, index, k1=1.2, b=0.75),
        lambda query, documents: brute_bm25(query, documents, k1=1.2, b=0.75),
    ),
    OracleTestCase("tfidf", score_tfidf, brute_tfidf),
    OracleTestCase("cosine", score_cosine, brute_cosine),
    OracleTestCase("coordinate_match", score_coordinate_match, brute_coordinate_match),
    OracleTestCase(
        "boolean_or",
        lambda query, index: score_boolean(query, index, "or"),
        lambda query, documents: brute_boolean(query, documents, "or"),
    ),
    OracleTestCase(
        "boolean_and",
        lambda query, index: score_boolean(query, index, "and"),
        lambda query, documents: brute_boolean(query, documents, "and"),
    ),
    OracleTestCase("lm_dirichlet", score_lm_dirichlet, brute_lm_dirichlet),
    OracleTestCase(
        "lm_dirichlet-mu",
        lambda query, index: score_lm_dirichlet(query, index, mu=50.0),
        lambda query, documents: brute_lm_dirichlet(query, documents, mu=50.0),
    ),
    OracleTestCase("lm_jm", score_lm_jm, brute_lm_jm),
    OracleTestCase("sdm", score_sdm, brute_sdm),
    OracleTestCase(
        "sdm-window",
        lambda query, index: score_sdm(query, index, (0.6, 0.2, 0.2), window=3, mu=100.0),
        lambda query, documents: brute_sdm(query, documents, (0.6, 0.2, 0.2), window=3, mu=100.0),
    ),
]


@pytest.mark.parametrize("corpus_seed", CORPUS_SEEDS)
@pytest.mark.parametrize("test_case", ORACLE_CASES, ids=lambda test_case: test_case.name)
def test_scores_match_brute_force(test_case: OracleTestCase, corpus_seed: int) -> None:
    """Test every scorer against a direct computation from raw token lists."""
    documents = random_documents(corpus_seed)
    index = build_index(documents, PLAIN_TOKENIZER)
    for query_seed in QUERY_SEEDS:
        query = random_query(corpus_seed * 100 + query_seed)
        scores = test_case.scorer(query, index)
        expected = test_case.oracle(query, documents)
        assert scores.keys() == expected.keys()
        for doc_id, value in expected.items():
            assert scores[doc_id] == pytest.approx(value, rel=1e-9, abs=1e-12)


def test_unknown_terms_score_nothing() -> None:
    """Test that a query of unknown terms matches no document."""
    index = build_index(random_documents(0), PLAIN_TOKENIZER)
    for kind in SCORER_KINDS:
        assert retrieve(["unknown"], index, SparseScorerConfig(kind), 10) == RankedList("query")


def test_sdm_reduces_to_dirichlet() -> None:
    """Test that SDM with all weight on unigrams equals Dirichlet smoothing."""
    index = build_index(random_documents(5), PLAIN_TOKENIZER)
    query = ["w1", "w2", "w3"]
    sdm = score_sdm(query, index, (1.0, 0.0, 0.0))
    dirichlet = score_lm_dirichlet(query, index)
    assert sdm.keys() == dirichlet.keys()
    for doc_id, value in dirichlet.items():
        assert sdm[doc_id] == pytest.approx(value)


@dataclass(frozen=True)
class WindowTestCase:
    """Dataclass representing a window count test case over a token list."""

    tokens: List[str]
    first: str
    second: str
    window: int
    ordered: int
    unordered: int


@pytest.mark.parametrize(
    "test_case",
    [
        WindowTestCase(["a", "b", "a", "b"], "a", "b", 8, 2, 4),
        WindowTestCase(["a", "b", "a", "b"], "a", "b", 2, 2, 3),
        WindowTestCase(["b", "a"], "a", "b", 8, 0, 1),
        WindowTestCase(["a", "x", "x", "x", "b"], "a", "b", 4, 0, 0),
        WindowTestCase(["a", "a", "a"], "a", "a", 8, 2, 3),
        WindowTestCase(["a", "x", "a"], "a", "a", 2, 0, 0),
    ],
)
def test_window_counts(test_case: WindowTestCase) -> None:
    """Test ordered and unordered window counts over positions."""
    positions = {
        term: [i for i, token in enumerate(test_case.tokens) if token == term]
        for term in (test_case.first, test_case.second)
    }
    first, second = positions[test_case.first], positions[test_case.second]
    same = test_case.first == test_case.second
    assert ordered_window_count(first, second) == test_case.ordered
    assert unordered_window_count(first, second, test_case.window, same) == test_case.unordered
    ordered = brute_ordered_count(test_case.tokens, test_case.first, test_case.second)
    assert ordered == test_case.ordered
    assert (
        brute_unordered_count(test_case.tokens, test_case.first, test_case.second, test_case.window)
        == test_case.unordered
    )


@pytest.mark.parametrize("kind", SCORER_KINDS)
def test_retrieve_returns_top_k(kind: str) -> None:
    """Test that retrieval keeps the k best scores in ranking order."""
    documents = random_documents(7, num_docs=40)
    index = build_index(documents, PLAIN_TOKENIZER)
    config = SparseScorerConfig(kind)
    query = ["w0", "w3", "w5"]
    ranked = retrieve(query, index, config, k=5)

    scores = create_scorer(index, config).score(query)
    assert len(ranked) == min(5, len(scores))
    kept = set(ranked.doc_ids)
    if kept:
        lowest_kept = min(score for _, score in ranked.entries)
        assert all(score <= lowest_kept for doc_id, score in scores.items() if doc_id not in kept)


def test_retrieve_rejects_non_positive_k() -> None:
    """Test that k must be positive."""
    index = build_index(random_documents(0), PLAIN_TOKENIZER)
    with pytest.raises(ValueError):
        retrieve(["w1"], index, SparseScorerConfig(), 0)


@dataclass(frozen=True)
class ScorerConfigTestCase:
    """Dataclass representing an invalid sparse scorer configuration."""

    kwargs: Dict[str, object]


@pytest.mark.parametrize(
    "test_case",
    [
        ScorerConfigTestCase({"kind": "bm26"}),
        ScorerConfigTestCase({"jm_lambda": 0.0}),
        ScorerConfigTestCase({"jm_lambda": 1.0}),
        ScorerConfigTestCase({"mu": 0.0}),
        ScorerConfigTestCase({"k1": -0.1}),
        ScorerConfigTestCase({"b": 1.5}),
        ScorerConfigTestCase({"sdm_weights": (0.5, 0.5, 0.5)}),
        ScorerConfigTestCase({"sdm_weights": (1.2, -0.1, -0.1)}),
        ScorerConfigTestCase({"sdm_window": 1}),
    ],
)
def test_invalid_scorer_config(test_case: ScorerConfigTestCase) -> None:
    """Test that out-of-range scorer parameters are rejected."""
    with pytest.raises(ValueError):
        SparseScorerConfig(**test_case.kwargs)  # type: ignore[arg-type]


def test_batch_retrieve_is_thread_independent() -> None:
    """Test that concurrent retrieval produces the same run in query order."""
    index = build_index(load_corpus(TOY_CORPUS_PATH), TokenizerConfig())
    queries = load_queries(TOY_QUERIES_PATH)
    serial = batch_retrieve(queries, index, SparseScorerConfig(), 10)
    threaded = batch_retrieve(
        queries, index, SparseScorerConfig(), 10, ThreadingSettings(max_workers=4)
    )
    assert serial == threaded
    assert serial.query_ids == ["q1", "q2", "q3", "q4", "q5"]
    assert serial.run_tag == "bm25"
    assert serial.get("q1").doc_ids[0] in {"d01", "d02"}


def test_rescore_run() -> None:
    """Test that rescoring keeps only matched candidates of the input run."""
    index = build_index(load_corpus(TOY_CORPUS_PATH), TokenizerConfig())
    queries = [Query("q1", "farm cow"), Query("q2", "storm")]
    run = TrecRun.from_lists(
        [
            RankedList.from_scores("q1", {"d01": 0.0, "d15": 1.0, "d02": 2.0}),
            RankedList.from_scores("q3", {"d09": 1.0}),
        ],
        "input",
    )
    rescored = rescore_run(run, queries, index, SparseScorerConfig("bm25"))
    assert rescored.query_ids == ["q1"]
    assert set(rescored.get("q1").doc_ids) == {"d01", "d02"}
    assert rescored.run_tag == "bm25"
