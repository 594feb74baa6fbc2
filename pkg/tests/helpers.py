import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from twostage_ranker import (
    Document,
    EmbeddingStore,
    KernelBank,
    PairwiseExample,
    Qrels,
    Query,
    SparseScorerConfig,
    TokenizerConfig,
    TrecRun,
    batch_retrieve,
    build_index,
)

# Constants and global variables used when testing
TOY_PATH = Path(__file__).parent / "examples" / "toy"
TOY_CORPUS_PATH = TOY_PATH / "corpus.tsv"
TOY_CORPUS_JSONL_PATH = TOY_PATH / "corpus.jsonl"
TOY_QUERIES_PATH = TOY_PATH / "queries.tsv"
TOY_QRELS_PATH = TOY_PATH / "qrels.txt"
TOY_RUN_PATH = TOY_PATH / "fixture.run"
TOY_EMBEDDINGS_PATH = TOY_PATH / "embeddings.txt"
TOY_TRIPLES_PATH = TOY_PATH / "triples.tsv"
TOY_LABELS_PATH = TOY_PATH / "labels.tsv"
TOY_CONFIG_PATH = TOY_PATH / "pipeline.ini"

PLAIN_TOKENIZER = TokenizerConfig(
    lowercase=True, remove_stopwords=False, stem=False, stoplist=frozenset()
)

# Narrow bank that separates relevant documents from distractors in the
# separable corpus.
SEPARABLE_KERNELS = KernelBank(mu=(1.0, 0.9, 0.0), sigma=(1e-3, 0.1, 0.5))

SEPARABLE_TOPICS = 10
SEPARABLE_DISTRACTORS = 5


@dataclass(frozen=True)
class SeparableCorpus:
    """
    Ten topics, each a one-word query, one relevant document using the query
    word once next to two close synonyms, and five distractors repeating the
    query word three times. BM25 ranks the relevant document last of six.
    """

    store: EmbeddingStore
    documents: List[Document]
    queries: List[Query]
    qrels: Qrels
    triples: List[PairwiseExample]

    @property
    def corpus_tokens(self) -> Dict[str, List[str]]:
        return {document.doc_id: document.body.split() for document in self.documents}

    @property
    def query_tokens(self) -> Dict[str, List[str]]:
        return {query.query_id: query.text.split() for query in self.queries}

    def bm25_run(self) -> TrecRun:
        index = build_index(self.documents, PLAIN_TOKENIZER)
        return batch_retrieve(self.queries, index, SparseScorerConfig(), 10)


def separable_corpus() -> SeparableCorpus:
    dim = 2 * SEPARABLE_TOPICS + 4
    basis = np.eye(dim)
    tokens: List[str] = []
    rows: List[np.ndarray] = []
    for topic in range(SEPARABLE_TOPICS):
        tokens.append(f"qw{topic}")
        rows.append(basis[topic])
    for topic in range(SEPARABLE_TOPICS):
        tokens.append(f"syn{topic}")
        rows.append(0.9 * basis[topic] + math.sqrt(0.19) * basis[SEPARABLE_TOPICS + topic])
    for filler in range(4):
        tokens.append(f"fill{filler}")
        rows.append(basis[2 * SEPARABLE_TOPICS + filler])
    store = EmbeddingStore(tuple(tokens), np.vstack(rows))

    documents: List[Document] = []
    queries: List[Query] = []
    judgments: Dict[str, Dict[str, int]] = {}
    triples: List[PairwiseExample] = []
    for topic in range(SEPARABLE_TOPICS):
        word, synonym = f"qw{topic}", f"syn{topic}"
        relevant = Document(f"d{topic}_rel", "", f"{word} {synonym} {synonym} fill0 fill1")
        documents.append(relevant)
        queries.append(Query(f"q{topic}", word))
        judgments[f"q{topic}"] = {relevant.doc_id: 1}
        for index in range(SEPARABLE_DISTRACTORS):
            distractor = Document(f"d{topic}_dist{index}", "", f"{word} {word} {word} fill0 fill1")
            documents.append(distractor)
            triples.append(
                PairwiseExample(
                    (word,),
                    tuple(relevant.body.split()),
                    tuple(distractor.body.split()),
                )
            )
    return SeparableCorpus(store, documents, queries, Qrels(judgments), triples)


def random_documents(
    seed: int, num_docs: int = 25, vocab_size: int = 8, max_length: int = 12
) -> List[Document]:
    """Documents of random `w<i>` words, some of them empty."""
    rng = np.random.default_rng(seed)
    documents = []
    for ordinal in range(num_docs):
        length = int(rng.integers(0, max_length + 1))
        words = [f"w{int(index)}" for index in rng.integers(0, vocab_size, size=length)]
        documents.append(Document(f"doc{ordinal:03d}", "", " ".join(words)))
    return documents


def random_query(seed: int, vocab_size: int = 10, length: int = 3) -> List[str]:
    """Query words drawn with replacement; `vocab_size` above the corpus's adds unknown words."""
    rng = np.random.default_rng(seed)
    return [f"w{int(index)}" for index in rng.integers(0, vocab_size, size=length)]


def _doc_tokens(documents: Sequence[Document]) -> Dict[str, List[str]]:
    return {document.doc_id: document.body.split() for document in documents}


def _document_frequency(docs: Dict[str, List[str]], term: str) -> int:
    return sum(1 for tokens in docs.values() if term in tokens)


def _collection_frequency(docs: Dict[str, List[str]], term: str) -> int:
    return sum(tokens.count(term) for tokens in docs.values())


def brute_bm25(
    query: Sequence[str], documents: Sequence[Document], k1: float = 0.9, b: float = 0.4
) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    num_docs = len(docs)
    avgdl = sum(len(tokens) for tokens in docs.values()) / num_docs
    scores: Dict[str, float] = {}
    for doc_id, tokens in docs.items():
        if not any(term in tokens for term in query):
            continue
        score = 0.0
        for term in query:
            tf = tokens.count(term)
            if tf == 0:
                continue
            df = _document_frequency(docs, term)
            idf = math.log(1.0 + (num_docs - df + 0.5) / (df + 0.5))
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(tokens) / avgdl))
        scores[doc_id] = score
    return scores


def brute_tfidf(query: Sequence[str], documents: Sequence[Document]) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    scores: Dict[str, float] = {}
    for doc_id, tokens in docs.items():
        matched = [term for term in query if term in tokens]
        if not matched:
            continue
        scores[doc_id] = sum(
            (1.0 + math.log(tokens.count(term)))
            * math.log(len(docs) / _document_frequency(docs, term))
            for term in matched
        )
    return scores


def brute_cosine(query: Sequence[str], documents: Sequence[Document]) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    num_docs = len(docs)

    def weights(counts: Counter) -> Dict[str, float]:
        return {
            term: (1.0 + math.log(count)) * math.log(num_docs / _document_frequency(docs, term))
            for term, count in counts.items()
            if _document_frequency(docs, term) > 0
        }

    query_weights = weights(Counter(query))
    query_norm = math.sqrt(sum(value * value for value in query_weights.values()))
    scores: Dict[str, float] = {}
    for doc_id, tokens in docs.items():
        if not any(term in tokens for term in query_weights):
            continue
        doc_weights = weights(Counter(tokens))
        doc_norm = math.sqrt(sum(value * value for value in doc_weights.values()))
        dot = sum(value * doc_weights.get(term, 0.0) for term, value in query_weights.items())
        scores[doc_id] = dot / (query_norm * doc_norm) if query_norm * doc_norm > 0.0 else 0.0
    return scores


def brute_coordinate_match(query: Sequence[str], documents: Sequence[Document]) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    scores: Dict[str, float] = {}
    for doc_id, tokens in docs.items():
        present = sum(1 for term in set(query) if term in tokens)
        if present:
            scores[doc_id] = float(present)
    return scores


def brute_boolean(
    query: Sequence[str], documents: Sequence[Document], mode: str
) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    match = all if mode == "and" else any
    return {
        doc_id: 1.0
        for doc_id, tokens in docs.items()
        if query and match(term in tokens for term in query)
    }


def brute_lm_dirichlet(
    query: Sequence[str], documents: Sequence[Document], mu: float = 2000.0
) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    total_terms = sum(len(tokens) for tokens in docs.values())
    known = [term for term in query if _collection_frequency(docs, term) > 0]
    if not known:
        return {}
    return {
        doc_id: sum(
            math.log(
                (tokens.count(term) + mu * _collection_frequency(docs, term) / total_terms)
                / (len(tokens) + mu)
            )
            for term in known
        )
        for doc_id, tokens in docs.items()
    }


def brute_lm_jm(
    query: Sequence[str], documents: Sequence[Document], jm_lambda: float = 0.4
) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    total_terms = sum(len(tokens) for tokens in docs.values())
    known = [term for term in query if _collection_frequency(docs, term) > 0]
    if not known:
        return {}
    return {
        doc_id: sum(
            math.log(
                (1.0 - jm_lambda) * tokens.count(term) / len(tokens)
                + jm_lambda * _collection_frequency(docs, term) / total_terms
            )
            for term in known
        )
        for doc_id, tokens in docs.items()
        if tokens
    }


def brute_ordered_count(tokens: Sequence[str], first: str, second: str) -> int:
    return sum(1 for a, b in zip(tokens, tokens[1:]) if a == first and b == second)


def brute_unordered_count(tokens: Sequence[str], first: str, second: str, window: int) -> int:
    pairs = set()
    for i, a in enumerate(tokens):
        for j, b in enumerate(tokens):
            if i == j or abs(i - j) >= window:
                continue
            if a == first and b == second:
                pairs.add((i, j) if first != second else (min(i, j), max(i, j)))
    return len(pairs)


def brute_sdm(
    query: Sequence[str],
    documents: Sequence[Document],
    weights: Tuple[float, float, float] = (0.85, 0.10, 0.05),
    window: int = 8,
    mu: float = 2000.0,
) -> Dict[str, float]:
    docs = _doc_tokens(documents)
    total_terms = sum(len(tokens) for tokens in docs.values())

    def pair_component(ordered: bool) -> Dict[str, float]:
        component: Dict[str, float] = {}
        for first, second in zip(query, query[1:]):
            counts = {
                doc_id: (
                    brute_ordered_count(tokens, first, second)
                    if ordered
                    else brute_unordered_count(tokens, first, second, window)
                )
                for doc_id, tokens in docs.items()
            }
            collection = sum(counts.values())
            if collection == 0:
                continue
            for doc_id, tokens in docs.items():
                value = math.log(
                    (counts[doc_id] + mu * collection / total_terms) / (len(tokens) + mu)
                )
                component[doc_id] = component.get(doc_id, 0.0) + value
        return component

    components = (
        brute_lm_dirichlet(query, documents, mu),
        pair_component(ordered=True),
        pair_component(ordered=False),
    )
    if not any(components):
        return {}
    return {
        doc_id: sum(
            weight * component.get(doc_id, 0.0) for weight, component in zip(weights, components)
        )
        for doc_id in docs
    }
