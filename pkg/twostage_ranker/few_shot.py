"""
Weak supervision from document titles, filtered by target-validation
feedback.

Selection is a greedy accept/reject loop: every candidate step is kept only
if validation NDCG@10 does not drop, and batch weights move by a fixed
additive amount after each decision. It is a small-scale filter over weak
data, not a learned data selector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Literal, Mapping, Sequence, Tuple

import numpy as np

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.evaluation import Qrels
from twostage_ranker.exceptions import (
    ConfigError,
    EmptyInputError,
    MissingInputError,
    TrainingError,
)
from twostage_ranker.index import InvertedIndex
from twostage_ranker.models import KernelRanker
from twostage_ranker.runs import format_score
from twostage_ranker.sparse import SparseScorerConfig, retrieve
from twostage_ranker.text import Document, tokenize
from twostage_ranker.training import (
    PairwiseExample,
    TrainingConfig,
    ValidationSet,
    backward,
    create_optimizer,
)

logger = logging.getLogger(__name__)

SourceTag: TypeAlias = Literal["title_as_query"]
Decision: TypeAlias = Literal["keep", "rollback"]


@dataclass(frozen=True)
class WeakTriple:
    """
    A synthesized training triple.

    Attributes:
        pseudo_query (Tuple[str, ...]): Tokens standing in for a query.
        pos_doc_id (str): The document the pseudo query came from.
        neg_doc_id (str): A sampled competing document.
        source_tag (SourceTag): How the pseudo query was produced.
        weight (float): Selection weight in `[0, 1]`.
    """

    pseudo_query: Tuple[str, ...]
    pos_doc_id: str
    neg_doc_id: str
    source_tag: SourceTag = "title_as_query"
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.pos_doc_id == self.neg_doc_id:
            raise ValueError("'pos_doc_id' and 'neg_doc_id' must differ")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("'weight' must lie in [0, 1]")


@dataclass(frozen=True)
class WeakSupervisionConfig:
    """
    Weak pair synthesis and selection settings.

    Attributes:
        negatives_per_positive (int): Negatives sampled per titled document.
        pool_depth (int): BM25 depth negatives are sampled from.
        alpha (float): Additive weight change per decision, in `[0, 1]`.
        batch_size (int): Triples per candidate batch.
        max_steps (int): Maximum number of candidate steps.
        seed (int): Seed of negative and batch sampling.
    """

    negatives_per_positive: int = 1
    pool_depth: int = 10
    alpha: float = 0.2
    batch_size: int = 8
    max_steps: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.negatives_per_positive < 0:
            raise ValueError("'negatives_per_positive' must be non-negative")
        if self.pool_depth < 1:
            raise ValueError("'pool_depth' must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("'alpha' must lie in [0, 1]")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("'batch_size' must be at least 1 and 'max_steps' non-negative")


def _has_body_tokens(index: InvertedIndex, doc_id: str) -> bool:
    ordinal = index.ordinal(doc_id)
    return ordinal is not None and index.doc_table[ordinal].doc_length > 0


def synthesize_weak_pairs(
    corpus: Iterable[Document],
    index: InvertedIndex,
    negatives_per_positive: int,
    pool_depth: int,
    seed: int = 0,
    scorer: SparseScorerConfig = SparseScorerConfig("bm25"),
) -> List[WeakTriple]:
    """
    Use each document title as a pseudo query for its own document and
    sample negatives from the BM25 pool of that query over document bodies.
    Documents whose body has no tokens are never a positive or a negative.
    """
    if index.field_policy != "body":
        raise ConfigError("weak pairs need an index built over document bodies")
    titled = [document for document in corpus if document.title.strip()]
    if not titled:
        raise EmptyInputError("no document has a title to use as a pseudo query")
    if negatives_per_positive == 0:
        return []

    rng = np.random.default_rng(seed)
    triples: List[WeakTriple] = []
    skipped = 0
    for document in titled:
        pseudo_query = tuple(tokenize(document.title, index.tokenizer))
        pool = []
        if pseudo_query and _has_body_tokens(index, document.doc_id):
            ranked = retrieve(list(pseudo_query), index, scorer, pool_depth)
            pool = [
                doc_id
                for doc_id in ranked.doc_ids
                if doc_id != document.doc_id and _has_body_tokens(index, doc_id)
            ]
        if not pool:
            skipped += 1
            continue

        count = min(negatives_per_positive, len(pool))
        for choice in rng.choice(len(pool), size=count, replace=False).tolist():
            triples.append(WeakTriple(pseudo_query, document.doc_id, pool[choice]))

    logger.info(
        "Synthesized %d weak triples from %d titled documents (%d skipped)",
        len(triples),
        len(titled),
        skipped,
    )
    return triples


@dataclass(frozen=True)
class SelectionStep:
    """One accept/reject decision of the selection loop."""

    step: int
    batch_id: int
    reward: float
    decision: Decision
    weight: float


@dataclass
class SelectionResult:
    """
    Outcome of `selective_train`.

    Attributes:
        model (KernelRanker): The trained model, updated in place.
        history (List[SelectionStep]): Every decision in order.
        triples (List[WeakTriple]): The weak triples with final weights.
        initial_ndcg (float): Validation NDCG@10 before training.
        final_ndcg (float): Validation NDCG@10 after training.
    """

    model: KernelRanker
    history: List[SelectionStep] = field(default_factory=list)
    triples: List[WeakTriple] = field(default_factory=list)
    initial_ndcg: float = 0.0
    final_ndcg: float = 0.0

    @property
    def rollback_rate(self) -> float:
        if not self.history:
            return 0.0
        return sum(1 for step in self.history if step.decision == "rollback") / len(self.history)


def _examples(
    batch: Sequence[WeakTriple], corpus: Mapping[str, Sequence[str]], weight: float
) -> List[PairwiseExample]:
    examples = []
    for triple in batch:
        for doc_id in (triple.pos_doc_id, triple.neg_doc_id):
            if doc_id not in corpus:
                raise MissingInputError(f"weak triple document {doc_id!r} is not in the corpus")
        examples.append(
            PairwiseExample(
                triple.pseudo_query,
                tuple(corpus[triple.pos_doc_id]),
                tuple(corpus[triple.neg_doc_id]),
                weight,
            )
        )
    return examples


def _has_relevant_query(target_valid: ValidationSet, qrels: Qrels) -> bool:
    return any(qrels.num_relevant(query_id) > 0 for query_id in target_valid.run.query_ids)


def selective_train(
    model: KernelRanker,
    weak_triples: Sequence[WeakTriple],
    target_valid: ValidationSet,
    qrels: Qrels,
    corpus: Mapping[str, Sequence[str]],
    config: WeakSupervisionConfig = WeakSupervisionConfig(),
    training: TrainingConfig = TrainingConfig(),
) -> SelectionResult:
    """
    Train on weak batches one step at a time, keeping a step only when it
    does not lower validation NDCG@10, and reweighting batches accordingly.
    Batches whose weight reaches 0 are never sampled again.
    """
    if not weak_triples:
        raise EmptyInputError("weak training data is empty")
    if training.loss != "pairwise_hinge":
        raise TrainingError("selective training uses the pairwise hinge loss")
    if not _has_relevant_query(target_valid, qrels):
        raise TrainingError("the validation set needs a query with a relevant document")

    model.max_query_length = training.max_query_length
    model.max_doc_length = training.max_doc_length
    rng = np.random.default_rng(config.seed)
    optimizer = create_optimizer(training)
    batches = [
        list(weak_triples[start : start + config.batch_size])
        for start in range(0, len(weak_triples), config.batch_size)
    ]
    weights = [1.0] * len(batches)

    current = target_valid.ndcg(model, qrels)
    initial = current
    history: List[SelectionStep] = []
    for step in range(1, config.max_steps + 1):
        active = [batch_id for batch_id, weight in enumerate(weights) if weight > 0.0]
        if not active:
            logger.info("Every weak batch was dropped after %d steps", step - 1)
            break

        probabilities = np.array([weights[batch_id] for batch_id in active])
        probabilities /= probabilities.sum()
        batch_id = active[int(rng.choice(len(active), p=probabilities))]
        weight = weights[batch_id]

        model_state = model.snapshot()
        optimizer_state = optimizer.state()
        _, gradients = backward(model, _examples(batches[batch_id], corpus, weight), training)
        optimizer.step(model, gradients)

        value = target_valid.ndcg(model, qrels)
        reward = value - current
        decision: Decision
        if reward >= 0.0:
            decision = "keep"
            current = value
            weights[batch_id] = min(1.0, round(weight + config.alpha, 12))
        else:
            decision = "rollback"
            model.restore(model_state)
            optimizer.load_state(optimizer_state)
            weights[batch_id] = max(0.0, round(weight - config.alpha, 12))

        history.append(SelectionStep(step, batch_id, reward, decision, weights[batch_id]))
        logger.debug(
            "Step %d: batch %d reward %.6f %s, weight %.2f",
            step,
            batch_id,
            reward,
            decision,
            weights[batch_id],
        )

    reweighted = [
        replace(triple, weight=weights[batch_id])
        for batch_id, batch in enumerate(batches)
        for triple in batch
    ]
    final = target_valid.ndcg(model, qrels)
    result = SelectionResult(model, history, reweighted, initial, final)
    logger.info(
        "Selective training: %d steps, %.0f%% rolled back, ndcg@10 %.6f -> %.6f",
        len(history),
        100.0 * result.rollback_rate,
        initial,
        final,
    )
    return result


def batch_weights(history: Sequence[SelectionStep]) -> Dict[int, float]:
    """Latest weight of every batch the loop touched."""
    return {step.batch_id: step.weight for step in history}


def format_selection_history(history: Sequence[SelectionStep]) -> str:
    lines = ["step\tbatch_id\treward\tdecision\tweight\n"]
    for step in history:
        lines.append(
            f"{step.step}\t{step.batch_id}\t{format_score(step.reward)}\t"
            f"{step.decision}\t{format_score(step.weight)}\n"
        )
    return "".join(lines)


def write_selection_history(history: Sequence[SelectionStep], path: StrOrPath) -> None:
    """Write `step batch_id reward decision weight` rows with a header."""
    with open(path, "w", encoding="utf-8", newline="\n") as history_file:
        history_file.write(format_selection_history(history))
