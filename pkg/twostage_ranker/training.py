"""
Losses, optimizers and the epoch loop for the kernel rerankers.
"""

from __future__ import annotations

import copy
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterator,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.evaluation import Qrels, mean_ndcg
from twostage_ranker.exceptions import (
    EmptyInputError,
    FormatError,
    MissingInputError,
    TrainingError,
)
from twostage_ranker.models import Gradients, KernelRanker, rerank
from twostage_ranker.runs import TrecRun, format_score

logger = logging.getLogger(__name__)

LossKind: TypeAlias = Literal["pairwise_hinge", "pointwise_bce"]
OptimizerKind: TypeAlias = Literal["sgd", "adam"]


@dataclass(frozen=True)
class TrainingConfig:
    """
    How a reranker is trained.

    Attributes:
        loss (LossKind): `pairwise_hinge` over triples or `pointwise_bce`
            over labeled pairs.
        margin (float): Hinge margin, positive.
        optimizer (OptimizerKind): `sgd` or `adam`.
        learning_rate (float): Step size, non-negative.
        beta1 (float): Adam first-moment decay.
        beta2 (float): Adam second-moment decay.
        adam_epsilon (float): Adam denominator guard.
        batch_size (int): Examples per update.
        epochs (int): Maximum number of passes over the data.
        seed (int): Seed of the batch shuffler.
        shuffle (bool): Shuffle examples every epoch.
        patience (int | None): Stop after this many epochs without a
            validation improvement. `None` trains every epoch.
        train_ranking_layer (bool): Update `w` and `b`.
        train_conv_filters (bool): Update convolution filters and biases.
        train_embeddings (bool): Update embeddings of tokens seen in a batch.
        max_query_length (int): Query tokens kept before scoring.
        max_doc_length (int): Document tokens kept before scoring.
    """

    loss: LossKind = "pairwise_hinge"
    margin: float = 1.0
    optimizer: OptimizerKind = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True
    patience: Optional[int] = None
    train_ranking_layer: bool = True
    train_conv_filters: bool = True
    train_embeddings: bool = False
    max_query_length: int = 32
    max_doc_length: int = 256

    def __post_init__(self) -> None:
        if self.loss not in ("pairwise_hinge", "pointwise_bce"):
            raise ValueError("'loss' must be one of ('pairwise_hinge', 'pointwise_bce')")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("'optimizer' must be one of ('sgd', 'adam')")
        if self.margin <= 0.0:
            raise ValueError("'margin' must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("'learning_rate' must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("'beta1' and 'beta2' must lie in [0, 1)")
        if self.adam_epsilon <= 0.0:
            raise ValueError("'adam_epsilon' must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("'batch_size' must be at least 1 and 'epochs' non-negative")
        if self.patience is not None and self.patience < 1:
            raise ValueError("'patience' must be at least 1")
        if self.max_query_length < 1 or self.max_doc_length < 1:
            raise ValueError("'max_query_length' and 'max_doc_length' must be at least 1")


@dataclass(frozen=True)
class PairwiseExample:
    """A query with a preferred and a less preferred document."""

    query_tokens: Tuple[str, ...]
    pos_tokens: Tuple[str, ...]
    neg_tokens: Tuple[str, ...]
    weight: float = 1.0


@dataclass(frozen=True)
class PointwiseExample:
    """A query/document pair with a binary label."""

    query_tokens: Tuple[str, ...]
    doc_tokens: Tuple[str, ...]
    label: int
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError("'label' must be 0 or 1")


Example: TypeAlias = Union[PairwiseExample, PointwiseExample]


def _read_id_rows(
    path: StrOrPath, width: int, layout: str
) -> Iterator[Tuple[Path, int, List[str]]]:
    input_path = Path(path)
    if not input_path.is_file():
        raise MissingInputError(f"input file '{input_path}' does not exist")

    with open(input_path, "r", encoding="utf-8") as input_file:
        for line_no, raw_line in enumerate(input_file, start=1):
            line = raw_line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != width:
                raise FormatError(
                    f"expected {width} tab-separated fields ({layout}), got {len(fields)}",
                    input_path,
                    line_no,
                )
            yield input_path, line_no, fields


def _resolve(
    tokens: Mapping[str, Sequence[str]], key: str, kind: str, path: Path, line_no: int
) -> Tuple[str, ...]:
    if key not in tokens:
        raise FormatError(f"unknown {kind} {key!r}", path, line_no)
    return tuple(tokens[key])


def load_triples(
    path: StrOrPath,
    query_tokens: Mapping[str, Sequence[str]],
    doc_tokens: Mapping[str, Sequence[str]],
) -> List[PairwiseExample]:
    """Read `query_id<TAB>pos_doc_id<TAB>neg_doc_id` lines into examples."""
    examples = []
    for input_path, line_no, (query_id, pos_id, neg_id) in _read_id_rows(
        path, 3, "query_id, pos_doc_id, neg_doc_id"
    ):
        examples.append(
            PairwiseExample(
                _resolve(query_tokens, query_id, "query_id", input_path, line_no),
                _resolve(doc_tokens, pos_id, "doc_id", input_path, line_no),
                _resolve(doc_tokens, neg_id, "doc_id", input_path, line_no),
            )
        )
    return examples


def load_labels(
    path: StrOrPath,
    query_tokens: Mapping[str, Sequence[str]],
    doc_tokens: Mapping[str, Sequence[str]],
) -> List[PointwiseExample]:
    """Read `query_id<TAB>doc_id<TAB>label` lines, labels in {0, 1}."""
    examples = []
    for input_path, line_no, (query_id, doc_id, label) in _read_id_rows(
        path, 3, "query_id, doc_id, label"
    ):
        if label not in ("0", "1"):
            raise FormatError(f"label must be 0 or 1, got {label!r}", input_path, line_no)
        examples.append(
            PointwiseExample(
                _resolve(query_tokens, query_id, "query_id", input_path, line_no),
                _resolve(doc_tokens, doc_id, "doc_id", input_path, line_no),
                int(label),
            )
        )
    return examples


def iter_batches(
    examples: Sequence[Example],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = True,
) -> Iterator[List[Example]]:
    """Yield consecutive batches, in a seeded random order when shuffling."""
    if batch_size < 1:
        raise ValueError("'batch_size' must be at least 1")

    order = np.arange(len(examples))
    if shuffle:
        if rng is None:
            raise ValueError("'rng' is required when shuffling")
        order = rng.permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        yield [examples[index] for index in order[start : start + batch_size].tolist()]


def _sigmoid(value: float) -> float:
    return 0.5 * (1.0 + math.tanh(0.5 * value))


def _check_examples(batch: Sequence[Example], config: TrainingConfig) -> None:
    expected = PairwiseExample if config.loss == "pairwise_hinge" else PointwiseExample
    if any(not isinstance(example, expected) for example in batch):
        raise TrainingError(f"'{config.loss}' training needs {expected.__name__} examples")


def _batch_objective(
    model: KernelRanker,
    batch: Sequence[Example],
    config: TrainingConfig,
    gradients: Optional[Gradients],
) -> float:
    _check_examples(batch, config)
    size = len(batch)
    total = 0.0
    for example in batch:
        if isinstance(example, PairwiseExample):
            positive = model.forward(example.query_tokens, example.pos_tokens)
            negative = model.forward(example.query_tokens, example.neg_tokens)
            hinge = config.margin - positive.score + negative.score
            if hinge <= 0.0:
                continue
            total += example.weight * hinge
            if gradients is not None:
                model.backward(positive, -example.weight / size, gradients)
                model.backward(negative, example.weight / size, gradients)
        else:
            cache = model.forward(example.query_tokens, example.doc_tokens)
            total += example.weight * (
                float(np.logaddexp(0.0, cache.score)) - example.label * cache.score
            )
            if gradients is not None:
                grad_score = example.weight * (_sigmoid(cache.score) - example.label) / size
                model.backward(cache, grad_score, gradients)
    return total / size


def batch_loss(model: KernelRanker, batch: Sequence[Example], config: TrainingConfig) -> float:
    """Mean (weighted) loss of a batch under the configured objective."""
    if not batch:
        raise EmptyInputError("cannot compute the loss of an empty batch")
    return _batch_objective(model, batch, config, None)


def trainable_parameters(model: KernelRanker, config: TrainingConfig) -> List[str]:
    """Names of the dense parameters the flags enable for this model."""
    names = []
    for name in model.params:
        if name in ("w", "b"):
            if config.train_ranking_layer:
                names.append(name)
        elif config.train_conv_filters:
            names.append(name)
    return names


def backward(
    model: KernelRanker, batch: Sequence[Example], config: TrainingConfig
) -> Tuple[float, Gradients]:
    """
    Loss of a batch and its gradients with respect to every trainable
    parameter. Embedding gradients cover only rows of tokens in the batch.
    """
    dense_names = trainable_parameters(model, config)
    if not dense_names and not config.train_embeddings:
        raise TrainingError("no trainable parameters are enabled for this model")
    if not batch:
        raise EmptyInputError("cannot compute gradients of an empty batch")

    gradients = Gradients()
    loss = _batch_objective(model, batch, config, gradients)

    trainable = Gradients()
    for name in dense_names:
        trainable.dense[name] = gradients.dense.get(name, np.zeros_like(model.params[name]))
    if config.train_embeddings:
        trainable.embedding_rows = gradients.embedding_rows
    return loss, trainable


class Optimizer(ABC):
    """Applies gradients to a model in place."""

    def __init__(self, learning_rate: float) -> None:
        self.learning_rate = learning_rate

    @abstractmethod
    def step(self, model: KernelRanker, gradients: Gradients) -> None:
        pass

    def state(self) -> Dict[str, Any]:
        """A deep copy of the optimizer state."""
        return copy.deepcopy(self.__dict__)

    def load_state(self, state: Dict[str, Any]) -> None:
        self.__dict__.update(copy.deepcopy(state))


class SgdOptimizer(Optimizer):
    """Plain gradient descent."""

    def step(self, model: KernelRanker, gradients: Gradients) -> None:
        for name, gradient in gradients.dense.items():
            model.params[name] = np.asarray(model.params[name] - self.learning_rate * gradient)
        for row, gradient in gradients.embedding_rows.items():
            model.embeddings[row] -= self.learning_rate * gradient


class AdamOptimizer(Optimizer):
    """Adam with lazy moments for embedding rows: only touched rows move."""

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        super().__init__(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.steps = 0
        self.first_moments: Dict[Any, np.ndarray] = {}
        self.second_moments: Dict[Any, np.ndarray] = {}

    def _update(self, key: Any, gradient: np.ndarray) -> np.ndarray:
        first = self.first_moments.get(key, np.zeros_like(gradient))
        second = self.second_moments.get(key, np.zeros_like(gradient))
        first = self.beta1 * first + (1.0 - self.beta1) * gradient
        second = self.beta2 * second + (1.0 - self.beta2) * gradient**2
        self.first_moments[key] = first
        self.second_moments[key] = second

        first_hat = first / (1.0 - self.beta1**self.steps)
        second_hat = second / (1.0 - self.beta2**self.steps)
        return self.learning_rate * first_hat / (np.sqrt(second_hat) + self.epsilon)

    def step(self, model: KernelRanker, gradients: Gradients) -> None:
        self.steps += 1
        for name, gradient in gradients.dense.items():
            model.params[name] = np.asarray(model.params[name] - self._update(name, gradient))
        for row, gradient in gradients.embedding_rows.items():
            model.embeddings[row] -= self._update(("embeddings", row), gradient)


def create_optimizer(config: TrainingConfig) -> Optimizer:
    if config.optimizer == "sgd":
        return SgdOptimizer(config.learning_rate)
    return AdamOptimizer(config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)


@dataclass(frozen=True)
class ValidationSet:
    """
    Target data a model is validated on by reranking a first-stage run.

    Attributes:
        run (TrecRun): First-stage candidates per query.
        queries (Mapping[str, Sequence[str]]): Query tokens by query id.
        corpus (Mapping[str, Sequence[str]]): Document tokens by doc id.
        depth (int): Candidates reranked per query.
    """

    run: TrecRun
    queries: Mapping[str, Sequence[str]]
    corpus: Mapping[str, Sequence[str]]
    depth: int = 100

    def ndcg(self, model: KernelRanker, qrels: Qrels, k: int = 10) -> float:
        """Mean NDCG@k of the reranked run."""
        reranked = rerank(model, self.run, self.corpus, self.queries, self.depth)
        return mean_ndcg(reranked, qrels, k)


@dataclass(frozen=True)
class EpochRecord:
    """
    One row of the training history.

    Attributes:
        epoch (int): 1-based epoch number.
        loss (float): Mean batch loss, each taken before its update.
        validation_ndcg (float | None): Validation NDCG@10 after the epoch.
    """

    epoch: int
    loss: float
    validation_ndcg: Optional[float] = None


@dataclass
class TrainingResult:
    model: KernelRanker
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None


def train(
    model: KernelRanker,
    train_data: Sequence[Example],
    valid_data: Optional[ValidationSet] = None,
    qrels: Optional[Qrels] = None,
    config: TrainingConfig = TrainingConfig(),
) -> TrainingResult:
    """
    Train a reranker in place. With validation data the parameters of the
    epoch with the best validation NDCG@10 are restored at the end.
    """
    if not train_data:
        raise EmptyInputError("training data is empty")
    if valid_data is not None and qrels is None:
        raise ValueError("'qrels' is required when 'valid_data' is given")

    model.max_query_length = config.max_query_length
    model.max_doc_length = config.max_doc_length
    rng = np.random.default_rng(config.seed)
    optimizer = create_optimizer(config)

    history: List[EpochRecord] = []
    best_state: Optional[Dict[str, np.ndarray]] = None
    best_value = -math.inf
    best_epoch: Optional[int] = None
    stale_epochs = 0

    for epoch in range(1, config.epochs + 1):
        total_loss = 0.0
        for batch in iter_batches(train_data, config.batch_size, rng, config.shuffle):
            loss, gradients = backward(model, batch, config)
            optimizer.step(model, gradients)
            total_loss += loss * len(batch)

        validation = None
        if valid_data is not None and qrels is not None:
            validation = valid_data.ndcg(model, qrels)
        record = EpochRecord(epoch, total_loss / len(train_data), validation)
        history.append(record)
        logger.info(
            "Epoch %d: loss %.6f, validation ndcg@10 %s",
            epoch,
            record.loss,
            "-" if validation is None else f"{validation:.6f}",
        )

        if validation is None:
            continue
        if validation > best_value:
            best_value = validation
            best_state = model.snapshot()
            best_epoch = epoch
            stale_epochs = 0
        else:
            stale_epochs += 1
            if config.patience is not None and stale_epochs >= config.patience:
                logger.info("Stopping early after epoch %d", epoch)
                break

    if best_state is not None:
        model.restore(best_state)
    return TrainingResult(model, history, best_epoch)


def pairwise_accuracy(model: KernelRanker, examples: Sequence[PairwiseExample]) -> float:
    """Fraction of triples whose preferred document scores strictly higher."""
    if not examples:
        raise EmptyInputError("cannot measure accuracy on no examples")
    correct = sum(
        1
        for example in examples
        if model.score(example.query_tokens, example.pos_tokens)
        > model.score(example.query_tokens, example.neg_tokens)
    )
    return correct / len(examples)


def with_weight(example: Example, weight: float) -> Example:
    return replace(example, weight=weight)


def format_history(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch\tloss\tvalidation_ndcg\n"]
    for record in history:
        validation = "-" if record.validation_ndcg is None else format_score(record.validation_ndcg)
        lines.append(f"{record.epoch}\t{format_score(record.loss)}\t{validation}\n")
    return "".join(lines)


def write_history(history: Sequence[EpochRecord], path: StrOrPath) -> None:
    """Write the per-epoch history as TSV with a header row."""
    with open(path, "w", encoding="utf-8", newline="\n") as history_file:
        history_file.write(format_history(history))
