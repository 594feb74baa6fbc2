"""
Learning-to-rank ensembles over the scores of several retrieval and
reranking runs.

Each input run contributes one feature column. Features are min-max
normalized within each query before a linear ranker is fit with coordinate
ascent on a rank metric or with RankNet's pairwise logistic loss.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.evaluation import MetricSpec, NdcgGain, Qrels, mean_metric
from twostage_ranker.exceptions import (
    DuplicateIdError,
    EmptyInputError,
    FormatError,
    MissingInputError,
    ModelFormatError,
    ModelVersionError,
    TrainingError,
)
from twostage_ranker.runs import RankedList, TrecRun, format_score

logger = logging.getLogger(__name__)

CandidatePolicy: TypeAlias = Literal["union", "intersection"]
FeatureKey: TypeAlias = Tuple[str, str]

CANDIDATE_POLICIES: Tuple[CandidatePolicy, ...] = ("union", "intersection")
ASCENT_DELTAS: Tuple[float, ...] = (0.05, -0.05, 0.1, -0.1, 0.2, -0.2, 0.5, -0.5, 1.0, -1.0)
RANKER_FORMAT = "twostage-ranker-linear"
RANKER_FORMAT_VERSION = 1

_MIN_STEP = 1e-4
_MAX_CYCLES = 100


@dataclass(frozen=True)
class FeatureRange:
    """Per-query range a feature was min-max normalized with."""

    minimum: float
    maximum: float

    @property
    def constant(self) -> bool:
        return self.maximum <= self.minimum


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """
    One row of normalized features per candidate `(query_id, doc_id)`.

    Attributes:
        feature_names (Tuple[str, ...]): Column names, one per input run.
        keys (Tuple[FeatureKey, ...]): `(query_id, doc_id)` of every row;
            rows of a query are contiguous, docs sorted ascending.
        values (np.ndarray): Matrix of shape `(len(keys), len(feature_names))`.
        normalization (Mapping[str, Tuple[FeatureRange, ...]]): Range of
            every feature per query before normalization. Empty for matrices
            read back from a feature file.
    """

    feature_names: Tuple[str, ...]
    keys: Tuple[FeatureKey, ...]
    values: np.ndarray
    normalization: Mapping[str, Tuple[FeatureRange, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("'feature_names' must be unique")
        if np.shape(self.values) != (len(self.keys), len(self.feature_names)):
            raise ValueError(
                f"'values' must have shape {(len(self.keys), len(self.feature_names))}, "
                f"got {np.shape(self.values)}"
            )
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("'keys' repeat a (query_id, doc_id) pair")

    @property
    def width(self) -> int:
        return len(self.feature_names)

    @cached_property
    def query_rows(self) -> Dict[str, np.ndarray]:
        """Row indices of every query, in first-appearance order."""
        rows: Dict[str, List[int]] = {}
        for row, (query_id, _) in enumerate(self.keys):
            rows.setdefault(query_id, []).append(row)
        return {query_id: np.array(indices, dtype=np.int64) for query_id, indices in rows.items()}

    @property
    def query_ids(self) -> List[str]:
        return list(self.query_rows)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def row(self, query_id: str, doc_id: str) -> np.ndarray:
        return self.values[self.keys.index((query_id, doc_id))]

    def __len__(self) -> int:
        return len(self.keys)


def _normalize(raw: np.ndarray) -> Tuple[np.ndarray, FeatureRange]:
    feature_range = FeatureRange(float(raw.min()), float(raw.max()))
    if feature_range.constant:
        return np.full_like(raw, 0.5), feature_range
    spread = feature_range.maximum - feature_range.minimum
    return (raw - feature_range.minimum) / spread, feature_range


def assemble_features(
    runs: Sequence[Tuple[str, TrecRun]], candidate_policy: CandidatePolicy = "union"
) -> FeatureMatrix:
    """
    Turn named runs into a per-query normalized feature matrix.

    A candidate missing from a run takes that run's lowest score for the
    query, or 0 when the run does not rank the query at all.
    """
    if not runs:
        raise EmptyInputError("at least one run is needed to assemble features")
    if candidate_policy not in CANDIDATE_POLICIES:
        raise ValueError(
            f"'candidate_policy' must be one of {CANDIDATE_POLICIES}, got {candidate_policy!r}"
        )
    names = [name for name, _ in runs]
    if len(set(names)) != len(names):
        raise DuplicateIdError("feature names must be unique across runs")

    query_ids: Dict[str, None] = {}
    for _, run in runs:
        query_ids.update(dict.fromkeys(run.query_ids))

    keys: List[FeatureKey] = []
    blocks: List[np.ndarray] = []
    normalization: Dict[str, Tuple[FeatureRange, ...]] = {}
    for query_id in query_ids:
        scores = [run.get(query_id).scores() for _, run in runs]
        doc_sets = [set(run_scores) for run_scores in scores]
        if candidate_policy == "union":
            candidates = set().union(*doc_sets)
        else:
            candidates = set.intersection(*doc_sets)
        if not candidates:
            logger.debug(
                "Query %s has no candidates under the %s policy", query_id, candidate_policy
            )
            continue

        doc_ids = sorted(candidates)
        columns = []
        ranges = []
        for run_scores in scores:
            floor = min(run_scores.values()) if run_scores else 0.0
            raw = np.array([run_scores.get(doc_id, floor) for doc_id in doc_ids], dtype=np.float64)
            column, feature_range = _normalize(raw)
            columns.append(column)
            ranges.append(feature_range)

        keys.extend((query_id, doc_id) for doc_id in doc_ids)
        blocks.append(np.stack(columns, axis=1))
        normalization[query_id] = tuple(ranges)

    values = np.concatenate(blocks) if blocks else np.zeros((0, len(runs)))
    logger.info(
        "Assembled %d candidates x %d features over %d queries",
        len(keys),
        len(runs),
        len(normalization),
    )
    return FeatureMatrix(tuple(names), tuple(keys), values, normalization)


@dataclass(frozen=True)
class AscentStep:
    """
    One accepted move of coordinate ascent.

    `feature` is None for the starting point of a restart.
    """

    restart: int
    cycle: int
    feature: Optional[int]
    weight: float
    value: float


@dataclass(frozen=True)
class LinearRanker:
    """
    A linear scoring function over a feature matrix.

    Attributes:
        feature_names (Tuple[str, ...]): Features the weights apply to.
        weights (Tuple[float, ...]): One weight per feature.
        metadata (Dict[str, Any]): How the ranker was trained.
        history (Tuple[AscentStep, ...]): Coordinate ascent log, not saved.
    """

    feature_names: Tuple[str, ...]
    weights: Tuple[float, ...]
    metadata: Dict[str, Any] = field(default_factory=dict)
    history: Tuple[AscentStep, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.feature_names):
            raise ValueError("'weights' must have one entry per feature")
        if not all(math.isfinite(weight) for weight in self.weights):
            raise ValueError("'weights' must be finite")

    @property
    def weight_array(self) -> np.ndarray:
        return np.array(self.weights, dtype=np.float64)

    @property
    def run_tag(self) -> str:
        trainer = str(self.metadata.get("trainer", "linear"))
        metric = self.metadata.get("metric")
        return f"{trainer}-{metric}" if metric else trainer


def _score_run(features: FeatureMatrix, weights: np.ndarray, run_tag: str) -> TrecRun:
    scores = features.values @ weights
    ranked_lists = []
    for query_id, rows in features.query_rows.items():
        query_scores = {features.keys[row][1]: float(scores[row]) for row in rows}
        ranked_lists.append(RankedList.from_scores(query_id, query_scores))
    return TrecRun.from_lists(ranked_lists, run_tag)


def ensemble_score(
    ranker: LinearRanker, features: FeatureMatrix, run_tag: Optional[str] = None
) -> TrecRun:
    """Score every candidate as the weighted sum of its features."""
    if ranker.feature_names != features.feature_names:
        raise ValueError(
            f"ranker features {list(ranker.feature_names)} do not match "
            f"matrix features {list(features.feature_names)}"
        )
    return _score_run(features, ranker.weight_array, run_tag or ranker.run_tag)


def _check_has_relevant(features: FeatureMatrix, qrels: Qrels) -> None:
    if not any(qrels.num_relevant(query_id) > 0 for query_id in features.query_ids):
        raise EmptyInputError("no query of the feature matrix has a relevant document")


def _l1_normalized(weights: np.ndarray) -> np.ndarray:
    total = float(np.abs(weights).sum())
    return weights / total if total > 0.0 else weights


def coordinate_ascent(
    features: FeatureMatrix,
    qrels: Qrels,
    metric: Union[str, MetricSpec] = "ndcg@10",
    restarts: int = 5,
    tolerance: float = 1e-5,
    seed: int = 0,
    gain: NdcgGain = "linear",
) -> LinearRanker:
    """
    Fit linear weights by cyclic line search on a rank metric.

    Each weight in turn tries every delta of `ASCENT_DELTAS` and takes the
    best one that strictly improves the metric, then keeps halving and
    re-applying that delta while the metric still improves. Cycles repeat
    until one gains less than `tolerance`. The first restart starts from
    uniform weights, later ones from seeded random weights; the best restart
    wins, ties going to the earlier one.
    """
    if restarts < 1:
        raise ValueError(f"'restarts' must be at least 1, got {restarts}")
    if tolerance < 0:
        raise ValueError(f"'tolerance' must be non-negative, got {tolerance}")
    if features.width == 0:
        raise EmptyInputError("the feature matrix has no features")
    _check_has_relevant(features, qrels)
    spec = metric if isinstance(metric, MetricSpec) else MetricSpec.parse(metric)

    def objective(weights: np.ndarray) -> float:
        return mean_metric(_score_run(features, weights, "ascent"), qrels, spec, gain)

    rng = np.random.default_rng(seed)
    width = features.width
    history: List[AscentStep] = []
    best_weights = np.full(width, 1.0 / width)
    best_value = -math.inf
    for restart in range(restarts):
        if restart == 0:
            weights = np.full(width, 1.0 / width)
        else:
            weights = _l1_normalized(rng.uniform(0.0, 1.0, size=width))
        value = objective(weights)
        history.append(AscentStep(restart, 0, None, 0.0, value))

        for cycle in range(1, _MAX_CYCLES + 1):
            cycle_start = value
            for feature in range(width):
                best_delta = 0.0
                best_candidate = weights
                for delta in ASCENT_DELTAS:
                    candidate = weights.copy()
                    candidate[feature] += delta
                    if not candidate.any():
                        continue
                    candidate_value = objective(candidate)
                    if candidate_value > value:
                        value, best_delta, best_candidate = candidate_value, delta, candidate
                if best_delta == 0.0:
                    continue
                weights = best_candidate

                step = best_delta / 2.0
                while abs(step) >= _MIN_STEP:
                    candidate = weights.copy()
                    candidate[feature] += step
                    candidate_value = objective(candidate) if candidate.any() else -math.inf
                    if candidate_value <= value:
                        break
                    value, weights = candidate_value, candidate
                    step /= 2.0
                history.append(AscentStep(restart, cycle, feature, float(weights[feature]), value))

            if value - cycle_start < tolerance:
                break

        logger.debug("Restart %d ended at %s %.6f", restart, spec.label, value)
        if value > best_value:
            best_value = value
            best_weights = weights

    final = _l1_normalized(best_weights)
    logger.info("Coordinate ascent reached %s %.6f", spec.label, best_value)
    return LinearRanker(
        features.feature_names,
        tuple(float(weight) for weight in final),
        {
            "trainer": "coordinate_ascent",
            "metric": spec.label,
            "restarts": restarts,
            "tolerance": tolerance,
            "seed": seed,
            "iterations": sum(1 for step in history if step.feature is not None),
            "training_value": best_value,
        },
        tuple(history),
    )


@dataclass(frozen=True)
class RankNetConfig:
    """
    Gradient descent settings of `ranknet_train`.

    Attributes:
        learning_rate (float): Step size, positive.
        epochs (int): Passes over the preference pairs.
        batch_size (int | None): Pairs per step; None uses every pair.
        seed (int): Seed of the pair shuffling.
    """

    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"'learning_rate' must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"'epochs' must be non-negative, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"'batch_size' must be at least 1, got {self.batch_size}")


def preference_pairs(features: FeatureMatrix, qrels: Qrels) -> np.ndarray:
    """
    Row pairs `(i, j)` of the same query where document i is graded higher
    than document j. Unjudged documents and negative grades count as 0.
    """
    pairs: List[Tuple[int, int]] = []
    for query_id, rows in features.query_rows.items():
        grades = qrels.grades(query_id)
        labels = [max(grades.get(features.keys[row][1], 0), 0) for row in rows]
        for i, (row_i, label_i) in enumerate(zip(rows, labels)):
            for row_j, label_j in zip(rows[i + 1 :], labels[i + 1 :]):
                if label_i > label_j:
                    pairs.append((int(row_i), int(row_j)))
                elif label_j > label_i:
                    pairs.append((int(row_j), int(row_i)))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def ranknet_loss_and_gradient(
    weights: np.ndarray, values: np.ndarray, pairs: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean of `ln(1 + exp(-(s_i - s_j)))` over the pairs and its gradient."""
    differences = values[pairs[:, 0]] - values[pairs[:, 1]]
    margins = differences @ weights
    loss = float(np.mean(np.logaddexp(0.0, -margins)))
    # d/dm ln(1 + e^-m) = -1 / (1 + e^m)
    slopes = -np.exp(-np.logaddexp(0.0, margins))
    gradient = (slopes[:, None] * differences).mean(axis=0)
    return loss, gradient


def ranknet_train(
    features: FeatureMatrix, qrels: Qrels, config: RankNetConfig = RankNetConfig()
) -> LinearRanker:
    """Fit linear weights, starting from zero, by descent on the RankNet loss."""
    pairs = preference_pairs(features, qrels)
    if len(pairs) == 0:
        raise TrainingError("qrels induce no preference pairs over the feature matrix")

    rng = np.random.default_rng(config.seed)
    weights = np.zeros(features.width)
    batch_size = config.batch_size or len(pairs)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs)) if batch_size < len(pairs) else np.arange(len(pairs))
        for start in range(0, len(pairs), batch_size):
            _, gradient = ranknet_loss_and_gradient(
                weights, features.values, pairs[order[start : start + batch_size]]
            )
            weights = weights - config.learning_rate * gradient
        if epoch % 10 == 0:
            logger.debug("RankNet epoch %d", epoch)

    loss, _ = ranknet_loss_and_gradient(weights, features.values, pairs)
    logger.info("RankNet trained on %d pairs, final loss %.6f", len(pairs), loss)
    return LinearRanker(
        features.feature_names,
        tuple(float(weight) for weight in weights),
        {
            "trainer": "ranknet",
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "pairs": int(len(pairs)),
            "final_loss": loss,
        },
    )


def preference_accuracy(ranker: LinearRanker, features: FeatureMatrix, qrels: Qrels) -> float:
    """Fraction of preference pairs the ranker scores strictly in order."""
    pairs = preference_pairs(features, qrels)
    if len(pairs) == 0:
        raise TrainingError("qrels induce no preference pairs over the feature matrix")
    scores = features.values @ ranker.weight_array
    return float(np.mean(scores[pairs[:, 0]] > scores[pairs[:, 1]]))


def format_features(features: FeatureMatrix) -> str:
    lines = ["\t".join(("query_id", "doc_id") + features.feature_names) + "\n"]
    for (query_id, doc_id), row in zip(features.keys, features.values):
        cells = "\t".join(format_score(value) for value in row)
        lines.append(f"{query_id}\t{doc_id}\t{cells}\n")
    return "".join(lines)


def write_features(features: FeatureMatrix, path: StrOrPath) -> None:
    """Write `query_id doc_id f1 ... fn` rows under a header naming the features."""
    with open(path, "w", encoding="utf-8", newline="\n") as feature_file:
        feature_file.write(format_features(features))
    logger.info("Wrote %d feature rows to %s", len(features), path)


def read_features(path: StrOrPath) -> FeatureMatrix:
    """Read a feature file written by `write_features`."""
    feature_path = Path(path)
    if not feature_path.is_file():
        raise MissingInputError(f"feature file '{feature_path}' does not exist")

    with open(feature_path, "r", encoding="utf-8") as feature_file:
        header = feature_file.readline().rstrip("\n").split("\t")
        if len(header) < 3 or header[:2] != ["query_id", "doc_id"]:
            raise FormatError("header must be 'query_id doc_id <feature>...'", feature_path, 1)
        names = tuple(header[2:])

        keys: List[FeatureKey] = []
        rows: List[List[float]] = []
        seen = set()
        for line_no, line in enumerate(feature_file, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(header):
                raise FormatError(
                    f"expected {len(header)} tab-separated fields, got {len(cells)}",
                    feature_path,
                    line_no,
                )
            key = (cells[0], cells[1])
            if key in seen:
                raise DuplicateIdError(f"duplicate row {key}", feature_path, line_no)
            try:
                values = [float(cell) for cell in cells[2:]]
            except ValueError:
                raise FormatError("feature values must be numbers", feature_path, line_no) from None
            if not all(math.isfinite(value) for value in values):
                raise FormatError("feature values must be finite", feature_path, line_no)
            seen.add(key)
            keys.append(key)
            rows.append(values)

    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureMatrix(names, tuple(keys), values)


def save_ranker(
    ranker: LinearRanker, path: StrOrPath, provenance: Optional[Mapping[str, Any]] = None
) -> None:
    payload = {
        "format": RANKER_FORMAT,
        "format_version": RANKER_FORMAT_VERSION,
        "feature_names": list(ranker.feature_names),
        "weights": list(ranker.weights),
        "metadata": ranker.metadata,
        "provenance": dict(provenance or {}),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as ranker_file:
        ranker_file.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    logger.info("Wrote %s ranker to %s", ranker.metadata.get("trainer", "linear"), path)


def load_ranker(path: StrOrPath) -> LinearRanker:
    """Read a ranker written by `save_ranker`."""
    ranker_path = Path(path)
    if not ranker_path.is_file():
        raise MissingInputError(f"ranker file '{ranker_path}' does not exist")
    try:
        data = json.loads(ranker_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"ranker is not valid JSON: {exc.msg}") from exc

    if not isinstance(data, dict) or data.get("format") != RANKER_FORMAT:
        raise ModelFormatError("file is not a linear ranker")
    if data.get("format_version") != RANKER_FORMAT_VERSION:
        raise ModelVersionError(
            f"ranker format version {data.get('format_version')} is not supported "
            f"(expected {RANKER_FORMAT_VERSION})"
        )
    try:
        return LinearRanker(
            tuple(str(name) for name in data["feature_names"]),
            tuple(float(weight) for weight in data["weights"]),
            dict(data["metadata"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"ranker is invalid: {exc}") from exc
