import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Type

import numpy as np
import pytest

from twostage_ranker import (
    DuplicateIdError,
    EmptyInputError,
    FeatureMatrix,
    FormatError,
    LinearRanker,
    MissingInputError,
    ModelFormatError,
    ModelVersionError,
    Qrels,
    RankedList,
    RankNetConfig,
    SparseScorerConfig,
    TokenizerConfig,
    TrainingError,
    TrecRun,
    assemble_features,
    batch_retrieve,
    build_index,
    coordinate_ascent,
    ensemble_score,
    load_corpus,
    load_queries,
    load_ranker,
    parse_qrels,
    parse_run,
    ranknet_train,
    read_features,
    save_ranker,
    write_features,
)
from twostage_ranker.evaluation import mean_ndcg
from twostage_ranker.gradient_check import numerical_gradient, relative_error
from twostage_ranker.ltr import (
    preference_accuracy,
    preference_pairs,
    ranknet_loss_and_gradient,
)

from tests.helpers import TOY_CORPUS_PATH, TOY_QRELS_PATH, TOY_QUERIES_PATH, TOY_RUN_PATH

GRADES = (2, 1, 0, 1, 0, 0)
NOISE = (0.3, 0.9, 0.1, 0.5, 0.7, 0.2)
QUERY_IDS = ("q1", "q2", "q3")

PLANTED_QRELS = Qrels(
    {query_id: {f"d{doc}": grade for doc, grade in enumerate(GRADES)} for query_id in QUERY_IDS}
)


def _run(values: Sequence[float], tag: str) -> TrecRun:
    scores = {f"d{doc}": float(value) for doc, value in enumerate(values)}
    return TrecRun.from_lists(
        [RankedList.from_scores(query_id, scores) for query_id in QUERY_IDS], tag
    )


PLANTED = assemble_features([("perfect", _run(GRADES, "perfect")), ("noise", _run(NOISE, "noise"))])

RUN_A = TrecRun.from_lists(
    [RankedList.from_scores("q1", {"a": 3.0, "b": 1.0}), RankedList.from_scores("q2", {"c": 5.0})],
    "a",
)
RUN_B = TrecRun.from_lists([RankedList.from_scores("q1", {"b": 2.0, "c": 4.0})], "b")


def test_assemble_union() -> None:
    """Test normalization, the missing-document floor and constant features."""
    features = assemble_features([("a", RUN_A), ("b", RUN_B)])
    assert features.feature_names == ("a", "b")
    assert features.keys == (("q1", "a"), ("q1", "b"), ("q1", "c"), ("q2", "c"))
    np.testing.assert_allclose(
        features.values, [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
    )
    assert features.normalization["q1"][1].minimum == 2.0
    assert features.normalization["q2"][1].constant


def test_assemble_intersection() -> None:
    """Test that the intersection policy keeps only documents every run ranks."""
    features = assemble_features([("a", RUN_A), ("b", RUN_B)], "intersection")
    assert features.keys == (("q1", "b"),)
    np.testing.assert_allclose(features.values, [[0.5, 0.5]])


def test_affine_scores_give_same_features() -> None:
    """Test that min-max normalization ignores positive affine rescaling of a run."""
    scaled = TrecRun.from_lists(
        [
            RankedList.from_scores(
                ranked.query_id, {doc_id: 3.0 * score + 7.0 for doc_id, score in ranked.entries}
            )
            for ranked in RUN_A
        ],
        "scaled",
    )
    original = assemble_features([("a", RUN_A), ("b", RUN_B)])
    rescaled = assemble_features([("a", scaled), ("b", RUN_B)])
    assert rescaled.keys == original.keys
    np.testing.assert_allclose(rescaled.values, original.values)


def test_assemble_errors() -> None:
    """Test the rejected feature inputs."""
    with pytest.raises(EmptyInputError):
        assemble_features([])
    with pytest.raises(DuplicateIdError):
        assemble_features([("a", RUN_A), ("a", RUN_B)])
    with pytest.raises(ValueError):
        assemble_features([("a", RUN_A)], "majority")  # type: ignore[arg-type]


def test_coordinate_ascent_finds_planted_feature() -> None:
    """Test that ascent weights the perfect feature most and reaches NDCG 1."""
    ranker = coordinate_ascent(PLANTED, PLANTED_QRELS, restarts=3, seed=4)
    assert ranker.metadata["training_value"] == 1.0
    assert ranker.metadata["trainer"] == "coordinate_ascent"
    assert ranker.weights[0] > abs(ranker.weights[1])
    assert sum(abs(weight) for weight in ranker.weights) == pytest.approx(1.0)
    assert sum(1 for step in ranker.history if step.feature is None) == 3

    run = ensemble_score(ranker, PLANTED)
    assert run.run_tag == "coordinate_ascent-ndcg@10"
    assert mean_ndcg(run, PLANTED_QRELS) == 1.0
    assert coordinate_ascent(PLANTED, PLANTED_QRELS, restarts=3, seed=4) == ranker


@pytest.mark.parametrize("seed", range(10))
def test_coordinate_ascent_never_loses_ground(seed: int) -> None:
    """Test that the training metric never drops between logged steps of a restart."""
    index = build_index(load_corpus(TOY_CORPUS_PATH), TokenizerConfig())
    bm25 = batch_retrieve(load_queries(TOY_QUERIES_PATH), index, SparseScorerConfig(), 10)
    features = assemble_features([("fixture", parse_run(TOY_RUN_PATH)), ("bm25", bm25)])
    ranker = coordinate_ascent(features, parse_qrels(TOY_QRELS_PATH), restarts=3, seed=seed)

    assert sum(1 for step in ranker.history if step.feature is None) == 3
    for previous, step in zip(ranker.history, ranker.history[1:]):
        if step.restart == previous.restart:
            assert step.value >= previous.value
    assert ranker.metadata["training_value"] == max(step.value for step in ranker.history)


def test_coordinate_ascent_errors() -> None:
    """Test the rejected ascent inputs."""
    with pytest.raises(ValueError):
        coordinate_ascent(PLANTED, PLANTED_QRELS, restarts=0)
    with pytest.raises(EmptyInputError):
        coordinate_ascent(PLANTED, Qrels({"q1": {"d0": 0}}))
    ranker = LinearRanker(("noise", "perfect"), (0.5, 0.5))
    with pytest.raises(ValueError):
        ensemble_score(ranker, PLANTED)


def test_preference_pairs() -> None:
    """Test that pairs stay within a query and point from higher to lower grade."""
    pairs = preference_pairs(PLANTED, PLANTED_QRELS)
    assert pairs.shape == (33, 2)
    for better, worse in pairs.tolist():
        assert PLANTED.keys[better][0] == PLANTED.keys[worse][0]
        grade = PLANTED_QRELS.grades(PLANTED.keys[better][0])
        assert grade[PLANTED.keys[better][1]] > grade[PLANTED.keys[worse][1]]


def test_ranknet_gradient() -> None:
    """Test the RankNet gradient against central differences."""
    pairs = preference_pairs(PLANTED, PLANTED_QRELS)
    weights = np.random.default_rng(0).normal(size=PLANTED.width)
    _, analytic = ranknet_loss_and_gradient(weights, PLANTED.values, pairs)
    numeric = numerical_gradient(
        lambda: ranknet_loss_and_gradient(weights, PLANTED.values, pairs)[0], weights
    )
    assert np.max(relative_error(analytic, numeric)) < 1e-6


def test_ranknet_orders_planted_pairs() -> None:
    """Test that RankNet lowers the loss and orders every preference pair."""
    ranker = ranknet_train(PLANTED, PLANTED_QRELS, RankNetConfig(learning_rate=0.1, epochs=100))
    assert ranker.metadata["final_loss"] < math.log(2.0)
    assert ranker.metadata["pairs"] == 33
    assert ranker.weights[0] > abs(ranker.weights[1])
    assert preference_accuracy(ranker, PLANTED, PLANTED_QRELS) == 1.0

    batched = ranknet_train(
        PLANTED, PLANTED_QRELS, RankNetConfig(learning_rate=0.1, epochs=20, batch_size=4, seed=1)
    )
    assert batched.metadata["final_loss"] < math.log(2.0)


def test_ranknet_edge_cases() -> None:
    """Test zero epochs and qrels without preferences."""
    ranker = ranknet_train(PLANTED, PLANTED_QRELS, RankNetConfig(epochs=0))
    assert ranker.weights == (0.0, 0.0)
    assert ranker.metadata["final_loss"] == pytest.approx(math.log(2.0))
    with pytest.raises(TrainingError):
        ranknet_train(PLANTED, Qrels({"q1": {"d0": 0}}))
    with pytest.raises(ValueError):
        RankNetConfig(learning_rate=0.0)


def test_feature_file_round_trip(tmp_path: Path) -> None:
    """Test that written features read back with the same rows."""
    path = tmp_path / "features.tsv"
    write_features(PLANTED, path)
    loaded = read_features(path)
    assert isinstance(loaded, FeatureMatrix)
    assert loaded.feature_names == PLANTED.feature_names
    assert loaded.keys == PLANTED.keys
    np.testing.assert_allclose(loaded.values, PLANTED.values)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "query_id\tdoc_id\tperfect\tnoise"


@dataclass(frozen=True)
class FeatureFileTestCase:
    """Dataclass representing a malformed feature file test case."""

    content: str
    error: Type[FormatError]
    line_no: int


@pytest.mark.parametrize(
    "test_case",
    [
        FeatureFileTestCase("qid\tdoc_id\tf\n", FormatError, 1),
        FeatureFileTestCase("query_id\tdoc_id\tf\nq1\td1\n", FormatError, 2),
        FeatureFileTestCase("query_id\tdoc_id\tf\nq1\td1\t0.5\nq1\td1\t0.2\n", DuplicateIdError, 3),
        FeatureFileTestCase("query_id\tdoc_id\tf\nq1\td1\thigh\n", FormatError, 2),
        FeatureFileTestCase("query_id\tdoc_id\tf\nq1\td1\tinf\n", FormatError, 2),
    ],
)
def test_malformed_feature_file(tmp_path: Path, test_case: FeatureFileTestCase) -> None:
    """Test that feature file errors name the offending line."""
    path = tmp_path / "features.tsv"
    path.write_text(test_case.content, encoding="utf-8")
    with pytest.raises(test_case.error) as exc_info:
        read_features(path)
    assert exc_info.value.line_no == test_case.line_no
    with pytest.raises(MissingInputError):
        read_features(tmp_path / "absent.tsv")


def test_ranker_round_trip(tmp_path: Path) -> None:
    """Test that a saved ranker loads back equal."""
    ranker = ranknet_train(PLANTED, PLANTED_QRELS, RankNetConfig(epochs=5))
    path = tmp_path / "ranker.json"
    save_ranker(ranker, path, provenance={"command": "ensemble"})
    assert load_ranker(path) == ranker
    assert json.loads(path.read_text(encoding="utf-8"))["provenance"] == {"command": "ensemble"}


@dataclass(frozen=True)
class RankerFileTestCase:
    """Dataclass representing a damaged ranker file test case."""

    changes: Dict[str, object]
    error: Type[ModelFormatError]


@pytest.mark.parametrize(
    "test_case",
    [
        RankerFileTestCase({"format": "twostage-ranker-model"}, ModelFormatError),
        RankerFileTestCase({"format_version": 9}, ModelVersionError),
        RankerFileTestCase({"weights": [1.0]}, ModelFormatError),
        RankerFileTestCase({"weights": ["x", 1.0]}, ModelFormatError),
    ],
)
def test_damaged_ranker(tmp_path: Path, test_case: RankerFileTestCase) -> None:
    """Test that invalid ranker files are rejected."""
    path = tmp_path / "ranker.json"
    save_ranker(LinearRanker(("a", "b"), (0.5, 0.5)), path)
    data = json.loads(path.read_text(encoding="utf-8"))
    data.update(test_case.changes)
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(test_case.error):
        load_ranker(path)
