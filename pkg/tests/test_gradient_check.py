from typing import List, Tuple

import numpy as np
import pytest

from twostage_ranker import (
    EmbeddingStore,
    KernelBank,
    PairwiseExample,
    PointwiseExample,
    RerankerConfig,
    TrainingConfig,
    check_model_gradients,
    create_model,
)
from twostage_ranker.gradient_check import numerical_gradient, relative_error
from twostage_ranker.training import Example, LossKind

TOKENS = tuple(f"t{index}" for index in range(10))
INSTANCES = range(20)

# Wide kernels keep the convolved similarities away from sharp peaks.
SMOOTH_KERNELS = KernelBank(mu=(1.0, 0.5, 0.0, -0.5), sigma=(0.1, 0.3, 0.3, 0.3))
CONV_CONFIG = RerankerConfig(
    kind="conv_knrm", kernels=SMOOTH_KERNELS, num_filters=4, ngram_sizes=(1, 2)
)


def _random_store(rng: np.random.Generator) -> EmbeddingStore:
    return EmbeddingStore(TOKENS, rng.normal(size=(len(TOKENS), 8)))


def _random_tokens(rng: np.random.Generator, low: int, high: int) -> Tuple[str, ...]:
    length = int(rng.integers(low, high))
    return tuple(TOKENS[index] for index in rng.integers(0, len(TOKENS), length))


def _random_batch(rng: np.random.Generator, loss: LossKind) -> List[Example]:
    batch: List[Example] = []
    for _ in range(2):
        query = _random_tokens(rng, 2, 4)
        first, second = _random_tokens(rng, 2, 6), _random_tokens(rng, 2, 6)
        weight = float(rng.uniform(0.5, 2.0))
        if loss == "pairwise_hinge":
            batch.append(PairwiseExample(query, first, second, weight))
        else:
            batch.append(PointwiseExample(query, first, 1, weight))
            batch.append(PointwiseExample(query, second, 0, weight))
    return batch


def test_numerical_gradient() -> None:
    """Test central differences on a quadratic."""
    values = np.array([[1.0, -2.0], [0.5, 3.0]])
    gradient = numerical_gradient(lambda: float(np.sum(values**2)), values)
    np.testing.assert_allclose(gradient, 2 * values, rtol=1e-6)
    np.testing.assert_array_equal(values, [[1.0, -2.0], [0.5, 3.0]])


def test_relative_error_floor() -> None:
    """Test that tiny numeric gradients are compared against the floor."""
    errors = relative_error(np.array([1e-12, 2.0]), np.array([0.0, 1.0]))
    np.testing.assert_allclose(errors, [1e-4, 1.0])


@pytest.mark.parametrize("loss", ["pairwise_hinge", "pointwise_bce"])
def test_knrm_gradients(loss: LossKind) -> None:
    """Test the K-NRM reverse pass, embeddings included, on random instances."""
    config = TrainingConfig(loss=loss, train_embeddings=True)
    for instance in INSTANCES:
        rng = np.random.default_rng(instance)
        model = create_model(_random_store(rng), RerankerConfig(), seed=instance)
        result = check_model_gradients(model, _random_batch(rng, loss), config)
        assert {"w", "b"} <= set(result.errors)
        assert any(name.startswith("embeddings[") for name in result.errors)
        assert result.passed(1e-4), (instance, result.errors)


@pytest.mark.parametrize("loss", ["pairwise_hinge", "pointwise_bce"])
def test_convknrm_gradients(loss: LossKind) -> None:
    """Test the Conv-KNRM reverse pass through filters, biases and embeddings."""
    config = TrainingConfig(loss=loss, train_embeddings=True)
    for instance in INSTANCES:
        rng = np.random.default_rng(100 + instance)
        model = create_model(_random_store(rng), CONV_CONFIG, seed=instance)
        result = check_model_gradients(model, _random_batch(rng, loss), config)
        assert {"filters_1", "filters_2", "filter_bias_1", "filter_bias_2"} <= set(result.errors)
        assert result.passed(1e-4), (instance, result.errors)


def test_frozen_parameters_are_skipped() -> None:
    """Test that disabled parameter groups are not checked."""
    rng = np.random.default_rng(0)
    model = create_model(_random_store(rng), CONV_CONFIG)
    result = check_model_gradients(
        model, _random_batch(rng, "pairwise_hinge"), TrainingConfig(train_conv_filters=False)
    )
    assert set(result.errors) == {"w", "b"}
