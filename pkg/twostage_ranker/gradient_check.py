"""
Central finite-difference checks of the hand-written reverse passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence

import numpy as np

from twostage_ranker.models import KernelRanker
from twostage_ranker.training import Example, TrainingConfig, backward, batch_loss

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-8


def numerical_gradient(
    func: Callable[[], float], array: np.ndarray, step: float = DEFAULT_STEP
) -> np.ndarray:
    """
    Central differences of `func` with respect to every entry of `array`,
    which is perturbed in place and restored.
    """
    gradient = np.zeros(np.shape(array), dtype=np.float64)
    for position in np.ndindex(*np.shape(array)):
        original = float(array[position])
        array[position] = original + step
        plus = func()
        array[position] = original - step
        minus = func()
        array[position] = original
        gradient[position] = (plus - minus) / (2.0 * step)
    return gradient


def relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR
) -> np.ndarray:
    """`|analytic - numeric| / max(|numeric|, floor)`, elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)


@dataclass(frozen=True)
class GradientCheckResult:
    """
    Worst relative error per checked parameter.

    Attributes:
        errors (Dict[str, float]): Maximum relative error by parameter name;
            embedding rows appear as `embeddings[<token>]`.
    """

    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error < tolerance


def check_model_gradients(
    model: KernelRanker,
    batch: Sequence[Example],
    config: TrainingConfig,
    step: float = DEFAULT_STEP,
    floor: float = DEFAULT_FLOOR,
) -> GradientCheckResult:
    """Compare `backward` with central differences of `batch_loss`."""
    _, gradients = backward(model, batch, config)

    def loss() -> float:
        return batch_loss(model, batch, config)

    errors: Dict[str, float] = {}
    for name, analytic in gradients.dense.items():
        numeric = numerical_gradient(loss, model.params[name], step)
        errors[name] = float(np.max(relative_error(analytic, numeric, floor), initial=0.0))
    for row, analytic in gradients.embedding_rows.items():
        numeric = numerical_gradient(loss, model.embeddings[row], step)
        token = model.store.tokens[row]
        errors[f"embeddings[{token}]"] = float(
            np.max(relative_error(analytic, numeric, floor), initial=0.0)
        )
    return GradientCheckResult(errors)
