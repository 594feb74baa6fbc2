"""
Versioned JSON checkpoints for kernel rerankers.

Layout (format version 1)::

    {
      "format": "twostage-ranker-model",
      "format_version": 1,
      "kind": "knrm" | "conv_knrm",
      "config": {"kind", "kernels": {"mu", "sigma"}, "epsilon",
                 "ngram_sizes", "num_filters", "depth"},
      "max_query_length": int, "max_doc_length": int,
      "embedding_dim": int,
      "params": {name: {"shape": [...], "values": [...]}},
      "embedding_updates": {token: [...]},
      "provenance": {...}
    }

Arrays are flattened in row-major order. `embedding_updates` holds the full
vectors of tokens whose embeddings changed during training; every other
token takes its vector from the embedding file the model is loaded with.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from twostage_ranker._typing import StrOrPath
from twostage_ranker.embeddings import EmbeddingStore
from twostage_ranker.exceptions import MissingInputError, ModelFormatError, ModelVersionError
from twostage_ranker.kernels import KernelBank
from twostage_ranker.models import KernelRanker, RerankerConfig, ranker_class

logger = logging.getLogger(__name__)

MODEL_FORMAT = "twostage-ranker-model"
MODEL_FORMAT_VERSION = 1


def _config_to_dict(config: RerankerConfig) -> Dict[str, Any]:
    return {
        "kind": config.kind,
        "kernels": config.kernels.to_dict(),
        "epsilon": config.epsilon,
        "ngram_sizes": list(config.ngram_sizes),
        "num_filters": config.num_filters,
        "depth": config.depth,
    }


def _config_from_dict(data: Dict[str, Any]) -> RerankerConfig:
    return RerankerConfig(
        kind=data["kind"],
        kernels=KernelBank.from_dict(data["kernels"]),
        epsilon=float(data["epsilon"]),
        ngram_sizes=tuple(int(size) for size in data["ngram_sizes"]),
        num_filters=int(data["num_filters"]),
        depth=int(data["depth"]),
    )


def model_to_dict(
    model: KernelRanker, provenance: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """The JSON-ready checkpoint of a model."""
    params = {
        name: {"shape": list(np.shape(value)), "values": np.ravel(value).tolist()}
        for name, value in model.params.items()
    }
    updates = {token: vector.tolist() for token, vector in model.embedding_updates().items()}
    return {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "config": _config_to_dict(model.config),
        "max_query_length": model.max_query_length,
        "max_doc_length": model.max_doc_length,
        "embedding_dim": model.store.dim,
        "params": params,
        "embedding_updates": updates,
        "provenance": dict(provenance or {}),
    }


def save_model(
    model: KernelRanker, path: StrOrPath, provenance: Optional[Dict[str, Any]] = None
) -> None:
    """Write a model checkpoint; identical models produce identical bytes."""
    encoded = json.dumps(model_to_dict(model, provenance), sort_keys=True, indent=1)
    with open(path, "w", encoding="utf-8", newline="\n") as model_file:
        model_file.write(encoded + "\n")
    logger.info("Wrote %s checkpoint to %s", model.kind, path)


def model_from_dict(data: Dict[str, Any], store: EmbeddingStore) -> KernelRanker:
    """Rebuild a model from its checkpoint over the given embeddings."""
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise ModelFormatError("file is not a reranker checkpoint")
    if data.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"checkpoint format version {data.get('format_version')} is not supported "
            f"(expected {MODEL_FORMAT_VERSION})"
        )

    try:
        config = _config_from_dict(data["config"])
        if data["kind"] != config.kind:
            raise ModelFormatError("checkpoint kind disagrees with its config")
        if int(data["embedding_dim"]) != store.dim:
            raise ModelFormatError(
                f"checkpoint expects {data['embedding_dim']}-dimensional embeddings, "
                f"got {store.dim}"
            )

        reference = ranker_class(config.kind).initialize(store, config)
        params: Dict[str, np.ndarray] = {}
        for name, expected in reference.params.items():
            entry = data["params"][name]
            values = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            if values.shape != np.shape(expected):
                raise ModelFormatError(
                    f"parameter {name!r} has shape {values.shape}, expected {np.shape(expected)}"
                )
            params[name] = values
        if set(data["params"]) != set(params):
            raise ModelFormatError("checkpoint holds unexpected parameters")

        model = ranker_class(config.kind)(
            store,
            config,
            params,
            int(data["max_query_length"]),
            int(data["max_doc_length"]),
        )
        for token, vector in data["embedding_updates"].items():
            row = store.row(token)
            if row is None:
                raise ModelFormatError(f"updated token {token!r} is not in the embeddings")
            model.embeddings[row] = np.array(vector, dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"checkpoint is invalid: {exc}") from exc
    return model


def load_model(path: StrOrPath, store: EmbeddingStore) -> KernelRanker:
    """Read a checkpoint written by `save_model`."""
    model_path = Path(path)
    if not model_path.is_file():
        raise MissingInputError(f"model file '{model_path}' does not exist")

    try:
        data = json.loads(model_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"checkpoint is not valid JSON: {exc.msg}") from exc
    model = model_from_dict(data, store)
    logger.info("Loaded %s checkpoint from %s", model.kind, model_path)
    return model
