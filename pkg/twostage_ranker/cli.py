"""
Command-line surface of the pipeline: one subcommand per stage, each a
deterministic function of its inputs, configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

from twostage_ranker.checkpoint import load_model, save_model
from twostage_ranker.concurrency import ThreadingSettings
from twostage_ranker.config import (
    COMMANDS,
    OPTIONS,
    TOOL_NAME,
    TOOL_VERSION,
    Command,
    PipelineConfig,
)
from twostage_ranker.embeddings import (
    EmbeddingStore,
    batch_dense_retrieve,
    build_dense,
    load_embeddings,
)
from twostage_ranker.evaluation import evaluate, parse_qrels, parse_run, write_report
from twostage_ranker.exceptions import EmptyInputError, RankerError
from twostage_ranker.few_shot import selective_train, synthesize_weak_pairs, write_selection_history
from twostage_ranker.index import build_index, load_index, save_index
from twostage_ranker.ltr import (
    assemble_features,
    coordinate_ascent,
    ensemble_score,
    ranknet_train,
    save_ranker,
    write_features,
)
from twostage_ranker.models import KernelRanker, create_model, rerank
from twostage_ranker.paths import feature_name, resolve_run_paths
from twostage_ranker.runs import write_run
from twostage_ranker.sparse import SparseScorerConfig, batch_retrieve, rescore_run
from twostage_ranker.text import (
    Document,
    load_corpus,
    load_queries,
    tokenize_documents,
    tokenize_queries,
)
from twostage_ranker.training import (
    ValidationSet,
    load_labels,
    load_triples,
    train,
    write_history,
)

logger = logging.getLogger(__name__)

_COMMAND_HELP: Dict[Command, str] = {
    "index": "build an inverted index over the corpus",
    "retrieve": "retrieve with a sparse scorer, or rescore the candidates of --run",
    "dense-retrieve": "retrieve by averaged word embeddings",
    "rerank": "rerank a run with a trained kernel model",
    "train": "train a kernel reranker on triples or labels",
    "weak-train": "train a kernel reranker on title-as-query weak pairs",
    "ensemble": "combine run scores with a learned linear ranker",
    "eval": "evaluate a run against qrels",
}


def write_meta(path: Path, provenance: Mapping[str, Any]) -> Path:
    """Write the provenance of a plain-text output to `<path>.meta`."""
    meta_path = path.with_name(path.name + ".meta")
    with open(meta_path, "w", encoding="utf-8", newline="\n") as meta_file:
        payload = json.dumps({"provenance": dict(provenance)}, sort_keys=True, indent=1)
        meta_file.write(payload + "\n")
    return meta_path


def _threading(config: PipelineConfig) -> ThreadingSettings:
    return ThreadingSettings(max_workers=config.threads)


def _documents(config: PipelineConfig) -> List[Document]:
    assert config.paths.corpus is not None
    return list(load_corpus(config.paths.corpus, config.corpus_format))


def _reranker(config: PipelineConfig, store: EmbeddingStore) -> KernelRanker:
    if config.paths.model is not None:
        return load_model(config.paths.model, store)
    return create_model(
        store,
        config.reranker,
        config.seed,
        config.training.max_query_length,
        config.training.max_doc_length,
    )


def cmd_index(config: PipelineConfig) -> Path:
    index = build_index(
        _documents(config), config.tokenizer, config.field_policy, config.provenance("index")
    )
    output = config.paths.index or config.output_path("index.bin")
    save_index(index, output)
    return output


def cmd_retrieve(config: PipelineConfig) -> Path:
    assert config.paths.index is not None and config.paths.queries is not None
    index = load_index(config.paths.index)
    queries = load_queries(config.paths.queries)
    if config.paths.run is not None:
        run = rescore_run(parse_run(config.paths.run), queries, index, config.scorer)
    else:
        run = batch_retrieve(queries, index, config.scorer, config.k, _threading(config))

    output = config.output_path(f"{config.scorer.kind}.run")
    write_run(run, output)
    write_meta(output, config.provenance("retrieve"))
    return output


def cmd_dense_retrieve(config: PipelineConfig) -> Path:
    assert config.paths.embeddings is not None and config.paths.queries is not None
    store = load_embeddings(config.paths.embeddings)
    matrix = build_dense(_documents(config), store, config.dense)
    run = batch_dense_retrieve(
        load_queries(config.paths.queries),
        matrix,
        store,
        config.dense.tokenizer,
        config.k,
        _threading(config),
    )

    output = config.output_path("dense.run")
    write_run(run, output)
    write_meta(output, config.provenance("dense-retrieve"))
    return output


def cmd_train(config: PipelineConfig) -> Path:
    assert config.paths.embeddings is not None and config.paths.queries is not None
    store = load_embeddings(config.paths.embeddings)
    corpus = tokenize_documents(_documents(config), config.tokenizer, config.field_policy)
    queries = tokenize_queries(load_queries(config.paths.queries), config.tokenizer)
    if config.training.loss == "pairwise_hinge":
        assert config.paths.triples is not None
        examples: Sequence[Any] = load_triples(config.paths.triples, queries, corpus)
    else:
        assert config.paths.labels is not None
        examples = load_labels(config.paths.labels, queries, corpus)

    validation = None
    qrels = None
    if config.paths.run is not None and config.paths.qrels is not None:
        validation = ValidationSet(
            parse_run(config.paths.run), queries, corpus, config.reranker.depth
        )
        qrels = parse_qrels(config.paths.qrels)

    model = _reranker(config, store)
    result = train(model, examples, validation, qrels, config.training)

    provenance = config.provenance("train")
    output = config.output_path("model.json")
    save_model(result.model, output, provenance)
    history = config.output_dir / "history.tsv"
    write_history(result.history, history)
    write_meta(history, provenance)
    return output


def cmd_weak_train(config: PipelineConfig) -> Path:
    assert config.paths.index is not None and config.paths.embeddings is not None
    assert config.paths.queries is not None and config.paths.run is not None
    assert config.paths.qrels is not None
    documents = _documents(config)
    weak = config.weak
    triples = synthesize_weak_pairs(
        documents,
        load_index(config.paths.index),
        weak.negatives_per_positive,
        weak.pool_depth,
        weak.seed,
        SparseScorerConfig("bm25", k1=config.scorer.k1, b=config.scorer.b),
    )

    store = load_embeddings(config.paths.embeddings)
    corpus = tokenize_documents(documents, config.tokenizer, config.field_policy)
    queries = tokenize_queries(load_queries(config.paths.queries), config.tokenizer)
    validation = ValidationSet(parse_run(config.paths.run), queries, corpus, config.reranker.depth)
    model = _reranker(config, store)
    result = selective_train(
        model, triples, validation, parse_qrels(config.paths.qrels), corpus, weak, config.training
    )

    provenance = config.provenance("weak-train")
    output = config.output_path("model.json")
    save_model(result.model, output, provenance)
    history = config.output_dir / "selection.tsv"
    write_selection_history(result.history, history)
    write_meta(history, provenance)
    return output


def cmd_rerank(config: PipelineConfig) -> Path:
    assert config.paths.model is not None and config.paths.embeddings is not None
    assert config.paths.queries is not None and config.paths.run is not None
    store = load_embeddings(config.paths.embeddings)
    model = load_model(config.paths.model, store)
    corpus = tokenize_documents(_documents(config), config.tokenizer, config.field_policy)
    queries = tokenize_queries(load_queries(config.paths.queries), config.tokenizer)
    run = rerank(
        model,
        parse_run(config.paths.run),
        corpus,
        queries,
        config.reranker.depth,
        _threading(config),
    )

    output = config.output_path("rerank.run")
    write_run(run, output)
    write_meta(output, config.provenance("rerank"))
    return output


def cmd_ensemble(config: PipelineConfig) -> Path:
    assert config.paths.qrels is not None
    run_paths = resolve_run_paths(config.paths.runs)
    if not run_paths:
        raise EmptyInputError("no run files were found for the ensemble")
    named_runs = [(feature_name(path), parse_run(path)) for path in run_paths]
    features = assemble_features(named_runs, config.ensemble.candidate_policy)
    qrels = parse_qrels(config.paths.qrels)

    ensemble = config.ensemble
    if ensemble.trainer == "coordinate_ascent":
        ranker = coordinate_ascent(
            features,
            qrels,
            ensemble.metric,
            ensemble.restarts,
            ensemble.tolerance,
            config.seed,
            config.evaluation.ndcg_gain,
        )
    else:
        ranker = ranknet_train(features, qrels, ensemble.ranknet)

    provenance = config.provenance("ensemble")
    save_ranker(ranker, config.output_dir / "ranker.json", provenance)
    features_path = config.output_dir / "features.tsv"
    write_features(features, features_path)
    write_meta(features_path, provenance)

    output = config.output_path("ensemble.run")
    write_run(ensemble_score(ranker, features), output)
    write_meta(output, provenance)
    return output


def cmd_eval(config: PipelineConfig) -> Path:
    assert config.paths.run is not None and config.paths.qrels is not None
    report = evaluate(
        parse_run(config.paths.run),
        parse_qrels(config.paths.qrels),
        config.evaluation.specs,
        config.evaluation.ndcg_gain,
    )

    output = config.output_path("report.tsv")
    write_report(report, output)
    write_meta(output, config.provenance("eval"))
    return output


_HANDLERS: Dict[Command, Callable[[PipelineConfig], Path]] = {
    "index": cmd_index,
    "retrieve": cmd_retrieve,
    "dense-retrieve": cmd_dense_retrieve,
    "rerank": cmd_rerank,
    "train": cmd_train,
    "weak-train": cmd_weak_train,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
}


GLOBAL_KEYS = ("seed", "threads", "output_dir")


def _add_global_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        type=Path,
        default=argparse.SUPPRESS,
        help="flat key = value configuration file",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=argparse.SUPPRESS,
        help="log INFO (-v) or DEBUG (-vv)",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_global_arguments(common)
    options = common.add_argument_group("configuration keys (override the config file)")
    for key, option in OPTIONS.items():
        options.add_argument(
            f"--{key.replace('_', '-')}", dest=key, default=argparse.SUPPRESS, help=option.help
        )

    parser = argparse.ArgumentParser(
        prog=TOOL_NAME, description="Two-stage retrieve-and-rerank experiments."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    _add_global_arguments(parser)
    for key in GLOBAL_KEYS:
        parser.add_argument(
            f"--{key.replace('_', '-')}",
            dest=key,
            default=argparse.SUPPRESS,
            help=OPTIONS[key].help,
        )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command in COMMANDS:
        subparser = subparsers.add_parser(command, parents=[common], help=_COMMAND_HELP[command])
        if command == "retrieve":
            subparser.add_argument(
                "--candidates",
                dest="run",
                default=argparse.SUPPRESS,
                help="rescore only the candidates of this run",
            )
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def run_command(command: Command, config: PipelineConfig) -> Path:
    """Validate the configuration for `command` and run it."""
    config.validate(command)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    output = _HANDLERS[command](config)
    logger.info("%s wrote %s", command, output)
    return output


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(getattr(args, "verbose", 0))

    overrides = {key: value for key, value in vars(args).items() if key in OPTIONS}
    config_path: Optional[Path] = getattr(args, "config", None)
    try:
        if config_path is not None:
            config = PipelineConfig.from_file(config_path, overrides)
        else:
            config = PipelineConfig.from_options(overrides)
        run_command(args.command, config)
    except RankerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0
