from twostage_ranker.checkpoint import load_model, save_model
from twostage_ranker.concurrency import ThreadingSettings
from twostage_ranker.config import (
    EnsembleConfig,
    EvaluationConfig,
    PathsConfig,
    PipelineConfig,
    TOOL_VERSION as __version__,
)
from twostage_ranker.embeddings import (
    DenseConfig,
    DenseDocMatrix,
    EmbeddingStore,
    batch_dense_retrieve,
    build_dense,
    cosine,
    dense_retrieve,
    encode_avg,
    load_embeddings,
    write_embeddings,
)
from twostage_ranker.evaluation import (
    MetricReport,
    MetricSpec,
    Qrels,
    evaluate,
    format_report,
    mean_average_precision,
    mrr_at_k,
    ndcg_at_k,
    parse_qrels,
    parse_run,
    precision_at_k,
    recall_at_k,
    write_report,
)
from twostage_ranker.exceptions import (
    ConfigError,
    DegeneratePairError,
    DuplicateIdError,
    EmptyInputError,
    FormatError,
    IndexChecksumError,
    IndexCorruptionError,
    IndexFormatError,
    IndexVersionError,
    MissingInputError,
    ModelFormatError,
    ModelVersionError,
    RankerError,
    TrainingError,
)
from twostage_ranker.few_shot import (
    SelectionResult,
    SelectionStep,
    WeakSupervisionConfig,
    WeakTriple,
    selective_train,
    synthesize_weak_pairs,
)
from twostage_ranker.gradient_check import check_model_gradients
from twostage_ranker.index import (
    CollectionStats,
    InvertedIndex,
    Posting,
    TermStats,
    build_index,
    load_index,
    postings,
    save_index,
    term_stats,
)
from twostage_ranker.kernels import KernelBank, kernel_pool, translation_matrix
from twostage_ranker.ltr import (
    FeatureMatrix,
    LinearRanker,
    RankNetConfig,
    assemble_features,
    coordinate_ascent,
    ensemble_score,
    load_ranker,
    ranknet_train,
    read_features,
    save_ranker,
    write_features,
)
from twostage_ranker.models import (
    ConvKnrmModel,
    KernelRanker,
    KnrmModel,
    RerankerConfig,
    convknrm_score,
    create_model,
    knrm_score,
    rerank,
)
from twostage_ranker.runs import RankedList, TrecRun, write_run
from twostage_ranker.sparse import (
    SparseScorerConfig,
    batch_retrieve,
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
from twostage_ranker.text import (
    Document,
    Query,
    TokenizerConfig,
    load_corpus,
    load_queries,
    tokenize,
)
from twostage_ranker.training import (
    PairwiseExample,
    PointwiseExample,
    TrainingConfig,
    TrainingResult,
    ValidationSet,
    load_labels,
    load_triples,
    train,
)

__all__ = [
    "__version__",
    "ConfigError",
    "CollectionStats",
    "ConvKnrmModel",
    "DegeneratePairError",
    "DenseConfig",
    "DenseDocMatrix",
    "Document",
    "DuplicateIdError",
    "EmbeddingStore",
    "EmptyInputError",
    "EnsembleConfig",
    "EvaluationConfig",
    "FeatureMatrix",
    "FormatError",
    "IndexChecksumError",
    "IndexCorruptionError",
    "IndexFormatError",
    "IndexVersionError",
    "InvertedIndex",
    "KernelBank",
    "KernelRanker",
    "KnrmModel",
    "LinearRanker",
    "MetricReport",
    "MetricSpec",
    "MissingInputError",
    "ModelFormatError",
    "ModelVersionError",
    "PairwiseExample",
    "PathsConfig",
    "PipelineConfig",
    "PointwiseExample",
    "Posting",
    "Qrels",
    "Query",
    "RankNetConfig",
    "RankedList",
    "RankerError",
    "RerankerConfig",
    "SelectionResult",
    "SelectionStep",
    "SparseScorerConfig",
    "TermStats",
    "ThreadingSettings",
    "TokenizerConfig",
    "TrainingConfig",
    "TrainingError",
    "TrainingResult",
    "TrecRun",
    "ValidationSet",
    "WeakSupervisionConfig",
    "WeakTriple",
    "assemble_features",
    "batch_dense_retrieve",
    "batch_retrieve",
    "build_dense",
    "build_index",
    "check_model_gradients",
    "convknrm_score",
    "coordinate_ascent",
    "cosine",
    "create_model",
    "dense_retrieve",
    "encode_avg",
    "ensemble_score",
    "evaluate",
    "format_report",
    "kernel_pool",
    "knrm_score",
    "load_corpus",
    "load_embeddings",
    "load_index",
    "load_labels",
    "load_model",
    "load_queries",
    "load_ranker",
    "load_triples",
    "mean_average_precision",
    "mrr_at_k",
    "ndcg_at_k",
    "parse_qrels",
    "parse_run",
    "postings",
    "precision_at_k",
    "ranknet_train",
    "read_features",
    "recall_at_k",
    "rerank",
    "rescore_run",
    "retrieve",
    "save_index",
    "save_model",
    "save_ranker",
    "score_bm25",
    "score_boolean",
    "score_coordinate_match",
    "score_cosine",
    "score_lm_dirichlet",
    "score_lm_jm",
    "score_sdm",
    "score_tfidf",
    "selective_train",
    "synthesize_weak_pairs",
    "term_stats",
    "tokenize",
    "train",
    "translation_matrix",
    "write_embeddings",
    "write_features",
    "write_report",
    "write_run",
]
