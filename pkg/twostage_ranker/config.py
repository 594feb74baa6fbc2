"""
Pipeline configuration.

A configuration file holds flat `key = value` lines, optionally under a
`[pipeline]` header, with `#` or `;` comments. Every key can also be given
as a command-line flag, which wins over the file. All values are parsed and
validated once into a frozen `PipelineConfig`.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Mapping, NamedTuple, Optional, Tuple

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.embeddings import DenseConfig
from twostage_ranker.evaluation import MetricSpec, NdcgGain
from twostage_ranker.exceptions import ConfigError, MissingInputError
from twostage_ranker.few_shot import WeakSupervisionConfig
from twostage_ranker.kernels import KernelBank
from twostage_ranker.ltr import CANDIDATE_POLICIES, CandidatePolicy, RankNetConfig
from twostage_ranker.models import RerankerConfig
from twostage_ranker.paths import validate_output_path
from twostage_ranker.sparse import SparseScorerConfig
from twostage_ranker.text import CorpusFormat, FieldPolicy, TokenizerConfig, load_stoplist
from twostage_ranker.training import TrainingConfig

TOOL_NAME = "twostage-ranker"
TOOL_VERSION = "0.1.0"
CONFIG_SECTION = "pipeline"

Command: TypeAlias = Literal[
    "index", "retrieve", "dense-retrieve", "rerank", "train", "weak-train", "ensemble", "eval"
]
EnsembleTrainer: TypeAlias = Literal["coordinate_ascent", "ranknet"]

COMMANDS: Tuple[Command, ...] = (
    "index",
    "retrieve",
    "dense-retrieve",
    "rerank",
    "train",
    "weak-train",
    "ensemble",
    "eval",
)
ENSEMBLE_TRAINERS: Tuple[EnsembleTrainer, ...] = ("coordinate_ascent", "ranknet")

_MAX_SEED = 2**64 - 1
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}

# Inputs each command reads; the first group is required.
_COMMAND_INPUTS: Dict[Command, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    "index": (("corpus",), ("stoplist",)),
    "retrieve": (("index", "queries"), ("run",)),
    "dense-retrieve": (("corpus", "queries", "embeddings"), ("stoplist",)),
    "rerank": (("model", "embeddings", "run", "corpus", "queries"), ("stoplist",)),
    "train": (
        ("embeddings", "corpus", "queries"),
        ("triples", "labels", "run", "qrels", "model", "stoplist"),
    ),
    "weak-train": (
        ("corpus", "index", "embeddings", "run", "queries", "qrels"),
        ("model", "stoplist"),
    ),
    "ensemble": (("runs", "qrels"), ()),
    "eval": (("run", "qrels"), ()),
}


@dataclass(frozen=True)
class PathsConfig:
    """
    Input artifacts of the pipeline. Unset paths are `None`.

    `index` is the output of the `index` command and an input of the
    commands that search it.
    """

    corpus: Optional[Path] = None
    queries: Optional[Path] = None
    qrels: Optional[Path] = None
    embeddings: Optional[Path] = None
    index: Optional[Path] = None
    run: Optional[Path] = None
    runs: Tuple[Path, ...] = ()
    model: Optional[Path] = None
    triples: Optional[Path] = None
    labels: Optional[Path] = None
    stoplist: Optional[Path] = None

    def is_set(self, name: str) -> bool:
        value = getattr(self, name)
        return bool(value) if isinstance(value, tuple) else value is not None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for name, value in asdict(self).items():
            if isinstance(value, tuple):
                data[name] = [str(path) for path in value]
            else:
                data[name] = None if value is None else str(value)
        return data


@dataclass(frozen=True)
class EnsembleConfig:
    """
    How ensemble features are assembled and combined.

    Attributes:
        trainer (EnsembleTrainer): `coordinate_ascent` or `ranknet`.
        candidate_policy (CandidatePolicy): `union` or `intersection`.
        metric (str): Metric coordinate ascent optimizes.
        restarts (int): Coordinate ascent restarts.
        tolerance (float): Coordinate ascent convergence threshold.
        ranknet (RankNetConfig): RankNet settings.
    """

    trainer: EnsembleTrainer = "coordinate_ascent"
    candidate_policy: CandidatePolicy = "union"
    metric: str = "ndcg@10"
    restarts: int = 5
    tolerance: float = 1e-5
    ranknet: RankNetConfig = field(default_factory=RankNetConfig)

    def __post_init__(self) -> None:
        if self.trainer not in ENSEMBLE_TRAINERS:
            raise ValueError(f"'trainer' must be one of {ENSEMBLE_TRAINERS}, got {self.trainer!r}")
        if self.candidate_policy not in CANDIDATE_POLICIES:
            raise ValueError(
                f"'candidate_policy' must be one of {CANDIDATE_POLICIES}, "
                f"got {self.candidate_policy!r}"
            )
        MetricSpec.parse(self.metric)
        if self.restarts < 1:
            raise ValueError(f"'restarts' must be at least 1, got {self.restarts}")
        if self.tolerance < 0:
            raise ValueError(f"'tolerance' must be non-negative, got {self.tolerance}")


@dataclass(frozen=True)
class EvaluationConfig:
    """Metrics the `eval` command reports and the NDCG gain they use."""

    metrics: Tuple[str, ...] = ("ndcg@10", "map", "mrr@10", "p@10")
    ndcg_gain: NdcgGain = "linear"

    def __post_init__(self) -> None:
        if not self.metrics:
            raise ValueError("'metrics' must name at least one metric")
        for metric in self.metrics:
            MetricSpec.parse(metric)
        if self.ndcg_gain not in ("linear", "exponential"):
            raise ValueError(f"'ndcg_gain' must be linear or exponential, got {self.ndcg_gain!r}")

    @property
    def specs(self) -> List[MetricSpec]:
        return [MetricSpec.parse(metric) for metric in self.metrics]


@dataclass(frozen=True)
class PipelineConfig:
    """
    Everything a pipeline command needs.

    Attributes:
        paths (PathsConfig): Input artifacts.
        tokenizer (TokenizerConfig): Tokenization of corpus and queries.
        field_policy (FieldPolicy): Document fields indexed and encoded.
        corpus_format (CorpusFormat | None): Corpus layout; inferred from the
            file extension when `None`.
        scorer (SparseScorerConfig): Sparse retrieval model.
        k (int): Documents retrieved per query.
        dense (DenseConfig): Dense retrieval settings.
        reranker (RerankerConfig): Kernel reranker architecture.
        training (TrainingConfig): Reranker training settings.
        weak (WeakSupervisionConfig): Weak supervision settings.
        ensemble (EnsembleConfig): Learning-to-rank settings.
        evaluation (EvaluationConfig): Reported metrics.
        seed (int): Seed of every random choice, a 64-bit unsigned integer.
        threads (int): Worker threads for per-query work.
        output_dir (Path): Directory outputs are written to.
        output (str | None): File name replacing a command's default output.
    """

    paths: PathsConfig = field(default_factory=PathsConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    field_policy: FieldPolicy = "title+body"
    corpus_format: Optional[CorpusFormat] = None
    scorer: SparseScorerConfig = field(default_factory=SparseScorerConfig)
    k: int = 100
    dense: DenseConfig = field(default_factory=DenseConfig)
    reranker: RerankerConfig = field(default_factory=RerankerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    weak: WeakSupervisionConfig = field(default_factory=WeakSupervisionConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0
    threads: int = 1
    output_dir: Path = Path(".")
    output: Optional[str] = None

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _MAX_SEED:
            raise ConfigError(f"'seed' must be a 64-bit unsigned integer, got {self.seed}")
        if self.threads < 1:
            raise ConfigError(f"'threads' must be at least 1, got {self.threads}")
        if self.k < 1:
            raise ConfigError(f"'k' must be positive, got {self.k}")

    @classmethod
    def from_file(
        cls, path: StrOrPath, overrides: Optional[Mapping[str, str]] = None
    ) -> PipelineConfig:
        """Read a configuration file, then apply command-line overrides."""
        values = read_config_file(path)
        values.update(overrides or {})
        return cls.from_options(values)

    @classmethod
    def from_options(cls, values: Mapping[str, str]) -> PipelineConfig:
        """Build a configuration from flat string options."""
        return _build_config(values)

    def output_path(self, default_name: str) -> Path:
        """Where a command writes its main output."""
        return self.output_dir / (self.output or default_name)

    def validate(self, command: Command) -> None:
        """
        Check that the inputs `command` reads are configured and exist, and
        that its output directory is a valid path.
        """
        if command not in _COMMAND_INPUTS:
            raise ConfigError(f"unknown command {command!r}")
        required, optional = _COMMAND_INPUTS[command]
        for name in required:
            if not self.paths.is_set(name):
                raise ConfigError(f"'{command}' needs the '{name}' input")
        if command == "train":
            needed = "triples" if self.training.loss == "pairwise_hinge" else "labels"
            if not self.paths.is_set(needed):
                raise ConfigError(
                    f"'train' with loss {self.training.loss} needs the '{needed}' input"
                )
            if self.paths.is_set("run") != self.paths.is_set("qrels"):
                raise ConfigError("validation during 'train' needs both 'run' and 'qrels'")

        for name in required + optional:
            value = getattr(self.paths, name)
            for path in value if isinstance(value, tuple) else (value,):
                if path is not None and not Path(path).exists():
                    raise MissingInputError(f"{name} input '{path}' does not exist")
        validate_output_path(self.output_dir / (self.output or "output"))

    def to_dict(self) -> Dict[str, Any]:
        """A JSON-ready representation of every field."""
        return {
            "paths": self.paths.to_dict(),
            "tokenizer": self.tokenizer.to_dict(),
            "field_policy": self.field_policy,
            "corpus_format": self.corpus_format,
            "scorer": self.scorer.to_dict(),
            "k": self.k,
            "dense": {"metric": self.dense.metric},
            "reranker": {
                "kind": self.reranker.kind,
                "kernels": self.reranker.kernels.to_dict(),
                "epsilon": self.reranker.epsilon,
                "ngram_sizes": list(self.reranker.ngram_sizes),
                "num_filters": self.reranker.num_filters,
                "depth": self.reranker.depth,
            },
            "training": asdict(self.training),
            "weak": asdict(self.weak),
            "ensemble": {
                "trainer": self.ensemble.trainer,
                "candidate_policy": self.ensemble.candidate_policy,
                "metric": self.ensemble.metric,
                "restarts": self.ensemble.restarts,
                "tolerance": self.ensemble.tolerance,
                "ranknet": asdict(self.ensemble.ranknet),
            },
            "evaluation": {
                "metrics": list(self.evaluation.metrics),
                "ndcg_gain": self.evaluation.ndcg_gain,
            },
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": str(self.output_dir),
            "output": self.output,
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every field that affects results."""
        data = self.to_dict()
        for name in ("threads", "output_dir", "output"):
            data.pop(name)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def provenance(self, command: str) -> Dict[str, Any]:
        return {
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "command": command,
        }


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else int(text)


def _parse_list(text: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in text.split(",") if item.strip())


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(item) for item in _parse_list(text))


def _parse_ints(text: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in _parse_list(text))


def _parse_paths(text: str) -> Tuple[Path, ...]:
    return tuple(Path(item) for item in _parse_list(text))


def _parse_text(text: str) -> str:
    return text.strip()


class ConfigOption(NamedTuple):
    parse: Callable[[str], Any]
    help: str


OPTIONS: Dict[str, ConfigOption] = {
    # paths
    "corpus": ConfigOption(Path, "corpus file (.tsv or .jsonl)"),
    "queries": ConfigOption(Path, "queries file, query_id<TAB>text"),
    "qrels": ConfigOption(Path, "relevance judgments"),
    "embeddings": ConfigOption(Path, "word2vec text embeddings"),
    "index": ConfigOption(Path, "inverted index file"),
    "run": ConfigOption(Path, "input run file"),
    "runs": ConfigOption(_parse_paths, "comma-separated run files or directories for 'ensemble'"),
    "model": ConfigOption(Path, "reranker checkpoint"),
    "triples": ConfigOption(Path, "training triples, query_id<TAB>pos<TAB>neg"),
    "labels": ConfigOption(Path, "pointwise labels, query_id<TAB>doc_id<TAB>label"),
    "stoplist": ConfigOption(Path, "stoplist replacing the bundled one"),
    # text
    "lowercase": ConfigOption(_parse_bool, "lowercase tokens"),
    "remove_stopwords": ConfigOption(_parse_bool, "drop stoplist words"),
    "stem": ConfigOption(_parse_bool, "apply the Porter stemmer"),
    "field_policy": ConfigOption(_parse_text, "indexed fields: title+body or body"),
    "corpus_format": ConfigOption(_parse_text, "corpus layout: tsv or jsonl"),
    # sparse retrieval
    "scorer": ConfigOption(_parse_text, "sparse scorer kind"),
    "k": ConfigOption(int, "documents retrieved per query"),
    "k1": ConfigOption(float, "BM25 k1"),
    "b": ConfigOption(float, "BM25 b"),
    "mu": ConfigOption(float, "Dirichlet prior"),
    "jm_lambda": ConfigOption(float, "Jelinek-Mercer lambda"),
    "sdm_weights": ConfigOption(_parse_floats, "SDM unigram,ordered,unordered weights"),
    "sdm_window": ConfigOption(int, "SDM unordered window"),
    # dense retrieval
    "dense_metric": ConfigOption(_parse_text, "dense similarity: cosine or dot"),
    # reranker
    "model_kind": ConfigOption(_parse_text, "reranker: knrm or conv_knrm"),
    "kernel_mu": ConfigOption(_parse_floats, "comma-separated kernel means"),
    "kernel_sigma": ConfigOption(_parse_floats, "comma-separated kernel widths"),
    "epsilon": ConfigOption(float, "kernel pooling log guard"),
    "ngram_sizes": ConfigOption(_parse_ints, "Conv-KNRM n-gram sizes"),
    "num_filters": ConfigOption(int, "Conv-KNRM filters per n-gram size"),
    "depth": ConfigOption(int, "documents reranked per query"),
    # training
    "loss": ConfigOption(_parse_text, "pairwise_hinge or pointwise_bce"),
    "margin": ConfigOption(float, "hinge margin"),
    "optimizer": ConfigOption(_parse_text, "sgd or adam"),
    "learning_rate": ConfigOption(float, "reranker learning rate"),
    "beta1": ConfigOption(float, "Adam beta1"),
    "beta2": ConfigOption(float, "Adam beta2"),
    "adam_epsilon": ConfigOption(float, "Adam epsilon"),
    "batch_size": ConfigOption(int, "training batch size"),
    "epochs": ConfigOption(int, "training epochs"),
    "shuffle": ConfigOption(_parse_bool, "shuffle training examples"),
    "patience": ConfigOption(_parse_optional_int, "early stopping patience or none"),
    "train_ranking_layer": ConfigOption(_parse_bool, "update w and b"),
    "train_conv_filters": ConfigOption(_parse_bool, "update convolution filters"),
    "train_embeddings": ConfigOption(_parse_bool, "update word embeddings"),
    "max_query_length": ConfigOption(int, "query tokens kept"),
    "max_doc_length": ConfigOption(int, "document tokens kept"),
    # weak supervision
    "negatives_per_positive": ConfigOption(int, "weak negatives per titled document"),
    "pool_depth": ConfigOption(int, "BM25 pool depth for weak negatives"),
    "alpha": ConfigOption(float, "selection weight step"),
    "weak_batch_size": ConfigOption(int, "weak triples per candidate batch"),
    "max_steps": ConfigOption(int, "selection steps"),
    # ensemble
    "trainer": ConfigOption(_parse_text, "coordinate_ascent or ranknet"),
    "candidate_policy": ConfigOption(_parse_text, "union or intersection"),
    "ensemble_metric": ConfigOption(_parse_text, "metric coordinate ascent optimizes"),
    "restarts": ConfigOption(int, "coordinate ascent restarts"),
    "tolerance": ConfigOption(float, "coordinate ascent tolerance"),
    "ranknet_learning_rate": ConfigOption(float, "RankNet learning rate"),
    "ranknet_epochs": ConfigOption(int, "RankNet epochs"),
    "ranknet_batch_size": ConfigOption(_parse_optional_int, "RankNet pairs per step or none"),
    # evaluation
    "metrics": ConfigOption(_parse_list, "comma-separated metrics, e.g. ndcg@10,map"),
    "ndcg_gain": ConfigOption(_parse_text, "linear or exponential"),
    # global
    "seed": ConfigOption(int, "seed of every random choice"),
    "threads": ConfigOption(int, "worker threads"),
    "output_dir": ConfigOption(Path, "output directory"),
    "output": ConfigOption(_parse_text, "output file name"),
}


def _option_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config_file(path: StrOrPath) -> Dict[str, str]:
    """Read the flat options of a configuration file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise MissingInputError(f"config file '{config_path}' does not exist")

    text = config_path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";")
    )
    try:
        parser.read_string(text if text.lstrip().startswith("[") else f"[{CONFIG_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"config file '{config_path}' is malformed: {exc}") from exc

    extra = [section for section in parser.sections() if section != CONFIG_SECTION]
    if extra:
        raise ConfigError(f"config file '{config_path}' has unknown sections {extra}")
    if not parser.has_section(CONFIG_SECTION):
        return {}
    return {_option_key(key): value for key, value in parser.items(CONFIG_SECTION)}


def _build_config(values: Mapping[str, str]) -> PipelineConfig:
    options = {_option_key(key): value for key, value in values.items()}
    unknown = sorted(set(options) - set(OPTIONS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    parsed: Dict[str, Any] = {}
    for key, text in options.items():
        try:
            parsed[key] = OPTIONS[key].parse(text)
        except ValueError as exc:
            raise ConfigError(f"'{key}' has an invalid value {text!r}: {exc}") from exc

    def pick(*keys: str, **renames: str) -> Dict[str, Any]:
        picked = {key: parsed[key] for key in keys if key in parsed}
        picked.update({name: parsed[key] for name, key in renames.items() if key in parsed})
        return picked

    seed = parsed.get("seed", 0)
    try:
        paths = PathsConfig(
            **pick(
                "corpus", "queries", "qrels", "embeddings", "index", "run", "runs",
                "model", "triples", "labels", "stoplist",
            )
        )
        tokenizer_options = pick("lowercase", "remove_stopwords", "stem")
        if paths.stoplist is not None:
            tokenizer_options["stoplist"] = load_stoplist(paths.stoplist)
        tokenizer = TokenizerConfig(**tokenizer_options)
        field_policy = parsed.get("field_policy", "title+body")
        if field_policy not in ("title+body", "body"):
            raise ValueError(f"'field_policy' must be title+body or body, got {field_policy!r}")
        corpus_format = parsed.get("corpus_format")
        if corpus_format not in (None, "tsv", "jsonl"):
            raise ValueError(f"'corpus_format' must be tsv or jsonl, got {corpus_format!r}")

        reranker_options = pick("epsilon", "ngram_sizes", "num_filters", "depth", kind="model_kind")
        if "kernel_mu" in parsed or "kernel_sigma" in parsed:
            default_bank = KernelBank()
            reranker_options["kernels"] = KernelBank(
                parsed.get("kernel_mu", default_bank.mu),
                parsed.get("kernel_sigma", default_bank.sigma),
            )

        return PipelineConfig(
            paths=paths,
            tokenizer=tokenizer,
            field_policy=field_policy,
            corpus_format=corpus_format,
            scorer=SparseScorerConfig(
                **pick("k1", "b", "mu", "jm_lambda", "sdm_weights", "sdm_window", kind="scorer")
            ),
            k=parsed.get("k", 100),
            dense=DenseConfig(
                **pick(metric="dense_metric"), field_policy=field_policy, tokenizer=tokenizer
            ),
            reranker=RerankerConfig(**reranker_options),
            training=TrainingConfig(
                seed=seed,
                **pick(
                    "loss", "margin", "optimizer", "learning_rate", "beta1", "beta2",
                    "adam_epsilon", "batch_size", "epochs", "shuffle", "patience",
                    "train_ranking_layer", "train_conv_filters", "train_embeddings",
                    "max_query_length", "max_doc_length",
                ),
            ),
            weak=WeakSupervisionConfig(
                seed=seed,
                **pick(
                    "negatives_per_positive", "pool_depth", "alpha", "max_steps",
                    batch_size="weak_batch_size",
                ),
            ),
            ensemble=EnsembleConfig(
                ranknet=RankNetConfig(
                    seed=seed,
                    **pick(
                        learning_rate="ranknet_learning_rate",
                        epochs="ranknet_epochs",
                        batch_size="ranknet_batch_size",
                    ),
                ),
                **pick(
                    "trainer", "candidate_policy", "restarts", "tolerance", metric="ensemble_metric"
                ),
            ),
            evaluation=EvaluationConfig(**pick("metrics", "ndcg_gain")),
            seed=seed,
            **pick("threads", "output_dir", "output"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
