from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import pytest

from twostage_ranker import ConfigError, MissingInputError, PipelineConfig
from twostage_ranker.config import TOOL_NAME, TOOL_VERSION, read_config_file

from tests.helpers import TOY_CONFIG_PATH, TOY_QRELS_PATH, TOY_RUN_PATH


def test_toy_config() -> None:
    """Test that every section of the toy configuration is parsed."""
    config = PipelineConfig.from_file(TOY_CONFIG_PATH)
    assert config.scorer.kind == "bm25"
    assert (config.scorer.k1, config.scorer.b) == (0.9, 0.4)
    assert config.k == 10
    assert config.reranker.kind == "knrm"
    assert config.reranker.depth == 10
    assert (config.training.epochs, config.training.batch_size) == (2, 4)
    assert config.training.learning_rate == 0.01
    assert (config.weak.batch_size, config.weak.max_steps) == (2, 5)
    assert config.ensemble.restarts == 2
    assert config.evaluation.metrics == ("ndcg@10", "map", "mrr@10", "p@10")
    assert config.seed == config.training.seed == config.weak.seed == 7
    assert config.ensemble.ranknet.seed == 7


def test_overrides_win() -> None:
    """Test that command-line values replace file values."""
    config = PipelineConfig.from_file(TOY_CONFIG_PATH, {"k": "5", "model-kind": "conv_knrm"})
    assert config.k == 5
    assert config.reranker.kind == "conv_knrm"


def test_file_without_section(tmp_path: Path) -> None:
    """Test that a bare `key = value` file reads as the pipeline section."""
    path = tmp_path / "bare.ini"
    path.write_text("; comment\nk = 3  # inline\nkernel-mu = 1.0, 0.5\nkernel_sigma = 0.001, 0.1\n")
    assert read_config_file(path) == {
        "k": "3",
        "kernel_mu": "1.0, 0.5",
        "kernel_sigma": "0.001, 0.1",
    }
    config = PipelineConfig.from_file(path)
    assert config.k == 3
    assert config.reranker.kernels.mu == (1.0, 0.5)


@dataclass(frozen=True)
class ConfigErrorTestCase:
    """Dataclass representing an invalid option test case."""

    options: Dict[str, str]


@pytest.mark.parametrize(
    "test_case",
    [
        ConfigErrorTestCase({"colour": "blue"}),
        ConfigErrorTestCase({"k": "ten"}),
        ConfigErrorTestCase({"k": "0"}),
        ConfigErrorTestCase({"seed": "-1"}),
        ConfigErrorTestCase({"seed": str(2**64)}),
        ConfigErrorTestCase({"shuffle": "maybe"}),
        ConfigErrorTestCase({"scorer": "magic"}),
        ConfigErrorTestCase({"field_policy": "title"}),
        ConfigErrorTestCase({"corpus_format": "xml"}),
        ConfigErrorTestCase({"metrics": "ndcg@10,foo"}),
        ConfigErrorTestCase({"trainer": "svm"}),
        ConfigErrorTestCase({"threads": "0"}),
        ConfigErrorTestCase({"kernel_mu": "1.0,0.5"}),
    ],
)
def test_invalid_options(test_case: ConfigErrorTestCase) -> None:
    """Test that bad keys and values raise `ConfigError` with exit code 2."""
    with pytest.raises(ConfigError) as exc_info:
        PipelineConfig.from_options(test_case.options)
    assert exc_info.value.exit_code == 2


def test_config_file_errors(tmp_path: Path) -> None:
    """Test unknown sections and missing files."""
    path = tmp_path / "extra.ini"
    path.write_text("[pipeline]\nk = 3\n[other]\nk = 4\n")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(MissingInputError):
        PipelineConfig.from_file(tmp_path / "absent.ini")


def test_config_hash() -> None:
    """Test that the hash ignores threads and output location only."""
    base = PipelineConfig.from_options({"k": "10"})
    assert len(base.config_hash()) == 64
    assert PipelineConfig.from_options({}).config_hash() == PipelineConfig().config_hash()
    moved = PipelineConfig.from_options(
        {"k": "10", "threads": "4", "output_dir": "elsewhere", "output": "x.run"}
    )
    assert moved.config_hash() == base.config_hash()
    assert PipelineConfig.from_options({"seed": "1"}).config_hash() != base.config_hash()
    assert PipelineConfig.from_options({"stem": "no"}).config_hash() != base.config_hash()

    provenance = base.provenance("eval")
    assert provenance == {
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "config_hash": base.config_hash(),
        "seed": 0,
        "command": "eval",
    }


def test_output_path(tmp_path: Path) -> None:
    """Test the default and overridden output file names."""
    config = PipelineConfig.from_options({"output_dir": str(tmp_path)})
    assert config.output_path("report.tsv") == tmp_path / "report.tsv"
    named = PipelineConfig.from_options({"output_dir": str(tmp_path), "output": "mine.tsv"})
    assert named.output_path("report.tsv") == tmp_path / "mine.tsv"


def test_validate(tmp_path: Path) -> None:
    """Test the required and existing inputs of each command."""
    inputs = {"run": str(TOY_RUN_PATH), "qrels": str(TOY_QRELS_PATH), "output_dir": str(tmp_path)}
    PipelineConfig.from_options(inputs).validate("eval")

    with pytest.raises(ConfigError):
        PipelineConfig.from_options({"run": str(TOY_RUN_PATH)}).validate("eval")
    with pytest.raises(MissingInputError):
        PipelineConfig.from_options({**inputs, "qrels": str(tmp_path / "absent")}).validate("eval")
    with pytest.raises(ConfigError):
        PipelineConfig.from_options(inputs).validate("search")  # type: ignore[arg-type]


def test_validate_train_inputs(tmp_path: Path) -> None:
    """Test that training needs the example file its loss reads and paired validation."""
    inputs = {
        "embeddings": str(tmp_path),
        "corpus": str(tmp_path),
        "queries": str(tmp_path),
        "triples": str(tmp_path),
    }
    PipelineConfig.from_options(inputs).validate("train")
    with pytest.raises(ConfigError):
        PipelineConfig.from_options({**inputs, "loss": "pointwise_bce"}).validate("train")
    with pytest.raises(ConfigError):
        PipelineConfig.from_options({**inputs, "run": str(TOY_RUN_PATH)}).validate("train")
