from pathlib import Path
from typing import List

import pytest

from twostage_ranker import ConfigError, MissingInputError
from twostage_ranker.paths import feature_name, resolve_run_paths, validate_output_path


def _touch(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")
    return path


@pytest.fixture
def run_directory(tmp_path: Path) -> Path:
    _touch(tmp_path / "runs" / "bm25.run")
    _touch(tmp_path / "runs" / "dense.run")
    _touch(tmp_path / "runs" / "notes.txt")
    _touch(tmp_path / "runs" / "nested" / "sdm.run")
    return tmp_path / "runs"


def _names(paths: List[Path]) -> List[str]:
    return [path.name for path in paths]


def test_resolve_directory(run_directory: Path) -> None:
    """Test that a directory resolves to its run files in sorted order."""
    assert _names(resolve_run_paths(run_directory)) == ["bm25.run", "dense.run"]
    assert _names(resolve_run_paths(str(run_directory), directory_walk=True)) == [
        "bm25.run",
        "dense.run",
        "sdm.run",
    ]
    assert _names(resolve_run_paths(run_directory, pattern="*.txt")) == ["notes.txt"]


def test_resolve_collection(run_directory: Path) -> None:
    """Test files and directories mixed, each path kept once in first-seen order."""
    sources = [run_directory / "dense.run", run_directory, run_directory / "nested" / "sdm.run"]
    assert _names(resolve_run_paths(sources)) == ["dense.run", "bm25.run", "sdm.run"]


def test_missing_sources(tmp_path: Path) -> None:
    """Test that absent sources raise `MissingInputError`."""
    with pytest.raises(MissingInputError):
        resolve_run_paths(tmp_path / "absent")
    with pytest.raises(MissingInputError):
        resolve_run_paths([tmp_path / "absent.run"])


def test_feature_name() -> None:
    """Test that a run contributes its file stem as a feature name."""
    assert feature_name("runs/bm25.run") == "bm25"
    assert feature_name(Path("dense")) == "dense"


def test_validate_output_path(tmp_path: Path) -> None:
    """Test accepted and rejected output paths."""
    assert validate_output_path(tmp_path / "out" / "report.tsv") == tmp_path / "out" / "report.tsv"
    with pytest.raises(ConfigError):
        validate_output_path(tmp_path / "bad\0name.run")
    with pytest.raises(ConfigError):
        validate_output_path(tmp_path)
