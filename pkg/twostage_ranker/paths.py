"""Resolution of input run files and validation of output paths."""

from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Collection, Generator, List, Union

from pathvalidate import ValidationError, validate_filepath

from twostage_ranker._typing import StrOrPath
from twostage_ranker.exceptions import ConfigError, MissingInputError

RUN_FILE_PATTERN = "*.run"


class _AbstractPathResolver(ABC):
    """
    Abstract base class for resolving run file paths with options for a
    recursive directory walk and the file name pattern.
    """

    def __init__(self, directory_walk: bool, pattern: str) -> None:
        self.directory_walk = directory_walk
        self.pattern = pattern

    @abstractmethod
    def get_run_files(self) -> Generator[Path, None, None]:
        """Yields run file paths based on the resolver's configuration."""
        pass

    def _find_directory_files(self, path: Path) -> Generator[Path, None, None]:
        """
        Yields matching files of a directory in sorted order, recursing
        into subdirectories if enabled.
        """
        directory_files = (
            path.rglob(self.pattern) if self.directory_walk else path.glob(self.pattern)
        )
        for file in sorted(directory_files):
            if file.is_file():
                yield file


class _CollectionPathResolver(_AbstractPathResolver):
    """Resolver over a collection of files and directories."""

    def __init__(self, sources: Collection[StrOrPath], *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.sources = sources

    def get_run_files(self) -> Generator[Path, None, None]:
        """
        Yields each file source as given and the matching files of each
        directory source.
        """
        for source in self.sources:
            source_path = Path(source)
            if not source_path.exists():
                raise MissingInputError(f"run source '{source_path}' does not exist")

            if source_path.is_dir():
                yield from self._find_directory_files(source_path)
            else:
                yield source_path


class _DirectoryPathResolver(_AbstractPathResolver):
    """Resolver over the matching files of a single directory."""

    def __init__(self, source: StrOrPath, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.source = source

    def get_run_files(self) -> Generator[Path, None, None]:
        source_path = Path(self.source)
        if not source_path.is_dir():
            raise MissingInputError(f"run directory '{source_path}' does not exist")
        yield from self._find_directory_files(source_path)


def resolve_run_paths(
    sources: Union[StrOrPath, Collection[StrOrPath]],
    directory_walk: bool = False,
    pattern: str = RUN_FILE_PATTERN,
) -> List[Path]:
    """
    Resolve run files from a directory or from a collection of files and
    directories. Each path appears once, in first-seen order.
    """
    resolver: _AbstractPathResolver
    if isinstance(sources, Collection) and not isinstance(sources, str):
        resolver = _CollectionPathResolver(sources, directory_walk, pattern)
    else:
        resolver = _DirectoryPathResolver(sources, directory_walk, pattern)

    resolved: List[Path] = []
    for path in resolver.get_run_files():
        if path not in resolved:
            resolved.append(path)
    return resolved


def feature_name(path: StrOrPath) -> str:
    """The feature name a run file contributes to an ensemble: its stem."""
    return Path(path).stem


def validate_output_path(path: StrOrPath) -> Path:
    """
    Check that an output path is a valid file path on this platform and that
    its parent directory can be created.
    """
    output_path = Path(path)
    try:
        validate_filepath(output_path, platform="auto")
    except ValidationError as exc:
        raise ConfigError(f"output path '{output_path}' is invalid: {exc}") from exc
    if output_path.exists() and output_path.is_dir():
        raise ConfigError(f"output path '{output_path}' is a directory")
    return output_path
