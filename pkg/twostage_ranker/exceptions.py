"""Error hierarchy shared by the library and the command line."""

from __future__ import annotations

from pathlib import Path
from typing import ClassVar, Optional, Union


class RankerError(Exception):
    """Base class of every error raised deliberately by `twostage_ranker`."""

    exit_code: ClassVar[int] = 1


class ConfigError(RankerError, ValueError):
    """A configuration value or command-line flag failed validation."""

    exit_code: ClassVar[int] = 2


class MissingInputError(RankerError, FileNotFoundError):
    """An input artifact referenced by a command does not exist."""

    exit_code: ClassVar[int] = 3


class FormatError(RankerError, ValueError):
    """
    A line of an input file does not follow its declared format.

    Attributes:
        path (Path | None): The offending file, if known.
        line_no (int | None): The 1-based line number, if known.
        reason (str): Why the line was rejected.
    """

    exit_code: ClassVar[int] = 4

    def __init__(
        self,
        reason: str,
        path: Optional[Union[str, Path]] = None,
        line_no: Optional[int] = None,
    ) -> None:
        self.reason = reason
        self.path = None if path is None else Path(path)
        self.line_no = line_no

        location = ""
        if self.path is not None:
            location = f"{self.path}"
        if line_no is not None:
            location = f"{location}:{line_no}" if location else f"line {line_no}"
        super().__init__(f"{location}: {reason}" if location else reason)


class DuplicateIdError(FormatError):
    """An identifier that must be unique appeared twice."""


class EmptyInputError(RankerError, ValueError):
    """An operation received an empty collection it cannot work with."""

    exit_code: ClassVar[int] = 6


class DegeneratePairError(RankerError, ValueError):
    """A query or document has no tokens left after truncation."""

    exit_code: ClassVar[int] = 6


class TrainingError(RankerError, ValueError):
    """Training cannot start with the given model and configuration."""

    exit_code: ClassVar[int] = 6


class IndexFormatError(RankerError):
    """Base class of the index persistence errors."""

    exit_code: ClassVar[int] = 5


class IndexVersionError(IndexFormatError):
    """The index file was written by an unsupported format version."""


class IndexCorruptionError(IndexFormatError):
    """The index file is truncated or structurally invalid."""


class IndexChecksumError(IndexFormatError):
    """The index file checksum does not match its contents."""


class ModelFormatError(RankerError):
    """A model or ranker checkpoint cannot be read."""

    exit_code: ClassVar[int] = 5


class ModelVersionError(ModelFormatError):
    """The checkpoint was written by an unsupported format version."""
