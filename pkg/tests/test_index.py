from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Type

import pytest

from twostage_ranker import (
    Document,
    DuplicateIdError,
    EmptyInputError,
    IndexChecksumError,
    IndexCorruptionError,
    IndexFormatError,
    IndexVersionError,
    MissingInputError,
    Posting,
    TermStats,
    TokenizerConfig,
    build_index,
    load_corpus,
    load_index,
    postings,
    save_index,
    term_stats,
)
from twostage_ranker.index import serialize_index

from tests.helpers import PLAIN_TOKENIZER, TOY_CORPUS_PATH, random_documents

SMALL_DOCUMENTS = [
    Document("a", "", "x y x"),
    Document("b", "", "y z"),
    Document("c", "", ""),
]


def test_postings_and_stats() -> None:
    """Test positional postings and collection statistics of a small index."""
    index = build_index(SMALL_DOCUMENTS, PLAIN_TOKENIZER)
    assert postings(index, "x") == [Posting(0, 2, (0, 2))]
    assert postings(index, "y") == [Posting(0, 1, (1,)), Posting(1, 1, (0,))]
    assert postings(index, "missing") == []
    assert term_stats(index, "y") == TermStats(2, 2)
    assert term_stats(index, "missing") == TermStats(0, 0)
    assert index.stats.num_docs == 3
    assert index.stats.total_terms == 5
    assert index.stats.avgdl == pytest.approx(5 / 3)
    assert [entry.doc_length for entry in index.doc_table] == [3, 2, 0]
    assert index.doc_tokens(0) == ["x", "y", "x"]
    assert index.ordinal("b") == 1
    assert index.ordinal("missing") is None


def test_title_indexed_before_body() -> None:
    """Test that title tokens take the first positions under `title+body`."""
    document = Document("a", "owl", "bird owl")
    index = build_index([document], PLAIN_TOKENIZER)
    assert postings(index, "owl") == [Posting(0, 2, (0, 2))]

    body_index = build_index([document], PLAIN_TOKENIZER, field_policy="body")
    assert postings(body_index, "owl") == [Posting(0, 1, (1,))]


def test_invariants_on_random_corpus() -> None:
    """Test that lengths, frequencies and positions agree with each other."""
    index = build_index(random_documents(seed=3, num_docs=40), PLAIN_TOKENIZER)
    assert index.stats.total_terms == sum(entry.doc_length for entry in index.doc_table)
    for term, postings_list in index.dictionary.items():
        stats = index.term_stats(term)
        assert stats.df == len(postings_list)
        assert stats.ctf == sum(posting.term_frequency for posting in postings_list)
        ordinals = [posting.doc_ordinal for posting in postings_list]
        assert ordinals == sorted(set(ordinals))
        for posting in postings_list:
            doc_length = index.doc_table[posting.doc_ordinal].doc_length
            assert all(0 <= position < doc_length for position in posting.positions)


def test_duplicate_and_empty_corpus() -> None:
    """Test that duplicate ids and empty corpora are rejected."""
    with pytest.raises(DuplicateIdError):
        build_index([Document("a", "", "x"), Document("a", "", "y")], PLAIN_TOKENIZER)
    with pytest.raises(EmptyInputError):
        build_index([], PLAIN_TOKENIZER)


def test_round_trip(tmp_path: Path) -> None:
    """Test that a saved index loads back equal, with its provenance."""
    index = build_index(
        load_corpus(TOY_CORPUS_PATH), TokenizerConfig(), provenance={"command": "index"}
    )
    path = tmp_path / "index.bin"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded == index
    assert loaded.provenance == {"command": "index"}
    assert loaded.tokenizer == index.tokenizer
    assert loaded.stats == index.stats


def test_serialization_is_deterministic() -> None:
    """Test that building the same corpus twice gives identical bytes."""
    first = build_index(load_corpus(TOY_CORPUS_PATH), TokenizerConfig())
    second = build_index(load_corpus(TOY_CORPUS_PATH), TokenizerConfig())
    assert serialize_index(first) == serialize_index(second)


def _flip_payload_byte(data: bytes) -> bytes:
    position = len(data) // 2
    return data[:position] + bytes([data[position] ^ 0xFF]) + data[position + 1 :]


def _bump_version(data: bytes) -> bytes:
    return data[:4] + bytes([data[4] + 1]) + data[5:]


@dataclass(frozen=True)
class CorruptionTestCase:
    """Dataclass representing a damaged index file test case."""

    damage: Callable[[bytes], bytes]
    error: Type[IndexFormatError]


@pytest.mark.parametrize(
    "test_case",
    [
        CorruptionTestCase(_flip_payload_byte, IndexChecksumError),
        CorruptionTestCase(lambda data: data[:-10], IndexCorruptionError),
        CorruptionTestCase(lambda data: data + b"\x00", IndexCorruptionError),
        CorruptionTestCase(lambda data: b"XXXX" + data[4:], IndexCorruptionError),
        CorruptionTestCase(lambda data: data[:6], IndexCorruptionError),
        CorruptionTestCase(_bump_version, IndexVersionError),
    ],
)
def test_corrupted_index(tmp_path: Path, test_case: CorruptionTestCase) -> None:
    """Test that damaged index files are rejected with a format error."""
    index = build_index(SMALL_DOCUMENTS, PLAIN_TOKENIZER)
    path = tmp_path / "index.bin"
    path.write_bytes(test_case.damage(serialize_index(index)))
    with pytest.raises(test_case.error) as exc_info:
        load_index(path)
    assert exc_info.value.exit_code == 5


def test_missing_index(tmp_path: Path) -> None:
    """Test that a missing index file raises `MissingInputError`."""
    with pytest.raises(MissingInputError):
        load_index(tmp_path / "absent.bin")
