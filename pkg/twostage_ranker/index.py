"""
Positional inverted index with the collection statistics sparse scorers need.

On-disk layout (little-endian, format version 1)::

    header    magic b"TSRI" | version u8 | payload_length u64
    payload   metadata_length u32 | metadata (UTF-8 JSON: tokenizer,
              field_policy, provenance)
              N u32 | total_terms u64
              doc table: N x (id_length u32 | id bytes | doc_length u32)
              term_count u32
              dictionary, terms in sorted order:
                  term_length u32 | term bytes | df u32 | ctf u64
                  df x (doc_ordinal u32 | tf u32 | tf x position u32)
    trailer   crc32 u32 over header and payload
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import (
    Any,
    DefaultDict,
    Dict,
    Iterable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Set,
    Tuple,
)

import numpy as np

from twostage_ranker._typing import StrOrPath
from twostage_ranker.exceptions import (
    DuplicateIdError,
    EmptyInputError,
    IndexChecksumError,
    IndexCorruptionError,
    IndexVersionError,
    MissingInputError,
)
from twostage_ranker.text import (
    Document,
    FieldPolicy,
    TokenizerConfig,
    document_tokens,
)

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"TSRI"
INDEX_FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sBQ")
_TRAILER = struct.Struct("<I")


@dataclass(frozen=True)
class Posting:
    """
    Occurrences of one term in one document.

    Attributes:
        doc_ordinal (int): Index of the document in the doc table.
        term_frequency (int): Number of occurrences, at least 1.
        positions (Tuple[int, ...]): Strictly increasing 0-based offsets.
    """

    doc_ordinal: int
    term_frequency: int
    positions: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.term_frequency < 1 or self.term_frequency != len(self.positions):
            raise ValueError("'term_frequency' must equal the number of positions")
        if any(a >= b for a, b in zip(self.positions, self.positions[1:])):
            raise ValueError("'positions' must be strictly increasing")


@dataclass(frozen=True)
class DocEntry:
    """A row of the doc table."""

    doc_id: str
    doc_length: int


class TermStats(NamedTuple):
    """Document frequency and collection term frequency of a term."""

    df: int
    ctf: int


@dataclass(frozen=True)
class CollectionStats:
    """
    Collection-wide counts.

    Attributes:
        num_docs (int): N, the number of documents.
        total_terms (int): Sum of all document lengths.
        avgdl (float): `total_terms / num_docs`.
    """

    num_docs: int
    total_terms: int
    avgdl: float


@dataclass(frozen=True)
class InvertedIndex:
    """
    An immutable positional inverted index.

    Two indexes compare equal when their dictionaries, doc tables, tokenizer
    configuration and field policy are equal; provenance is ignored.

    Attributes:
        dictionary (Mapping[str, Tuple[Posting, ...]]): Term to postings,
            postings sorted by document ordinal.
        doc_table (Tuple[DocEntry, ...]): Document ids and lengths by ordinal.
        tokenizer (TokenizerConfig): Configuration documents were tokenized
            with; queries must use the same one.
        field_policy (FieldPolicy): Which document fields were indexed.
        provenance (Dict[str, Any]): Free-form record of how the index was made.
    """

    dictionary: Mapping[str, Tuple[Posting, ...]]
    doc_table: Tuple[DocEntry, ...]
    tokenizer: TokenizerConfig
    field_policy: FieldPolicy = "title+body"
    provenance: Dict[str, Any] = field(default_factory=dict, compare=False)

    @cached_property
    def stats(self) -> CollectionStats:
        num_docs = len(self.doc_table)
        total_terms = sum(entry.doc_length for entry in self.doc_table)
        avgdl = total_terms / num_docs if num_docs else 0.0
        return CollectionStats(num_docs, total_terms, avgdl)

    @cached_property
    def doc_lengths(self) -> np.ndarray:
        """Document lengths as a float array indexed by ordinal."""
        return np.array([entry.doc_length for entry in self.doc_table], dtype=np.float64)

    @cached_property
    def _ordinals(self) -> Dict[str, int]:
        return {entry.doc_id: ordinal for ordinal, entry in enumerate(self.doc_table)}

    @cached_property
    def doc_norms(self) -> np.ndarray:
        """Euclidean norms of the ltc-weighted document term vectors."""
        squares = np.zeros(len(self.doc_table), dtype=np.float64)
        num_docs = len(self.doc_table)
        for postings_list in self.dictionary.values():
            idf = math.log(num_docs / len(postings_list))
            for posting in postings_list:
                weight = (1.0 + math.log(posting.term_frequency)) * idf
                squares[posting.doc_ordinal] += weight * weight
        return np.sqrt(squares)

    def postings(self, term: str) -> Tuple[Posting, ...]:
        """Postings of a term, empty for unknown terms."""
        return self.dictionary.get(term, ())

    def term_stats(self, term: str) -> TermStats:
        """Document and collection frequency of a term, `(0, 0)` if unknown."""
        postings_list = self.dictionary.get(term, ())
        ctf = sum(posting.term_frequency for posting in postings_list)
        return TermStats(len(postings_list), ctf)

    def doc_id(self, ordinal: int) -> str:
        return self.doc_table[ordinal].doc_id

    def ordinal(self, doc_id: str) -> Optional[int]:
        """The ordinal of a document id, or `None` if it is not indexed."""
        return self._ordinals.get(doc_id)

    def doc_tokens(self, ordinal: int) -> List[str]:
        """Rebuild a document's token sequence from the positional postings."""
        tokens: List[Optional[str]] = [None] * self.doc_table[ordinal].doc_length
        for term, postings_list in self.dictionary.items():
            for posting in postings_list:
                if posting.doc_ordinal == ordinal:
                    for position in posting.positions:
                        tokens[position] = term
        if any(token is None for token in tokens):
            raise IndexCorruptionError(
                f"positions of document ordinal {ordinal} do not cover its length"
            )
        return [token for token in tokens if token is not None]


def postings(index: InvertedIndex, term: str) -> List[Posting]:
    """Postings of `term` in `index`; an unknown term yields an empty list."""
    return list(index.postings(term))


def term_stats(index: InvertedIndex, term: str) -> TermStats:
    """`(df, ctf)` of `term` in `index`; an unknown term yields `(0, 0)`."""
    return index.term_stats(term)


def build_index(
    documents: Iterable[Document],
    config: TokenizerConfig,
    field_policy: FieldPolicy = "title+body",
    provenance: Optional[Dict[str, Any]] = None,
) -> InvertedIndex:
    """
    Build an index over a stream of documents, assigning ordinals in stream
    order.
    """
    positions_by_term: DefaultDict[str, List[Posting]] = defaultdict(list)
    doc_table: List[DocEntry] = []
    seen: Set[str] = set()

    for ordinal, document in enumerate(documents):
        if document.doc_id in seen:
            raise DuplicateIdError(f"duplicate doc_id {document.doc_id!r}")
        seen.add(document.doc_id)

        tokens = document_tokens(document, config, field_policy)
        term_positions: DefaultDict[str, List[int]] = defaultdict(list)
        for position, token in enumerate(tokens):
            term_positions[token].append(position)

        for term, term_offsets in term_positions.items():
            posting = Posting(ordinal, len(term_offsets), tuple(term_offsets))
            positions_by_term[term].append(posting)
        doc_table.append(DocEntry(document.doc_id, len(tokens)))

    if not doc_table:
        raise EmptyInputError("cannot build an index from an empty corpus")

    dictionary = {term: tuple(positions_by_term[term]) for term in sorted(positions_by_term)}
    index = InvertedIndex(
        dictionary, tuple(doc_table), config, field_policy, dict(provenance or {})
    )
    logger.info(
        "Indexed %d documents, %d terms, %d tokens",
        index.stats.num_docs,
        len(dictionary),
        index.stats.total_terms,
    )
    return index


def _pack_string(buffer: bytearray, value: str) -> None:
    encoded = value.encode("utf-8")
    buffer += struct.pack("<I", len(encoded))
    buffer += encoded


def serialize_index(index: InvertedIndex) -> bytes:
    """Encode an index into its versioned binary representation."""
    payload = bytearray()
    metadata = {
        "tokenizer": index.tokenizer.to_dict(),
        "field_policy": index.field_policy,
        "provenance": index.provenance,
    }
    encoded_metadata = json.dumps(metadata, sort_keys=True, separators=(",", ":"))
    _pack_string(payload, encoded_metadata)

    payload += struct.pack("<IQ", index.stats.num_docs, index.stats.total_terms)
    for entry in index.doc_table:
        _pack_string(payload, entry.doc_id)
        payload += struct.pack("<I", entry.doc_length)

    payload += struct.pack("<I", len(index.dictionary))
    for term in sorted(index.dictionary):
        postings_list = index.dictionary[term]
        stats = index.term_stats(term)
        _pack_string(payload, term)
        payload += struct.pack("<IQ", stats.df, stats.ctf)
        for posting in postings_list:
            payload += struct.pack(
                f"<II{posting.term_frequency}I",
                posting.doc_ordinal,
                posting.term_frequency,
                *posting.positions,
            )

    header = _HEADER.pack(INDEX_MAGIC, INDEX_FORMAT_VERSION, len(payload))
    checksum = zlib.crc32(header + payload) & 0xFFFFFFFF
    return header + bytes(payload) + _TRAILER.pack(checksum)


def save_index(index: InvertedIndex, path: StrOrPath) -> None:
    """Write an index to a single file."""
    with open(path, "wb") as index_file:
        index_file.write(serialize_index(index))
    logger.info("Wrote index to %s", path)


class _PayloadReader:
    """Cursor over the payload that reports overruns as corruption."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        try:
            values = struct.unpack_from(fmt, self.data, self.offset)
        except struct.error as exc:
            raise IndexCorruptionError(f"index payload ends unexpectedly: {exc}") from exc
        self.offset += struct.calcsize(fmt)
        return values

    def string(self) -> str:
        (length,) = self.unpack("<I")
        end = self.offset + length
        if end > len(self.data):
            raise IndexCorruptionError("index payload ends inside a string")
        raw = self.data[self.offset : end]
        self.offset = end
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IndexCorruptionError("index string is not valid UTF-8") from exc

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.data)


def deserialize_index(data: bytes) -> InvertedIndex:
    """Decode the binary representation written by `serialize_index`."""
    if len(data) < _HEADER.size + _TRAILER.size:
        raise IndexCorruptionError("index file is too short to hold a header")

    magic, version, payload_length = _HEADER.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise IndexCorruptionError("file does not start with the index magic bytes")
    if version != INDEX_FORMAT_VERSION:
        raise IndexVersionError(
            f"index format version {version} is not supported "
            f"(expected {INDEX_FORMAT_VERSION})"
        )
    expected_size = _HEADER.size + payload_length + _TRAILER.size
    if len(data) != expected_size:
        raise IndexCorruptionError(
            f"index file holds {len(data)} bytes, header declares {expected_size}"
        )

    body = data[: _HEADER.size + payload_length]
    (stored_checksum,) = _TRAILER.unpack_from(data, len(body))
    if zlib.crc32(body) & 0xFFFFFFFF != stored_checksum:
        raise IndexChecksumError("index checksum does not match its contents")

    reader = _PayloadReader(body[_HEADER.size :])
    try:
        metadata = json.loads(reader.string())
        tokenizer = TokenizerConfig.from_dict(metadata["tokenizer"])
        field_policy = metadata["field_policy"]
        provenance = dict(metadata.get("provenance", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise IndexCorruptionError(f"index metadata is invalid: {exc}") from exc

    num_docs, total_terms = reader.unpack("<IQ")
    doc_table = []
    for _ in range(num_docs):
        doc_id = reader.string()
        (doc_length,) = reader.unpack("<I")
        doc_table.append(DocEntry(doc_id, doc_length))

    (term_count,) = reader.unpack("<I")
    dictionary: Dict[str, Tuple[Posting, ...]] = {}
    for _ in range(term_count):
        term = reader.string()
        df, ctf = reader.unpack("<IQ")
        postings_list = []
        for _ in range(df):
            doc_ordinal, term_frequency = reader.unpack("<II")
            positions = reader.unpack(f"<{term_frequency}I")
            try:
                postings_list.append(Posting(doc_ordinal, term_frequency, positions))
            except ValueError as exc:
                raise IndexCorruptionError(f"invalid posting for {term!r}: {exc}") from exc
        if sum(posting.term_frequency for posting in postings_list) != ctf:
            raise IndexCorruptionError(f"ctf of {term!r} disagrees with its postings")
        dictionary[term] = tuple(postings_list)

    if not reader.exhausted:
        raise IndexCorruptionError("index payload has trailing bytes")
    if sum(entry.doc_length for entry in doc_table) != total_terms:
        raise IndexCorruptionError("document lengths do not sum to total_terms")

    return InvertedIndex(dictionary, tuple(doc_table), tokenizer, field_policy, provenance)


def load_index(path: StrOrPath) -> InvertedIndex:
    """Read an index written by `save_index`."""
    index_path = Path(path)
    if not index_path.is_file():
        raise MissingInputError(f"index file '{index_path}' does not exist")

    index = deserialize_index(index_path.read_bytes())
    logger.info("Loaded index with %d documents from %s", index.stats.num_docs, index_path)
    return index
