"""
Corpus and query ingestion plus the tokenizer every other module shares.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import (
    Any,
    Dict,
    FrozenSet,
    Generator,
    Iterable,
    List,
    Literal,
    Optional,
    Set,
)

from nltk.stem import PorterStemmer

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.exceptions import (
    DuplicateIdError,
    FormatError,
    MissingInputError,
)

logger = logging.getLogger(__name__)

CorpusFormat: TypeAlias = Literal["tsv", "jsonl"]
FieldPolicy: TypeAlias = Literal["title+body", "body"]

_TOKEN_PATTERN = re.compile(r"[^\W_]+")
_WHITESPACE_PATTERN = re.compile(r"\s")
_STOPLIST_PATH = Path(__file__).parent / "resources" / "stoplist.txt"
_STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


def load_stoplist(path: StrOrPath = _STOPLIST_PATH) -> FrozenSet[str]:
    """Read a stoplist file with one word per line, ignoring blanks and `#`."""
    stoplist_path = Path(path)
    if not stoplist_path.is_file():
        raise MissingInputError(f"stoplist file '{stoplist_path}' does not exist")

    with open(stoplist_path, "r", encoding="utf-8") as stoplist_file:
        words = (line.strip() for line in stoplist_file)
        return frozenset(word for word in words if word and not word.startswith("#"))


@lru_cache(maxsize=None)
def default_stoplist() -> FrozenSet[str]:
    """The bundled English stoplist."""
    return load_stoplist(_STOPLIST_PATH)


@lru_cache(maxsize=1 << 16)
def _stem(token: str) -> str:
    return _STEMMER.stem(token, to_lowercase=False)


@dataclass(frozen=True)
class TokenizerConfig:
    """
    Normalization applied to corpus and query text.

    Attributes:
        lowercase (bool): Lowercase every token before anything else.
        remove_stopwords (bool): Drop tokens found in `stoplist`.
        stem (bool): Apply the original Porter stemmer to surviving tokens.
        stoplist (FrozenSet[str]): Words removed when `remove_stopwords` is
            set. Defaults to the bundled English stoplist.
    """

    lowercase: bool = True
    remove_stopwords: bool = True
    stem: bool = True
    stoplist: FrozenSet[str] = field(default_factory=default_stoplist)

    def __post_init__(self) -> None:
        if self.lowercase and any(word != word.lower() for word in self.stoplist):
            raise ValueError(
                "'stoplist' entries must be lowercase when 'lowercase' is enabled"
            )

    def to_dict(self) -> Dict[str, Any]:
        """A JSON-ready representation with the stoplist in sorted order."""
        return {
            "lowercase": self.lowercase,
            "remove_stopwords": self.remove_stopwords,
            "stem": self.stem,
            "stoplist": sorted(self.stoplist),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> TokenizerConfig:
        return cls(
            lowercase=bool(data["lowercase"]),
            remove_stopwords=bool(data["remove_stopwords"]),
            stem=bool(data["stem"]),
            stoplist=frozenset(data["stoplist"]),
        )


def tokenize(text: str, config: TokenizerConfig) -> List[str]:
    """
    Split text into maximal alphanumeric runs, then lowercase, remove
    stopwords and stem, in that order, for whichever steps are enabled.
    """
    tokens = _TOKEN_PATTERN.findall(text)
    if config.lowercase:
        tokens = [token.lower() for token in tokens]
    if config.remove_stopwords:
        tokens = [token for token in tokens if token not in config.stoplist]
    if config.stem:
        tokens = [_stem(token) for token in tokens]
    return tokens


@dataclass(frozen=True)
class Document:
    """
    A retrievable unit of text.

    Attributes:
        doc_id (str): Unique, non-empty identifier without whitespace.
        title (str): Optional title, may be empty.
        body (str): Document text.
    """

    doc_id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        _check_identifier(self.doc_id, "doc_id")


@dataclass(frozen=True)
class Query:
    """
    An information need identified by `query_id`.

    Attributes:
        query_id (str): Unique, non-empty identifier without whitespace.
        text (str): Raw query text.
    """

    query_id: str
    text: str

    def __post_init__(self) -> None:
        _check_identifier(self.query_id, "query_id")


def _check_identifier(value: str, name: str) -> None:
    if not value:
        raise ValueError(f"'{name}' must be non-empty")
    if _WHITESPACE_PATTERN.search(value):
        raise ValueError(f"'{name}' must not contain whitespace, got {value!r}")


def document_tokens(
    document: Document, config: TokenizerConfig, field_policy: FieldPolicy
) -> List[str]:
    """Tokens of a document under a field policy, title tokens first."""
    if field_policy == "title+body":
        return tokenize(document.title, config) + tokenize(document.body, config)
    elif field_policy == "body":
        return tokenize(document.body, config)
    raise ValueError("'field_policy' must be one of ('title+body', 'body')")


def corpus_format_for(path: StrOrPath) -> CorpusFormat:
    """Infer the corpus format from a file suffix, defaulting to TSV."""
    return "jsonl" if Path(path).suffix.lower() in {".jsonl", ".json"} else "tsv"


def _open_input(path: StrOrPath) -> Path:
    input_path = Path(path)
    if not input_path.is_file():
        raise MissingInputError(f"input file '{input_path}' does not exist")
    return input_path


def _parse_tsv_document(line: str, path: Path, line_no: int) -> Document:
    fields = line.split("\t")
    if len(fields) != 3:
        raise FormatError(
            f"expected 3 tab-separated fields (doc_id, title, body), got {len(fields)}",
            path,
            line_no,
        )
    doc_id, title, body = fields
    try:
        return Document(doc_id, title, body)
    except ValueError as exc:
        raise FormatError(str(exc), path, line_no) from exc


def _parse_jsonl_document(line: str, path: Path, line_no: int) -> Document:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, line_no) from exc

    if not isinstance(record, dict):
        raise FormatError("expected a JSON object", path, line_no)
    if "id" not in record:
        raise FormatError("record is missing the 'id' key", path, line_no)
    if "contents" not in record:
        raise FormatError("record is missing the 'contents' key", path, line_no)

    doc_id = record["id"]
    if isinstance(doc_id, int) and not isinstance(doc_id, bool):
        doc_id = str(doc_id)
    title = record.get("title") or ""
    contents = record["contents"]
    if not all(isinstance(value, str) for value in (doc_id, title, contents)):
        raise FormatError("'id', 'title' and 'contents' must be strings", path, line_no)

    try:
        return Document(doc_id, title, contents)
    except ValueError as exc:
        raise FormatError(str(exc), path, line_no) from exc


def load_corpus(
    path: StrOrPath, format: Optional[CorpusFormat] = None
) -> Generator[Document, None, None]:
    """
    Stream documents from a TSV (`doc_id<TAB>title<TAB>body`) or JSONL
    (`{"id", "title", "contents"}`) corpus file in file order.

    Only the set of seen identifiers is retained, to reject duplicates.
    Blank lines are skipped.
    """
    corpus_path = _open_input(path)
    corpus_format = format or corpus_format_for(corpus_path)
    if corpus_format == "tsv":
        parse = _parse_tsv_document
    elif corpus_format == "jsonl":
        parse = _parse_jsonl_document
    else:
        raise ValueError("'format' must be one of ('tsv', 'jsonl')")

    seen: Set[str] = set()
    with open(corpus_path, "r", encoding="utf-8") as corpus_file:
        for line_no, raw_line in enumerate(corpus_file, start=1):
            line = raw_line.rstrip("\r\n")
            if not line.strip():
                continue

            document = parse(line, corpus_path, line_no)
            if document.doc_id in seen:
                raise DuplicateIdError(
                    f"duplicate doc_id {document.doc_id!r}", corpus_path, line_no
                )
            seen.add(document.doc_id)
            yield document


def load_queries(path: StrOrPath) -> List[Query]:
    """Read a `query_id<TAB>text` file into queries, preserving file order."""
    queries_path = _open_input(path)
    queries: List[Query] = []
    seen: Set[str] = set()
    with open(queries_path, "r", encoding="utf-8") as queries_file:
        for line_no, raw_line in enumerate(queries_file, start=1):
            line = raw_line.rstrip("\r\n")
            if not line.strip():
                continue

            fields = line.split("\t")
            if len(fields) != 2:
                raise FormatError(
                    f"expected 2 tab-separated fields (query_id, text), got {len(fields)}",
                    queries_path,
                    line_no,
                )
            try:
                query = Query(*fields)
            except ValueError as exc:
                raise FormatError(str(exc), queries_path, line_no) from exc

            if query.query_id in seen:
                raise DuplicateIdError(
                    f"duplicate query_id {query.query_id!r}", queries_path, line_no
                )
            seen.add(query.query_id)
            queries.append(query)

    logger.debug("Loaded %d queries from %s", len(queries), queries_path)
    return queries


def write_corpus(
    documents: Iterable[Document], path: StrOrPath, format: CorpusFormat = "tsv"
) -> None:
    """Serialize documents in the same layout `load_corpus` reads."""
    with open(path, "w", encoding="utf-8", newline="\n") as corpus_file:
        for document in documents:
            if format == "tsv":
                if any("\t" in value or "\n" in value for value in (document.title, document.body)):
                    raise ValueError(
                        f"document {document.doc_id!r} cannot be written as TSV: "
                        "title or body contains a tab or newline"
                    )
                corpus_file.write(f"{document.doc_id}\t{document.title}\t{document.body}\n")
            else:
                record = {
                    "id": document.doc_id,
                    "title": document.title,
                    "contents": document.body,
                }
                corpus_file.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_queries(queries: Iterable[Query], path: StrOrPath) -> None:
    """Serialize queries as `query_id<TAB>text` lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as queries_file:
        for query in queries:
            queries_file.write(f"{query.query_id}\t{query.text}\n")


def tokenize_documents(
    documents: Iterable[Document], config: TokenizerConfig, field_policy: FieldPolicy
) -> Dict[str, List[str]]:
    """Token lists keyed by doc_id, as rerankers consume them."""
    return {
        document.doc_id: document_tokens(document, config, field_policy)
        for document in documents
    }


def tokenize_queries(queries: Iterable[Query], config: TokenizerConfig) -> Dict[str, List[str]]:
    return {query.query_id: tokenize(query.text, config) for query in queries}
