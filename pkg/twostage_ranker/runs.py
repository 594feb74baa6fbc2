"""Ranked lists and TREC run files shared by every stage of the pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from twostage_ranker._typing import StrOrPath, TypeAlias

logger = logging.getLogger(__name__)

RankedEntry: TypeAlias = Tuple[str, float]


def _ranking_key(entry: RankedEntry) -> Tuple[float, str]:
    doc_id, score = entry
    return score, doc_id


def rank_entries(scores: Mapping[str, float]) -> List[RankedEntry]:
    """
    Order scored documents by score descending, ties by doc_id descending,
    the order the reference TREC evaluator re-sorts runs into.
    """
    entries = ((doc_id, float(score)) for doc_id, score in scores.items())
    return sorted(entries, key=_ranking_key, reverse=True)


@dataclass(frozen=True)
class RankedList:
    """
    The ranking of one query.

    Attributes:
        query_id (str): The query being ranked.
        entries (Tuple[RankedEntry, ...]): `(doc_id, score)` pairs sorted by
            score descending, ties by doc_id descending, without duplicates.
    """

    query_id: str
    entries: Tuple[RankedEntry, ...] = ()

    def __post_init__(self) -> None:
        doc_ids = [doc_id for doc_id, _ in self.entries]
        if len(set(doc_ids)) != len(doc_ids):
            raise ValueError(f"ranked list for {self.query_id!r} repeats a doc_id")
        keys = [_ranking_key(entry) for entry in self.entries]
        if any(a < b for a, b in zip(keys, keys[1:])):
            raise ValueError(f"ranked list for {self.query_id!r} is not sorted")

    @classmethod
    def from_scores(
        cls, query_id: str, scores: Mapping[str, float], k: Optional[int] = None
    ) -> RankedList:
        """Rank a score map, keeping at most `k` entries when `k` is given."""
        if k is not None and k <= 0:
            raise ValueError(f"'k' must be positive, got {k}")
        entries = rank_entries(scores)
        if k is not None:
            entries = entries[:k]
        return cls(query_id, tuple(entries))

    @property
    def doc_ids(self) -> List[str]:
        return [doc_id for doc_id, _ in self.entries]

    def scores(self) -> Dict[str, float]:
        return dict(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class TrecRun:
    """
    Ranked lists for a set of queries, in query order.

    Attributes:
        rankings (Mapping[str, RankedList]): Ranked list per query id.
        run_tag (str): Tag written in the last column of a run file.
    """

    rankings: Mapping[str, RankedList] = field(default_factory=dict)
    run_tag: str = "run"

    def __post_init__(self) -> None:
        if not self.run_tag or any(char.isspace() for char in self.run_tag):
            raise ValueError("'run_tag' must be non-empty and contain no whitespace")
        for query_id, ranked in self.rankings.items():
            if ranked.query_id != query_id:
                raise ValueError(f"ranked list keyed {query_id!r} belongs to {ranked.query_id!r}")

    @classmethod
    def from_lists(cls, ranked_lists: Iterable[RankedList], run_tag: str = "run") -> TrecRun:
        rankings: Dict[str, RankedList] = {}
        for ranked in ranked_lists:
            if ranked.query_id in rankings:
                raise ValueError(f"query {ranked.query_id!r} appears twice in the run")
            rankings[ranked.query_id] = ranked
        return cls(rankings, run_tag)

    @property
    def query_ids(self) -> List[str]:
        return list(self.rankings)

    def get(self, query_id: str) -> RankedList:
        """The ranked list of a query, empty if the run does not hold it."""
        return self.rankings.get(query_id, RankedList(query_id))

    def __iter__(self) -> Iterator[RankedList]:
        return iter(self.rankings.values())

    def __len__(self) -> int:
        return len(self.rankings)

    def with_tag(self, run_tag: str) -> TrecRun:
        return TrecRun(dict(self.rankings), run_tag)


def format_score(score: float) -> str:
    """Shortest decimal that reads back to the same float."""
    return repr(float(score))


def format_run(run: TrecRun) -> str:
    """Render a run as `query_id Q0 doc_id rank score run_tag` lines."""
    lines = []
    for ranked in run:
        for rank, (doc_id, score) in enumerate(ranked.entries, start=1):
            lines.append(
                f"{ranked.query_id} Q0 {doc_id} {rank} {format_score(score)} {run.run_tag}\n"
            )
    return "".join(lines)


def write_run(run: TrecRun, path: StrOrPath) -> None:
    """Write a run file the reference TREC evaluator can read."""
    with open(path, "w", encoding="utf-8", newline="\n") as run_file:
        run_file.write(format_run(run))
    logger.info("Wrote run with %d queries to %s", len(run), path)
