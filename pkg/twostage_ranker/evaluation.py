"""
TREC-compatible qrels/run parsing and rank-quality metrics.

Metrics follow the conventions of the reference TREC evaluator: run entries
are re-sorted by score descending with ties broken by doc_id descending,
grades below 1 are not relevant, and only queries present in both the run
and the qrels are evaluated.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Set, Tuple, Union

from twostage_ranker._typing import StrOrPath, TypeAlias
from twostage_ranker.exceptions import DuplicateIdError, FormatError, MissingInputError
from twostage_ranker.runs import RankedList, TrecRun

logger = logging.getLogger(__name__)

NdcgGain: TypeAlias = Literal["linear", "exponential"]
MetricName: TypeAlias = Literal["ndcg", "map", "mrr", "p", "recall"]

METRIC_NAMES: Tuple[MetricName, ...] = ("ndcg", "map", "mrr", "p", "recall")
_METRIC_PATTERN = re.compile(r"^(ndcg|map|mrr|p|recall)(?:@(\d+))?$")
_DEFAULT_CUTOFFS: Dict[str, Optional[int]] = {
    "ndcg": 10,
    "map": None,
    "mrr": 10,
    "p": 10,
    "recall": 100,
}


@dataclass(frozen=True)
class Qrels:
    """
    Graded relevance judgments.

    Attributes:
        judgments (Mapping[str, Mapping[str, int]]): Grade per doc_id per
            query_id. Grades may be negative; metrics treat them as 0.
    """

    judgments: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def grades(self, query_id: str) -> Mapping[str, int]:
        return self.judgments.get(query_id, {})

    def relevant(self, query_id: str) -> Set[str]:
        """Documents judged with a grade of at least 1."""
        return {doc_id for doc_id, grade in self.grades(query_id).items() if grade > 0}

    def num_relevant(self, query_id: str) -> int:
        return len(self.relevant(query_id))

    def __contains__(self, query_id: object) -> bool:
        return query_id in self.judgments

    def __len__(self) -> int:
        return sum(len(grades) for grades in self.judgments.values())

    @property
    def query_ids(self) -> List[str]:
        return list(self.judgments)


@dataclass(frozen=True)
class MetricSpec:
    """A metric name with its rank cutoff, written as `name@k` (or `map`)."""

    name: MetricName
    k: Optional[int] = None

    def __post_init__(self) -> None:
        if self.name not in METRIC_NAMES:
            raise ValueError(f"'name' must be one of {METRIC_NAMES}, got {self.name!r}")
        if self.k is not None and self.k <= 0:
            raise ValueError(f"'k' must be positive, got {self.k}")

    @classmethod
    def parse(cls, spec: str) -> MetricSpec:
        """Parse strings like `ndcg@10`, `map`, `mrr@10`, `p@5`, `recall@100`."""
        match = _METRIC_PATTERN.match(spec.strip().lower())
        if match is None:
            raise ValueError(
                f"metric {spec!r} is not recognized; expected one of "
                "ndcg@k, map, mrr@k, p@k, recall@k"
            )
        name, cutoff = match.groups()
        if name == "map" and cutoff is not None:
            raise ValueError("'map' does not take a cutoff")
        return cls(name, int(cutoff) if cutoff is not None else _DEFAULT_CUTOFFS[name])

    @property
    def label(self) -> str:
        return self.name if self.k is None else f"{self.name}@{self.k}"


@dataclass(frozen=True)
class MetricReport:
    """
    Per-query and aggregate metric values.

    Attributes:
        per_query (Dict[str, Dict[str, float]]): Metric values per query id,
            in run order.
        aggregate (Dict[str, float]): Arithmetic mean of each metric over
            the evaluated queries.
        evaluated_query_count (int): Number of evaluated queries.
    """

    per_query: Dict[str, Dict[str, float]]
    aggregate: Dict[str, float]
    evaluated_query_count: int

    @property
    def metrics(self) -> List[str]:
        return list(self.aggregate)

    def value(self, metric: str, query_id: Optional[str] = None) -> float:
        if query_id is None:
            return self.aggregate[metric]
        return self.per_query[query_id][metric]


def _open_input(path: StrOrPath) -> Path:
    input_path = Path(path)
    if not input_path.is_file():
        raise MissingInputError(f"input file '{input_path}' does not exist")
    return input_path


def parse_qrels(path: StrOrPath) -> Qrels:
    """Read `query_id 0 doc_id grade` lines; the second field is ignored."""
    qrels_path = _open_input(path)
    judgments: Dict[str, Dict[str, int]] = {}
    with open(qrels_path, "r", encoding="utf-8") as qrels_file:
        for line_no, line in enumerate(qrels_file, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise FormatError(
                    f"expected 4 fields (query_id 0 doc_id grade), got {len(fields)}",
                    qrels_path,
                    line_no,
                )

            query_id, _, doc_id, raw_grade = fields
            try:
                grade = int(raw_grade)
            except ValueError as exc:
                raise FormatError(
                    f"grade {raw_grade!r} is not an integer", qrels_path, line_no
                ) from exc

            grades = judgments.setdefault(query_id, {})
            if doc_id in grades:
                raise DuplicateIdError(
                    f"duplicate judgment for ({query_id}, {doc_id})", qrels_path, line_no
                )
            grades[doc_id] = grade

    logger.debug("Loaded judgments for %d queries from %s", len(judgments), qrels_path)
    return Qrels(judgments)


def parse_run(path: StrOrPath) -> TrecRun:
    """
    Read `query_id Q0 doc_id rank score tag` lines. Declared ranks are
    ignored; every query is re-sorted by score, ties by doc_id descending.
    """
    run_path = _open_input(path)
    scores: Dict[str, Dict[str, float]] = {}
    run_tag: Optional[str] = None
    with open(run_path, "r", encoding="utf-8") as run_file:
        for line_no, line in enumerate(run_file, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 6:
                raise FormatError(
                    f"expected 6 fields (query_id Q0 doc_id rank score tag), got {len(fields)}",
                    run_path,
                    line_no,
                )

            query_id, _, doc_id, raw_rank, raw_score, tag = fields
            try:
                int(raw_rank)
                score = float(raw_score)
            except ValueError as exc:
                raise FormatError(
                    f"rank {raw_rank!r} or score {raw_score!r} is not numeric", run_path, line_no
                ) from exc
            if not math.isfinite(score):
                raise FormatError(f"score {raw_score!r} is not finite", run_path, line_no)

            query_scores = scores.setdefault(query_id, {})
            if doc_id in query_scores:
                raise DuplicateIdError(
                    f"duplicate entry for ({query_id}, {doc_id})", run_path, line_no
                )
            query_scores[doc_id] = score
            run_tag = run_tag or tag

    ranked_lists = [
        RankedList.from_scores(query_id, query_scores)
        for query_id, query_scores in scores.items()
    ]
    return TrecRun.from_lists(ranked_lists, run_tag or "run")


def _gain(grade: int, gain: NdcgGain) -> float:
    relevance = max(grade, 0)
    if gain == "linear":
        return float(relevance)
    elif gain == "exponential":
        return 2.0**relevance - 1.0
    raise ValueError("'gain' must be one of ('linear', 'exponential')")


def _query_ndcg(ranked: RankedList, grades: Mapping[str, int], k: int, gain: NdcgGain) -> float:
    ideal = sorted((_gain(grade, gain) for grade in grades.values()), reverse=True)[:k]
    idcg = sum(value / math.log2(rank + 1) for rank, value in enumerate(ideal, start=1))
    if idcg <= 0.0:
        return 0.0

    dcg = sum(
        _gain(grades.get(doc_id, 0), gain) / math.log2(rank + 1)
        for rank, doc_id in enumerate(ranked.doc_ids[:k], start=1)
    )
    return dcg / idcg


def _query_average_precision(ranked: RankedList, grades: Mapping[str, int]) -> float:
    num_relevant = sum(1 for grade in grades.values() if grade > 0)
    if num_relevant == 0:
        return 0.0

    hits = 0
    precision_sum = 0.0
    for rank, doc_id in enumerate(ranked.doc_ids, start=1):
        if grades.get(doc_id, 0) > 0:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / num_relevant


def _query_reciprocal_rank(ranked: RankedList, grades: Mapping[str, int], k: int) -> float:
    for rank, doc_id in enumerate(ranked.doc_ids[:k], start=1):
        if grades.get(doc_id, 0) > 0:
            return 1.0 / rank
    return 0.0


def _query_precision(ranked: RankedList, grades: Mapping[str, int], k: int) -> float:
    hits = sum(1 for doc_id in ranked.doc_ids[:k] if grades.get(doc_id, 0) > 0)
    return hits / k


def _query_recall(ranked: RankedList, grades: Mapping[str, int], k: int) -> float:
    num_relevant = sum(1 for grade in grades.values() if grade > 0)
    if num_relevant == 0:
        return 0.0
    hits = sum(1 for doc_id in ranked.doc_ids[:k] if grades.get(doc_id, 0) > 0)
    return hits / num_relevant


def _check_cutoff(k: int) -> None:
    if k <= 0:
        raise ValueError(f"'k' must be positive, got {k}")


def _metric_function(
    spec: MetricSpec, gain: NdcgGain
) -> Callable[[RankedList, Mapping[str, int]], float]:
    k = spec.k
    if spec.name == "ndcg":
        return lambda ranked, grades: _query_ndcg(ranked, grades, k or 10, gain)
    elif spec.name == "map":
        return _query_average_precision
    elif spec.name == "mrr":
        return lambda ranked, grades: _query_reciprocal_rank(ranked, grades, k or 10)
    elif spec.name == "p":
        return lambda ranked, grades: _query_precision(ranked, grades, k or 10)
    return lambda ranked, grades: _query_recall(ranked, grades, k or 100)


def evaluated_queries(run: TrecRun, qrels: Qrels) -> List[str]:
    """Queries of the run, in run order, that have judgments."""
    skipped = [query_id for query_id in run.query_ids if query_id not in qrels]
    if skipped:
        logger.warning("%d run queries have no judgments and are skipped", len(skipped))
    return [query_id for query_id in run.query_ids if query_id in qrels]


def evaluate(
    run: TrecRun,
    qrels: Qrels,
    metrics: Sequence[Union[str, MetricSpec]],
    gain: NdcgGain = "linear",
) -> MetricReport:
    """Compute every requested metric per query and as a mean over queries."""
    if not metrics:
        raise ValueError("'metrics' must name at least one metric")
    specs = [spec if isinstance(spec, MetricSpec) else MetricSpec.parse(spec) for spec in metrics]
    functions = {spec.label: _metric_function(spec, gain) for spec in specs}

    query_ids = evaluated_queries(run, qrels)
    per_query: Dict[str, Dict[str, float]] = {}
    for query_id in query_ids:
        ranked = run.get(query_id)
        grades = qrels.grades(query_id)
        per_query[query_id] = {
            label: function(ranked, grades) for label, function in functions.items()
        }

    aggregate: Dict[str, float] = {}
    for label in functions:
        values = [per_query[query_id][label] for query_id in query_ids]
        aggregate[label] = sum(values) / len(values) if values else 0.0
    return MetricReport(per_query, aggregate, len(query_ids))


def ndcg_at_k(run: TrecRun, qrels: Qrels, k: int = 10, gain: NdcgGain = "linear") -> MetricReport:
    _check_cutoff(k)
    return evaluate(run, qrels, [MetricSpec("ndcg", k)], gain)


def mean_average_precision(run: TrecRun, qrels: Qrels) -> MetricReport:
    return evaluate(run, qrels, [MetricSpec("map")])


def mrr_at_k(run: TrecRun, qrels: Qrels, k: int = 10) -> MetricReport:
    _check_cutoff(k)
    return evaluate(run, qrels, [MetricSpec("mrr", k)])


def precision_at_k(run: TrecRun, qrels: Qrels, k: int = 10) -> MetricReport:
    _check_cutoff(k)
    return evaluate(run, qrels, [MetricSpec("p", k)])


def recall_at_k(run: TrecRun, qrels: Qrels, k: int = 100) -> MetricReport:
    _check_cutoff(k)
    return evaluate(run, qrels, [MetricSpec("recall", k)])


def mean_metric(
    run: TrecRun, qrels: Qrels, metric: Union[str, MetricSpec], gain: NdcgGain = "linear"
) -> float:
    """Aggregate value of one metric, quiet about unjudged queries."""
    spec = metric if isinstance(metric, MetricSpec) else MetricSpec.parse(metric)
    function = _metric_function(spec, gain)
    values = [
        function(run.get(query_id), qrels.grades(query_id))
        for query_id in run.query_ids
        if query_id in qrels
    ]
    return sum(values) / len(values) if values else 0.0


def mean_ndcg(run: TrecRun, qrels: Qrels, k: int = 10, gain: NdcgGain = "linear") -> float:
    _check_cutoff(k)
    return mean_metric(run, qrels, MetricSpec("ndcg", k), gain)


def format_report(report: MetricReport) -> str:
    """Render `metric<TAB>query_id<TAB>value` rows, then `metric<TAB>all<TAB>value`."""
    lines = []
    for metric in report.metrics:
        for query_id, values in report.per_query.items():
            lines.append(f"{metric}\t{query_id}\t{values[metric]:.6f}\n")
    for metric in report.metrics:
        lines.append(f"{metric}\tall\t{report.aggregate[metric]:.6f}\n")
    return "".join(lines)


def write_report(report: MetricReport, path: StrOrPath) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as report_file:
        report_file.write(format_report(report))
    logger.info("Wrote report over %d queries to %s", report.evaluated_query_count, path)
